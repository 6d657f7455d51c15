#pragma once

//! Stiffness and load assembly for one quadrangle, done entirely in TT format
//! over the z-ordered 2^d x 2^d node grid.
//!
//! The element grid reuses the node index space: element (i, j) spans nodes
//! (i..i+1, j..j+1), so indices with i or j equal to 2^d - 1 are padding.  The
//! corner-shift matrices map element indices to corner-node indices and carry
//! zero rows for the padding, which keeps padding values of the coefficient
//! fields out of every assembled quantity.

#include <array>
#include <functional>
#include <utility>
#include <vector>

#include "qtt/errors.hpp"
#include "qtt/geometry.hpp"
#include "qtt/tensor_train.hpp"
#include "qtt/tt_cross.hpp"
#include "qtt/zorder.hpp"

namespace qtt
{
  //! one-axis element-to-node shift: entry (e, p) is 1 when node index p bounds
  //! element e on the requested side (p = e for the low side, p = e + 1 for the
  //! high side) and e is not the padding index 2^d - 1.
  inline TTMatrix shift_matrix_1d(int d, bool high_side)
  {
    if (d < 1)
      throw shape_error("shift_matrix_1d: d must be >= 1");
    // two-state bit automaton, processed from the least significant bit:
    // "open" keeps the shift unresolved, "close" resolves it, "done" copies
    MatrixXd open = MatrixXd::Zero(2, 2);
    MatrixXd close = MatrixXd::Zero(2, 2);
    const MatrixXd done = MatrixXd::Identity(2, 2);
    if (high_side)
    {
      open(1, 0) = 1.0;  // carry of the +1: element bit 1 becomes node bit 0
      close(0, 1) = 1.0; // carry lands: element bit 0 becomes node bit 1
    }
    else
    {
      open(1, 1) = 1.0;  // all-ones prefix: still the potential padding row
      close(0, 0) = 1.0; // a zero bit confirms a real element
    }
    std::vector<BlockCore> chain;
    if (d == 1)
    {
      BlockCore b(1, 1, 2, 2);
      b.block(0, 0) = close;
      chain.push_back(std::move(b));
    }
    else
    {
      BlockCore first(1, 2, 2, 2);
      first.block(0, 0) = open;
      first.block(0, 1) = close;
      chain.push_back(std::move(first));
      for (int k = 1; k + 1 < d; ++k)
      {
        BlockCore mid(2, 2, 2, 2);
        mid.block(0, 0) = open;
        mid.block(0, 1) = close;
        mid.block(1, 1) = done;
        chain.push_back(std::move(mid));
      }
      BlockCore last(2, 1, 2, 2);
      last.block(0, 0) = close;
      last.block(1, 0) = done;
      chain.push_back(std::move(last));
    }
    return tt_matrix_from_blocks(chain);
  }

  //! z-ordered 2D shift: entry (e_z, p_z) is 1 when node p is the given corner
  //! of element e; rows of padding elements are zero
  inline TTMatrix corner_shift(int d, const Corner& c)
  {
    return z_kron(shift_matrix_1d(d, c.cx > 0), shift_matrix_1d(d, c.cy > 0));
  }

  //! all four corner shifts in reference-corner order
  inline std::array<TTMatrix, 4> corner_shifts(int d)
  {
    const auto corners = reference_corners();
    return { corner_shift(d, corners[0]), corner_shift(d, corners[1]),
             corner_shift(d, corners[2]), corner_shift(d, corners[3]) };
  }

  //! indicator of indices other than 2^d - 1, as a rank-2 TT vector
  inline TTVector not_last_indicator(int d)
  {
    const std::vector<int> modes(std::size_t(d), 2);
    return add(tt_ones(modes), scale(tt_unit(modes, (index_t(1) << d) - 1), -1.0));
  }

  //! indicator of real (non-padding) elements on the z-ordered grid
  inline TTVector real_element_mask(int d)
  {
    return z_kron(not_last_indicator(d), not_last_indicator(d));
  }

  //! the field c00 + c10*i + c01*j + c11*i*j over the z-ordered grid
  inline TTVector bilinear_grid_field(int d, double c00, double c10, double c01, double c11)
  {
    TTVector out = z_linear_field(d, c00, c10, c01);
    if (c11 != 0.0)
      out = round(add(out, scale(z_kron(tt_range(d), tt_range(d)), c11)), 0.0);
    return out;
  }

  //! element-center coefficient fields derived from the affine Jacobian data
  struct ElementFields
  {
    int d = 1;
    TTVector real_mask;  // 1 on real elements, 0 on padding
    TTVector det;        // center Jacobian determinant; padding carries the base value
    TTVector reciprocal; // approximate 1/det with the same padding fill
    std::array<std::array<TTVector, 2>, 2> jac; // affine fields of the Jacobian entries
  };

  //! build the coefficient fields; tol controls the reciprocal accuracy.
  //! Padding entries of the determinant are replaced by its base value before
  //! inversion, so only real elements need a positive Jacobian.
  inline ElementFields element_fields(const JacobianField& jf, double tol,
                                      const ReciprocalOptions& ropts = {})
  {
    const int d = jf.d;
    ElementFields ef;
    ef.d = d;
    ef.real_mask = real_element_mask(d);
    const TTVector det_affine = z_linear_field(d, jf.det_base, jf.det_di, jf.det_dj);
    const TTVector pad = add(tt_ones(det_affine.mode_sizes()), scale(ef.real_mask, -1.0));
    ef.det = round(add(hadamard(ef.real_mask, det_affine), scale(pad, jf.det_base)), 0.0);
    ef.reciprocal = elementwise_reciprocal(ef.det, tol, ropts);
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c)
        ef.jac[r][c] = z_linear_field(d, jf.base(r, c), jf.di(r, c), jf.dj(r, c));
    return ef;
  }

  namespace detail
  {
    //! entries of adj(J) adj(J)^T as fields: the metric coefficients of the
    //! one-point quadrature rule before division by det(J)
    struct MetricFields
    {
      TTVector n11, n22, n12;
    };

    inline MetricFields metric_fields(const ElementFields& ef, double tol)
    {
      const auto& j = ef.jac;
      MetricFields m;
      m.n11 = round(add(hadamard(j[1][1], j[1][1]), hadamard(j[0][1], j[0][1])), tol);
      m.n22 = round(add(hadamard(j[0][0], j[0][0]), hadamard(j[1][0], j[1][0])), tol);
      m.n12 = scale(round(add(hadamard(j[1][1], j[1][0]), hadamard(j[0][1], j[0][0])), tol), -1.0);
      return m;
    }
  }

  //! stiffness of the bilinear FEM discretization with one-point quadrature,
  //! assembled as sum over corner pairs of V_c1^T diag(K_c1c2) V_c2
  inline TTMatrix subdomain_stiffness(const ElementFields& ef, double tol)
  {
    const double inner = tol / 16.0;
    const int d = ef.d;
    const auto v = corner_shifts(d);
    std::array<TTMatrix, 4> vt;
    for (int c = 0; c < 4; ++c)
      vt[c] = transpose(v[c]);
    const detail::MetricFields m = detail::metric_fields(ef, inner);
    const auto grad = shape_gradients(0.0, 0.0);
    TTMatrix acc;
    bool first = true;
    for (int c1 = 0; c1 < 4; ++c1)
      for (int c2 = 0; c2 < 4; ++c2)
      {
        const double gx1 = grad[c1](0), gy1 = grad[c1](1);
        const double gx2 = grad[c2](0), gy2 = grad[c2](1);
        TTVector p = add(add(scale(m.n11, gx1 * gx2), scale(m.n22, gy1 * gy2)),
                         scale(m.n12, gx1 * gy2 + gy1 * gx2));
        TTVector k = round(scale(hadamard(p, ef.reciprocal), 4.0), inner);
        TTMatrix term = round(matmul(diag_matrix(k), v[c2]), inner);
        term = round(matmul(vt[c1], term), inner);
        acc = first ? std::move(term) : round(add(acc, term), inner);
        first = false;
      }
    return round(acc, tol / 4.0);
  }

  //! mass matrix of the same discretization (weight det/4 for every corner pair)
  inline TTMatrix subdomain_mass(const ElementFields& ef, double tol)
  {
    const double inner = tol / 16.0;
    const auto v = corner_shifts(ef.d);
    const TTMatrix w = diag_matrix(scale(ef.det, 0.25));
    TTMatrix acc;
    bool first = true;
    for (int c1 = 0; c1 < 4; ++c1)
      for (int c2 = 0; c2 < 4; ++c2)
      {
        TTMatrix term = round(matmul(transpose(v[c1]), round(matmul(w, v[c2]), inner)), inner);
        acc = first ? std::move(term) : round(add(acc, term), inner);
        first = false;
      }
    return round(acc, tol / 4.0);
  }

  //! load vector for a source density given at element centers: each element
  //! sends det * f to its four corner nodes
  inline TTVector load_vector(const ElementFields& ef, const TTVector& rhs_field, double tol)
  {
    const double inner = tol / 16.0;
    const auto v = corner_shifts(ef.d);
    const TTVector w = round(hadamard(ef.det, rhs_field), inner);
    TTVector acc;
    for (int c = 0; c < 4; ++c)
    {
      TTVector term = matvec(transpose(v[c]), w);
      acc = c == 0 ? std::move(term) : round(add(acc, term), inner);
    }
    return round(acc, tol / 4.0);
  }

  // ---------------------------------------------------------------------------
  // source densities sampled at element centers

  inline TTVector rhs_constant(int d, double value)
  {
    return tt_constant(std::vector<int>(std::size_t(d), 4), value);
  }

  //! world coordinates of the element centers as a pair of TT fields
  inline std::pair<TTVector, TTVector> center_coordinate_fields(const GridCoefficients& g)
  {
    // center of element (i,j) is the grid point (i + 1/2, j + 1/2)
    const Vector2d c00 = g.q0 + 0.5 * (g.qx + g.qy) + 0.25 * g.qxy;
    const Vector2d c10 = g.qx + 0.5 * g.qxy;
    const Vector2d c01 = g.qy + 0.5 * g.qxy;
    const Vector2d c11 = g.qxy;
    return { bilinear_grid_field(g.d, c00(0), c10(0), c01(0), c11(0)),
             bilinear_grid_field(g.d, c00(1), c10(1), c01(1), c11(1)) };
  }

  //! the density a + bx*x + cy*y evaluated at element centers
  inline TTVector rhs_linear(const GridCoefficients& g, double a, double bx, double cy)
  {
    const Vector2d c00 = g.q0 + 0.5 * (g.qx + g.qy) + 0.25 * g.qxy;
    const Vector2d c10 = g.qx + 0.5 * g.qxy;
    const Vector2d c01 = g.qy + 0.5 * g.qxy;
    const Vector2d c11 = g.qxy;
    return bilinear_grid_field(g.d, a + bx * c00(0) + cy * c00(1), bx * c10(0) + cy * c10(1),
                               bx * c01(0) + cy * c01(1), bx * c11(0) + cy * c11(1));
  }

  //! arbitrary density sampled at element centers: dense TT-SVD under the
  //! guard, cross interpolation above it.  Padding centers sit one mesh step
  //! outside the quadrangle, so f must be evaluable there.
  inline TTVector rhs_sampled(const GridCoefficients& g,
                              const std::function<double(const Vector2d&)>& f, double tol,
                              index_t dense_guard = index_t(1) << 16, const CrossOptions& copts = {})
  {
    const int d = g.d;
    const index_t total = index_t(1) << (2 * d);
    const std::vector<int> modes(std::size_t(d), 4);
    auto at_z = [&](index_t z) {
      const auto [i, j] = z_split(z, d);
      return f(grid_point(g, double(i) + 0.5, double(j) + 0.5));
    };
    if (total <= dense_guard)
    {
      VectorXd dense(total);
      for (index_t z = 0; z < total; ++z)
        dense(z) = at_z(z);
      return from_dense(dense, modes, tol);
    }
    auto fd = [&](const std::vector<int>& digits) {
      index_t z = 0;
      for (int k = d - 1; k >= 0; --k)
        z = 4 * z + digits[std::size_t(k)];
      return at_z(z);
    };
    return cross_interpolate(fd, modes, tol, copts);
  }

  // ---------------------------------------------------------------------------
  // nodal source sampling

  inline constexpr int kMaxSourceDegree = 4;

  //! source density descriptor: a constant, a bivariate polynomial of total
  //! degree <= kMaxSourceDegree, or an arbitrary callback (dense path only)
  struct SourceSpec
  {
    enum class Kind
    {
      constant,
      polynomial,
      callback
    };

    //! one monomial coeff * x^px * y^py
    struct Term
    {
      int px = 0;
      int py = 0;
      double coeff = 0.0;
    };

    Kind kind = Kind::constant;
    double value = 1.0;
    std::vector<Term> terms;
    std::function<double(const Vector2d&)> fn;

    static SourceSpec constant_source(double v)
    {
      SourceSpec s;
      s.kind = Kind::constant;
      s.value = v;
      return s;
    }

    static SourceSpec polynomial_source(std::vector<Term> t)
    {
      SourceSpec s;
      s.kind = Kind::polynomial;
      s.terms = std::move(t);
      return s;
    }

    static SourceSpec callback_source(std::function<double(const Vector2d&)> f)
    {
      SourceSpec s;
      s.kind = Kind::callback;
      s.fn = std::move(f);
      return s;
    }
  };

  //! Nodal source samples in z-order: result[z_index(i,j)] = f(node x_ij, y_ij).
  //! Constants and polynomials are built exactly from the coordinate fields
  //! (rank bounded independently of d); callbacks sample densely under the guard.
  inline TTVector sample_rhs(const GridCoefficients& g, const SourceSpec& f, double tol,
                             index_t dense_guard = index_t(1) << 16)
  {
    const std::vector<int> modes(std::size_t(g.d), 4);
    switch (f.kind)
    {
      case SourceSpec::Kind::constant:
        return tt_constant(modes, f.value);
      case SourceSpec::Kind::polynomial:
      {
        std::array<TTVector, kMaxSourceDegree + 1> xp, yp;
        xp[0] = tt_ones(modes);
        yp[0] = tt_ones(modes);
        xp[1] = bilinear_grid_field(g.d, g.q0(0), g.qx(0), g.qy(0), g.qxy(0));
        yp[1] = bilinear_grid_field(g.d, g.q0(1), g.qx(1), g.qy(1), g.qxy(1));
        for (int k = 2; k <= kMaxSourceDegree; ++k)
        {
          xp[std::size_t(k)] = round(hadamard(xp[std::size_t(k) - 1], xp[1]), 0.0);
          yp[std::size_t(k)] = round(hadamard(yp[std::size_t(k) - 1], yp[1]), 0.0);
        }
        TTVector acc = tt_zeros(modes);
        for (const auto& t : f.terms)
        {
          if (t.px < 0 || t.py < 0 || t.px + t.py > kMaxSourceDegree)
            throw config_error("sample_rhs: polynomial term exceeds total degree "
                               + std::to_string(kMaxSourceDegree));
          const TTVector mono = round(hadamard(xp[std::size_t(t.px)], yp[std::size_t(t.py)]), 0.0);
          acc = round(add(acc, scale(mono, t.coeff)), 0.0);
        }
        return acc;
      }
      case SourceSpec::Kind::callback:
      {
        const index_t total = index_t(1) << (2 * g.d);
        if (total > dense_guard)
          throw guard_error("sample_rhs: callback sampling needs " + std::to_string(total)
                            + " evaluations, guard is " + std::to_string(dense_guard));
        if (!f.fn)
          throw config_error("sample_rhs: callback source holds no function");
        VectorXd dense(total);
        for (index_t z = 0; z < total; ++z)
        {
          const auto [i, j] = z_split(z, g.d);
          dense(z) = f.fn(grid_point(g, double(i), double(j)));
        }
        return from_dense(dense, modes, tol);
      }
    }
    throw config_error("sample_rhs: unknown source kind");
  }

  //! One-point-rule force from nodal samples: per element, det times the mean
  //! of the four corner samples, scattered back to the corner nodes.
  inline TTVector force_from_nodal(const ElementFields& ef, const TTVector& fbar, double tol)
  {
    const double inner = tol / 16.0;
    const auto v = corner_shifts(ef.d);
    TTVector centers;
    for (int c = 0; c < 4; ++c)
    {
      TTVector term = matvec(v[std::size_t(c)], fbar);
      centers = c == 0 ? std::move(term) : round(add(centers, term), inner);
    }
    return load_vector(ef, scale(centers, 0.25), tol);
  }

  // ---------------------------------------------------------------------------
  // one-call subdomain assembly

  //! raw (pre-boundary, pre-coupling) operator and load of one quadrangle
  struct SubdomainSystem
  {
    int d = 1;
    GridCoefficients grid;
    JacobianField jacobian;
    ElementFields fields;
    TTMatrix stiffness;
    TTVector load;
  };

  inline SubdomainSystem build_subdomain_system(const Quadrangle& q, int d,
                                                const SourceSpec& source, double tol)
  {
    SubdomainSystem s;
    s.d = d;
    s.grid = grid_coefficients(q, d);
    s.jacobian = jacobian_parts(q, d);
    s.fields = element_fields(s.jacobian, tol);
    s.stiffness = subdomain_stiffness(s.fields, tol);
    s.load = force_from_nodal(s.fields, sample_rhs(s.grid, source, tol), tol);
    return s;
  }
}
