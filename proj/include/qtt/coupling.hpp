#pragma once

//! Coupling of per-quadrangle systems into one global operator.
//!
//! Subdomains meet along whole sides (matching node-for-node) or at single
//! vertices.  Matching is enforced weakly: every interface contributes
//! penalty-like blocks built from rank-1 extraction matrices, scaled by the
//! mean diagonal of the participating operators so the coupling rows keep the
//! magnitude of the FEM rows.  Dirichlet sides are applied afterwards by
//! masking rows and reinserting unit diagonal entries.

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "qtt/assembly.hpp"
#include "qtt/errors.hpp"
#include "qtt/geometry.hpp"
#include "qtt/tensor_train.hpp"
#include "qtt/zorder.hpp"

namespace qtt
{
  //! sides of the logical square, named in world orientation of the reference
  //! square; traversal follows the counterclockwise vertex order
  enum class Side
  {
    bottom = 0, // v0 -> v1, nodes (s, 0)
    right = 1,  // v1 -> v2, nodes (2^d-1, s)
    top = 2,    // v2 -> v3, nodes (2^d-1-s, 2^d-1)
    left = 3,   // v3 -> v0, nodes (0, 2^d-1-s)
  };

  //! corners of the logical square, in the vertex order of Quadrangle
  enum class Vertex
  {
    lb = 0,
    rb = 1,
    rt = 2,
    lt = 3,
  };

  inline const char* side_name(Side s)
  {
    switch (s)
    {
      case Side::bottom: return "bottom";
      case Side::right: return "right";
      case Side::top: return "top";
      case Side::left: return "left";
    }
    return "?";
  }

  inline Side parse_side(const std::string& s)
  {
    if (s == "bottom") return Side::bottom;
    if (s == "right") return Side::right;
    if (s == "top") return Side::top;
    if (s == "left") return Side::left;
    throw config_error("unknown side name: " + s);
  }

  inline const char* vertex_name(Vertex v)
  {
    switch (v)
    {
      case Vertex::lb: return "lb";
      case Vertex::rb: return "rb";
      case Vertex::rt: return "rt";
      case Vertex::lt: return "lt";
    }
    return "?";
  }

  inline Vertex parse_vertex(const std::string& s)
  {
    if (s == "lb") return Vertex::lb;
    if (s == "rb") return Vertex::rb;
    if (s == "rt") return Vertex::rt;
    if (s == "lt") return Vertex::lt;
    throw config_error("unknown vertex name: " + s);
  }

  // ---------------------------------------------------------------------------
  // extraction matrices

  //! side extraction matrix, shape 2^d x 4^d: row s picks the s-th node along
  //! the side in traversal order.  Rank 1 with identical cores.
  inline TTMatrix psi_side(int d, Side s)
  {
    if (d < 1)
      throw shape_error("psi_side: d must be >= 1");
    // per-bit map from the side parameter bit r to the z digit (i_k + 2*j_k)
    int col_of_r0 = 0, col_of_r1 = 0;
    switch (s)
    {
      case Side::bottom: col_of_r0 = 0; col_of_r1 = 1; break; // i = s, j = 0
      case Side::right: col_of_r0 = 1; col_of_r1 = 3; break;  // i = 1..1, j = s
      case Side::top: col_of_r0 = 3; col_of_r1 = 2; break;    // i = ~s, j = 1..1
      case Side::left: col_of_r0 = 2; col_of_r1 = 0; break;   // i = 0, j = ~s
    }
    std::vector<Core3> cs;
    for (int k = 0; k < d; ++k)
    {
      Core3 c(1, 2 * 4, 1);
      c.at(0, 0 + 2 * col_of_r0, 0) = 1.0;
      c.at(0, 1 + 2 * col_of_r1, 0) = 1.0;
      cs.push_back(std::move(c));
    }
    return TTMatrix(std::move(cs), std::vector<int>(std::size_t(d), 2),
                    std::vector<int>(std::size_t(d), 4));
  }

  //! vertex extraction matrix, shape 1 x 4^d: the single row picks the corner node
  inline TTMatrix psi_vertex(int d, Vertex v)
  {
    if (d < 1)
      throw shape_error("psi_vertex: d must be >= 1");
    int col = 0;
    switch (v)
    {
      case Vertex::lb: col = 0; break;
      case Vertex::rb: col = 1; break;
      case Vertex::rt: col = 3; break;
      case Vertex::lt: col = 2; break;
    }
    std::vector<Core3> cs;
    for (int k = 0; k < d; ++k)
    {
      Core3 c(1, 4, 1);
      c.at(0, col, 0) = 1.0;
      cs.push_back(std::move(c));
    }
    return TTMatrix(std::move(cs), std::vector<int>(std::size_t(d), 1),
                    std::vector<int>(std::size_t(d), 4));
  }

  //! reverse the traversal order: swap the two row slices of every core
  //! (the row index maps to its bitwise complement)
  inline TTMatrix swap_rows(const TTMatrix& psi)
  {
    TTMatrix out = psi;
    for (std::size_t k = 0; k < out.cores.size(); ++k)
    {
      if (out.row_modes[k] != 2)
        throw shape_error("swap_rows: binary row modes required");
      Core3& c = out.cores[k];
      const int nc = out.col_modes[k];
      for (int j = 0; j < nc; ++j)
        for (int al = 0; al < c.r0; ++al)
          for (int be = 0; be < c.r1; ++be)
            std::swap(c.at(al, 0 + 2 * j, be), c.at(al, 1 + 2 * j, be));
    }
    return out;
  }

  // ---------------------------------------------------------------------------
  // interface description

  struct InterfaceSpec
  {
    int a = 0;
    int b = 0;
    bool vertex = false;
    Side side_a = Side::bottom;
    Side side_b = Side::bottom;
    Vertex vertex_a = Vertex::lb;
    Vertex vertex_b = Vertex::lb;
    bool reversed = false; // side traversals run in opposite world directions
  };

  struct DomainConfig
  {
    std::vector<Quadrangle> quads;
    std::vector<InterfaceSpec> interfaces;
    std::vector<std::vector<Side>> dirichlet; // per quad
  };

  //! world endpoints of a side in traversal order
  inline std::pair<Vector2d, Vector2d> side_endpoints(const Quadrangle& q, Side s)
  {
    switch (s)
    {
      case Side::bottom: return { q.v[0], q.v[1] };
      case Side::right: return { q.v[1], q.v[2] };
      case Side::top: return { q.v[2], q.v[3] };
      case Side::left: return { q.v[3], q.v[0] };
    }
    throw shape_error("side_endpoints: bad side");
  }

  inline Vector2d vertex_point(const Quadrangle& q, Vertex v)
  {
    return q.v[std::size_t(int(v))];
  }

  //! check that the declared topology matches the world geometry
  inline void validate_config(const DomainConfig& cfg, double geo_tol = 1e-9)
  {
    const int q = int(cfg.quads.size());
    if (q == 0)
      throw config_error("no quadrangles");
    if (cfg.dirichlet.size() != cfg.quads.size())
      throw config_error("dirichlet list must have one entry per quadrangle");
    for (const Quadrangle& quad : cfg.quads)
      validate_quadrangle(quad);

    std::vector<std::array<bool, 4>> on_interface(std::size_t(q), { false, false, false, false });
    for (const InterfaceSpec& f : cfg.interfaces)
    {
      if (f.a < 0 || f.a >= q || f.b < 0 || f.b >= q)
        throw config_error("interface subdomain index out of range");
      if (f.a == f.b)
        throw config_error("interface must join two distinct subdomains");
      if (f.vertex)
      {
        const Vector2d pa = vertex_point(cfg.quads[std::size_t(f.a)], f.vertex_a);
        const Vector2d pb = vertex_point(cfg.quads[std::size_t(f.b)], f.vertex_b);
        if ((pa - pb).norm() > geo_tol)
          throw config_error("vertex interface points do not coincide");
      }
      else
      {
        const auto ea = side_endpoints(cfg.quads[std::size_t(f.a)], f.side_a);
        auto eb = side_endpoints(cfg.quads[std::size_t(f.b)], f.side_b);
        if (f.reversed)
          std::swap(eb.first, eb.second);
        if ((ea.first - eb.first).norm() > geo_tol || (ea.second - eb.second).norm() > geo_tol)
          throw config_error("side interface endpoints do not match (check the reversed flag)");
        if (on_interface[std::size_t(f.a)][std::size_t(int(f.side_a))] ||
            on_interface[std::size_t(f.b)][std::size_t(int(f.side_b))])
          throw config_error("a side may appear in at most one interface");
        on_interface[std::size_t(f.a)][std::size_t(int(f.side_a))] = true;
        on_interface[std::size_t(f.b)][std::size_t(int(f.side_b))] = true;
      }
    }

    std::vector<std::array<bool, 4>> on_dirichlet(std::size_t(q), { false, false, false, false });
    bool any_dirichlet = false;
    for (std::size_t m = 0; m < cfg.dirichlet.size(); ++m)
      for (Side s : cfg.dirichlet[m])
      {
        any_dirichlet = true;
        on_dirichlet[m][std::size_t(int(s))] = true;
        if (on_interface[m][std::size_t(int(s))])
          throw config_error("side " + std::string(side_name(s)) + " of subdomain " +
                             std::to_string(m) + " is both an interface and a Dirichlet side");
      }
    if (!any_dirichlet)
      throw config_error("at least one Dirichlet side is required");
    // the model problem has no natural boundary, so every side must be accounted for
    for (int m = 0; m < q; ++m)
      for (int s = 0; s < 4; ++s)
        if (!on_interface[std::size_t(m)][std::size_t(s)] && !on_dirichlet[std::size_t(m)][std::size_t(s)])
          throw config_error("side " + std::string(side_name(Side(s))) + " of subdomain " + std::to_string(m) +
                             " is neither an interface nor a Dirichlet side");
  }

  // ---------------------------------------------------------------------------
  // boundary masks

  //! one-axis node mask: ones, with the requested end entries zeroed
  inline TTVector axis_mask(int d, bool zero_low, bool zero_high)
  {
    const std::vector<int> modes(std::size_t(d), 2);
    TTVector m = tt_ones(modes);
    if (zero_low)
      m = add(m, scale(tt_unit(modes, 0), -1.0));
    if (zero_high)
      m = add(m, scale(tt_unit(modes, (index_t(1) << d) - 1), -1.0));
    return m;
  }

  //! node mask over the z-ordered grid: 0 on Dirichlet sides, 1 elsewhere
  inline TTVector boundary_mask(int d, const std::vector<Side>& dirichlet_sides)
  {
    bool left = false, right = false, bottom = false, top = false;
    for (Side s : dirichlet_sides)
    {
      left = left || s == Side::left;
      right = right || s == Side::right;
      bottom = bottom || s == Side::bottom;
      top = top || s == Side::top;
    }
    return z_kron(axis_mask(d, left, right), axis_mask(d, bottom, top));
  }

  //! replace masked-out rows by unit diagonal rows
  inline TTMatrix apply_dirichlet(const TTMatrix& a, const TTVector& mask, double tol)
  {
    const TTVector pad = add(tt_ones(mask.mode_sizes()), scale(mask, -1.0));
    return round(add(matmul(diag_matrix(mask), a), diag_matrix(pad)), tol);
  }

  //! zero masked-out rows (off-diagonal blocks and right-hand sides)
  inline TTMatrix mask_rows(const TTMatrix& a, const TTVector& mask, double tol)
  {
    return round(matmul(diag_matrix(mask), a), tol);
  }

  inline TTVector mask_entries(const TTVector& v, const TTVector& mask, double tol)
  {
    return round(hadamard(mask, v), tol);
  }

  // ---------------------------------------------------------------------------
  // global assembly

  //! mean diagonal entry, used to scale coupling rows like FEM rows
  inline double gamma_estimate(const TTMatrix& a)
  {
    const TTVector diag = diagonal_of(a);
    return dot(diag, tt_ones(diag.mode_sizes())) / double(a.rows());
  }

  struct CoupledSystem
  {
    int q = 1;
    int d = 1;
    TTMatrix op;
    TTVector rhs;
    std::vector<TTVector> masks;
    std::vector<double> gamma;
  };

  namespace detail
  {
    //! single-core matrix selecting global block (m, p)
    inline TTMatrix block_selector(int q, int m, int p)
    {
      Core3 c(1, q * q, 1);
      c.at(0, m + q * p, 0) = 1.0;
      return TTMatrix({ c }, { q }, { q });
    }
  }

  //! couple raw per-subdomain systems into the global block operator.
  //! tol is the final rounding accuracy; intermediates run at tol/16.
  inline CoupledSystem assemble_coupled(const DomainConfig& cfg, const std::vector<TTMatrix>& a_raw,
                                        const std::vector<TTVector>& f_raw, int d, double tol)
  {
    validate_config(cfg);
    const int q = int(cfg.quads.size());
    if (int(a_raw.size()) != q || int(f_raw.size()) != q)
      throw shape_error("assemble_coupled: one operator and one load per quadrangle required");
    const double inner = tol / 16.0;

    CoupledSystem sys;
    sys.q = q;
    sys.d = d;
    sys.gamma.resize(std::size_t(q));
    sys.masks.resize(std::size_t(q));
    for (int m = 0; m < q; ++m)
    {
      sys.gamma[std::size_t(m)] = gamma_estimate(a_raw[std::size_t(m)]);
      sys.masks[std::size_t(m)] = boundary_mask(d, cfg.dirichlet[std::size_t(m)]);
    }

    // accumulate the coupling matrices per ordered subdomain pair
    std::map<std::pair<int, int>, TTMatrix> pi;
    auto add_pi = [&](int m, int p, const TTMatrix& t) {
      auto it = pi.find({ m, p });
      if (it == pi.end())
        pi.emplace(std::make_pair(m, p), t);
      else
        it->second = round(add(it->second, t), 0.0);
    };
    for (const InterfaceSpec& f : cfg.interfaces)
    {
      TTMatrix pab;
      if (f.vertex)
        pab = matmul(transpose(psi_vertex(d, f.vertex_a)), psi_vertex(d, f.vertex_b));
      else
      {
        TTMatrix pb = psi_side(d, f.side_b);
        if (f.reversed)
          pb = swap_rows(pb);
        pab = matmul(transpose(psi_side(d, f.side_a)), pb);
      }
      add_pi(f.a, f.b, pab);
      add_pi(f.b, f.a, transpose(pab));
    }

    // penalty weight of a pair: the mean of the two diagonal means.  The same
    // weight must appear in the diagonal projector term and the off-diagonal
    // block, so that coupled rows cancel exactly on matching solutions.
    auto pair_gamma = [&](int m, int p) {
      return 0.5 * (sys.gamma[std::size_t(m)] + sys.gamma[std::size_t(p)]);
    };

    // diagonal blocks: A_m plus the weighted penalty projectors Pi_mp Pi_pm
    std::vector<TTMatrix> diag_blocks(static_cast<std::size_t>(q));
    for (int m = 0; m < q; ++m)
    {
      TTMatrix block = a_raw[std::size_t(m)];
      for (const auto& [key, p_mp] : pi)
      {
        if (key.first != m)
          continue;
        const TTMatrix proj = matmul(p_mp, pi.at({ key.second, key.first }));
        block = round(add(block, scale(proj, pair_gamma(key.first, key.second))), inner);
      }
      diag_blocks[std::size_t(m)] = apply_dirichlet(block, sys.masks[std::size_t(m)], inner);
    }

    // off-diagonal blocks and coupled right-hand sides
    std::vector<TTVector> rhs_blocks(static_cast<std::size_t>(q));
    for (int m = 0; m < q; ++m)
      rhs_blocks[std::size_t(m)] = f_raw[std::size_t(m)];
    std::map<std::pair<int, int>, TTMatrix> off_blocks;
    for (const auto& [key, p_mp] : pi)
    {
      const auto [m, p] = key;
      const double gmp = pair_gamma(m, p);
      TTMatrix block = round(add(matmul(p_mp, a_raw[std::size_t(p)]), scale(p_mp, -gmp)), inner);
      off_blocks.emplace(key, mask_rows(block, sys.masks[std::size_t(m)], inner));
      rhs_blocks[std::size_t(m)] =
          round(add(rhs_blocks[std::size_t(m)], matvec(p_mp, f_raw[std::size_t(p)])), inner);
    }
    for (int m = 0; m < q; ++m)
      rhs_blocks[std::size_t(m)] = mask_entries(rhs_blocks[std::size_t(m)], sys.masks[std::size_t(m)], inner);

    // global block operator; the leading core owns the subdomain index, which
    // is the fastest digit: global flat index = m + q * z
    TTMatrix op;
    bool first = true;
    for (int m = 0; m < q; ++m)
    {
      const TTMatrix term = kron(detail::block_selector(q, m, m), diag_blocks[std::size_t(m)]);
      op = first ? term : round(add(op, term), inner);
      first = false;
    }
    for (const auto& [key, block] : off_blocks)
      op = round(add(op, kron(detail::block_selector(q, key.first, key.second), block)), inner);

    TTVector rhs;
    for (int m = 0; m < q; ++m)
    {
      const TTVector term = kron(tt_unit({ q }, m), rhs_blocks[std::size_t(m)]);
      rhs = m == 0 ? term : add(rhs, term);
    }

    sys.op = round(op, tol);
    sys.rhs = round(rhs, tol);
    return sys;
  }

  //! per-subdomain parts of a global solution vector (contract the leading core)
  inline std::vector<TTVector> split_solution(const TTVector& u)
  {
    if (u.dims() < 2)
      throw shape_error("split_solution: leading subdomain core plus grid cores required");
    const Core3& lead = u.cores.front();
    std::vector<TTVector> parts;
    for (int m = 0; m < lead.n; ++m)
    {
      const MatrixXd w = lead.slice(m); // 1 x r1
      std::vector<Core3> cs(u.cores.begin() + 1, u.cores.end());
      const Core3& c1 = cs.front();
      Core3 merged(1, c1.n, c1.r1);
      for (int i = 0; i < c1.n; ++i)
        merged.set_slice(i, w * c1.slice(i));
      cs.front() = std::move(merged);
      parts.emplace_back(std::move(cs));
    }
    return parts;
  }
}
