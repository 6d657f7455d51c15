#include <qtt/assembly.hpp>

#include "support/dense_fem.hpp"

#include <catch_amalgamated.hpp>

#include <random>

using namespace qtt;
using Eigen::Vector2d;

namespace
{
  Quadrangle unit_square()
  {
    return Quadrangle{ { Vector2d(0, 0), Vector2d(1, 0), Vector2d(1, 1), Vector2d(0, 1) } };
  }

  Quadrangle skewed_quad()
  {
    return Quadrangle{ { Vector2d(0.1, -0.05), Vector2d(1.2, 0.1), Vector2d(0.9, 1.1),
                         Vector2d(-0.1, 0.8) } };
  }

  double shoelace_area(const Quadrangle& q)
  {
    double a = 0;
    for (int k = 0; k < 4; ++k)
    {
      const Vector2d& p = q.v[std::size_t(k)];
      const Vector2d& r = q.v[std::size_t((k + 1) % 4)];
      a += p.x() * r.y() - r.x() * p.y();
    }
    return 0.5 * a;
  }

  //! library matrix permuted back to canonical node order for dense comparison
  MatrixXd canonical_dense(const TTMatrix& m, int d)
  {
    const auto perm = z_permutation(d);
    const MatrixXd zd = to_dense(m);
    MatrixXd out(zd.rows(), zd.cols());
    for (index_t r = 0; r < zd.rows(); ++r)
      for (index_t c = 0; c < zd.cols(); ++c)
        out(perm[std::size_t(r)], perm[std::size_t(c)]) = zd(r, c);
    return out;
  }

  VectorXd canonical_dense(const TTVector& v, int d)
  {
    const auto perm = z_permutation(d);
    const VectorXd zd = to_dense(v);
    VectorXd out(zd.size());
    for (index_t r = 0; r < zd.size(); ++r)
      out[perm[std::size_t(r)]] = zd[r];
    return out;
  }
}

TEST_CASE("one-axis shift matrices have the expected sparse pattern")
{
  for (int d = 1; d <= 4; ++d)
  {
    const int n = 1 << d;
    const MatrixXd w0 = to_dense(shift_matrix_1d(d, false));
    const MatrixXd w1 = to_dense(shift_matrix_1d(d, true));
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
      {
        const double e0 = (r < n - 1 && c == r) ? 1.0 : 0.0;
        const double e1 = (r < n - 1 && c == r + 1) ? 1.0 : 0.0;
        REQUIRE(w0(r, c) == e0);
        REQUIRE(w1(r, c) == e1);
      }
  }
}

TEST_CASE("corner shifts select element corner nodes with zero padding rows")
{
  const auto corners = reference_corners();
  for (int d = 1; d <= 3; ++d)
  {
    const int n = 1 << d;
    for (int c = 0; c < 4; ++c)
    {
      const int ox = (corners[std::size_t(c)].cx + 1) / 2;
      const int oy = (corners[std::size_t(c)].cy + 1) / 2;
      const MatrixXd v = to_dense(corner_shift(d, corners[std::size_t(c)]));
      for (index_t ej = 0; ej < n; ++ej)
        for (index_t ei = 0; ei < n; ++ei)
          for (index_t nj = 0; nj < n; ++nj)
            for (index_t ni = 0; ni < n; ++ni)
            {
              const bool real = ei < n - 1 && ej < n - 1;
              const double expect =
                  (real && ni == ei + ox && nj == ej + oy) ? 1.0 : 0.0;
              REQUIRE(v(z_index(ei, ej, d), z_index(ni, nj, d)) == expect);
            }
    }
  }
}

TEST_CASE("element masks flag the real element block")
{
  for (int d = 1; d <= 4; ++d)
  {
    const int n = 1 << d;
    const VectorXd one_axis = to_dense(not_last_indicator(d));
    for (index_t i = 0; i < n; ++i)
      REQUIRE(one_axis[i] == (i < n - 1 ? 1.0 : 0.0));
    const VectorXd mask = to_dense(real_element_mask(d));
    for (index_t j = 0; j < n; ++j)
      for (index_t i = 0; i < n; ++i)
        REQUIRE(mask[z_index(i, j, d)] == ((i < n - 1 && j < n - 1) ? 1.0 : 0.0));
  }
}

TEST_CASE("bilinear grid fields evaluate the affine-plus-cross form")
{
  const int d = 3;
  const int n = 1 << d;
  const VectorXd f = to_dense(bilinear_grid_field(d, 0.7, -0.3, 0.2, 0.05));
  for (index_t j = 0; j < n; ++j)
    for (index_t i = 0; i < n; ++i)
      REQUIRE(f[z_index(i, j, d)] ==
              Catch::Approx(0.7 - 0.3 * double(i) + 0.2 * double(j) + 0.05 * double(i) * double(j))
                  .margin(1e-11));
}

TEST_CASE("element fields carry masked determinants and reciprocals")
{
  const Quadrangle q = skewed_quad();
  const int d = 3;
  const int n = 1 << d;
  const JacobianField jf = jacobian_parts(q, d);
  const ElementFields ef = element_fields(jf, 1e-12);

  const VectorXd det = to_dense(ef.det);
  const VectorXd rec = to_dense(ef.reciprocal);
  for (index_t j = 0; j < n; ++j)
    for (index_t i = 0; i < n; ++i)
    {
      const index_t z = z_index(i, j, d);
      if (i < n - 1 && j < n - 1)
      {
        const double expect = jf.det_base + double(i) * jf.det_di + double(j) * jf.det_dj;
        REQUIRE(det[z] == Catch::Approx(expect).margin(1e-12));
        REQUIRE(rec[z] == Catch::Approx(1.0 / expect).epsilon(1e-9));
      }
      else
      {
        REQUIRE(det[z] == Catch::Approx(jf.det_base).margin(1e-12));
      }
    }
}

TEST_CASE("stiffness matches the dense element-loop assembly")
{
  for (const Quadrangle& q : { unit_square(), skewed_quad() })
    for (int d = 2; d <= 3; ++d)
    {
      const double tol = 1e-10;
      const ElementFields ef = element_fields(jacobian_parts(q, d), tol);
      const MatrixXd lib = canonical_dense(subdomain_stiffness(ef, tol), d);
      const MatrixXd ref = testing::dense_subdomain(q, d).stiffness;
      REQUIRE((lib - ref).norm() <= 10 * tol * ref.norm());
    }
}

TEST_CASE("unit square stiffness has the classic one-point values")
{
  const int d = 3;
  const double tol = 1e-12;
  const ElementFields ef = element_fields(jacobian_parts(unit_square(), d), tol);
  const MatrixXd k = canonical_dense(subdomain_stiffness(ef, tol), d);
  const int n = 1 << d;
  // one corner element contributes 1/2 to its corner node
  REQUIRE(k(0, 0) == Catch::Approx(0.5).margin(1e-10));
  // interior node sees four elements
  const index_t mid = 3 + index_t(n) * 3;
  REQUIRE(k(mid, mid) == Catch::Approx(2.0).margin(1e-10));
  // row sums of a stiffness matrix vanish
  REQUIRE(k.rowwise().sum().cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("mass matches the dense element-loop assembly")
{
  for (const Quadrangle& q : { unit_square(), skewed_quad() })
  {
    const int d = 3;
    const double tol = 1e-11;
    const ElementFields ef = element_fields(jacobian_parts(q, d), tol);
    const MatrixXd lib = canonical_dense(subdomain_mass(ef, tol), d);
    const MatrixXd ref = testing::dense_subdomain(q, d).mass;
    REQUIRE((lib - ref).norm() <= 10 * tol * ref.norm());
  }
}

TEST_CASE("nodal force of a constant source integrates to the domain area")
{
  for (const Quadrangle& q : { unit_square(), skewed_quad() })
  {
    const int d = 3;
    const double tol = 1e-11;
    const ElementFields ef = element_fields(jacobian_parts(q, d), tol);
    const TTVector ones = tt_ones(std::vector<int>(std::size_t(d), 4));
    const TTVector force = force_from_nodal(ef, ones, tol);
    REQUIRE(dot(force, ones) == Catch::Approx(shoelace_area(q)).epsilon(1e-9));

    const TTVector zero_force = force_from_nodal(ef, tt_zeros(ones.mode_sizes()), tol);
    REQUIRE(norm(zero_force) <= 1e-12);
  }
}

TEST_CASE("unit square interior force entries equal the cell area")
{
  const int d = 3;
  const int n = 1 << d;
  const double h = 1.0 / double(n - 1);
  const double tol = 1e-12;
  const ElementFields ef = element_fields(jacobian_parts(unit_square(), d), tol);
  const TTVector ones = tt_ones(std::vector<int>(std::size_t(d), 4));
  const VectorXd f = canonical_dense(force_from_nodal(ef, ones, tol), d);
  for (int j = 1; j + 1 < n; ++j)
    for (int i = 1; i + 1 < n; ++i)
      REQUIRE(f[i + index_t(n) * j] == Catch::Approx(h * h).epsilon(1e-9));
  // corner node touches a single element
  REQUIRE(f[0] == Catch::Approx(h * h / 4).epsilon(1e-9));
}

TEST_CASE("sample_rhs handles constants exactly at rank one")
{
  const GridCoefficients g = grid_coefficients(skewed_quad(), 4);
  const TTVector f = sample_rhs(g, SourceSpec::constant_source(2.5), 1e-12);
  REQUIRE(f.max_rank() == 1);
  REQUIRE((to_dense(f) - VectorXd::Constant(256, 2.5)).norm() == 0.0);
}

TEST_CASE("sample_rhs of the x coordinate on the unit square is the scaled ramp")
{
  const int d = 4;
  const int n = 1 << d;
  const GridCoefficients g = grid_coefficients(unit_square(), d);
  SourceSpec f = SourceSpec::polynomial_source({ { 1, 0, 1.0 } });
  const TTVector tt = sample_rhs(g, f, 1e-12);
  REQUIRE(tt.max_rank() <= 2);
  const VectorXd dense = to_dense(tt);
  for (index_t j = 0; j < n; ++j)
    for (index_t i = 0; i < n; ++i)
      REQUIRE(dense[z_index(i, j, d)] == Catch::Approx(double(i) / double(n - 1)).margin(1e-12));
}

TEST_CASE("sample_rhs matches nodal samples for mixed polynomials")
{
  const int d = 3;
  const int n = 1 << d;
  const Quadrangle q = skewed_quad();
  const GridCoefficients g = grid_coefficients(q, d);
  // f(x, y) = 1 + x^2 y - 2 y^2
  SourceSpec f = SourceSpec::polynomial_source({ { 0, 0, 1.0 }, { 2, 1, 1.0 }, { 0, 2, -2.0 } });
  const VectorXd dense = to_dense(sample_rhs(g, f, 1e-12));
  for (index_t j = 0; j < n; ++j)
    for (index_t i = 0; i < n; ++i)
    {
      const Vector2d p = grid_point(g, double(i), double(j));
      const double expect = 1.0 + p.x() * p.x() * p.y() - 2.0 * p.y() * p.y();
      REQUIRE(dense[z_index(i, j, d)] == Catch::Approx(expect).margin(1e-10));
    }
}

TEST_CASE("sample_rhs rejects unsupported sources")
{
  const GridCoefficients g = grid_coefficients(unit_square(), 3);
  REQUIRE_THROWS_AS(sample_rhs(g, SourceSpec::polynomial_source({ { 3, 2, 1.0 } }), 1e-10),
                    config_error);
  SourceSpec null_cb;
  null_cb.kind = SourceSpec::Kind::callback;
  REQUIRE_THROWS_AS(sample_rhs(g, null_cb, 1e-10), config_error);
}

TEST_CASE("sample_rhs callback path samples nodes and respects the guard")
{
  const int d = 3;
  const int n = 1 << d;
  const GridCoefficients g = grid_coefficients(skewed_quad(), d);
  SourceSpec cb = SourceSpec::callback_source(
      [](const Vector2d& p) { return std::sin(p.x()) + p.y(); });
  const VectorXd dense = to_dense(sample_rhs(g, cb, 1e-12));
  for (index_t j = 0; j < n; ++j)
    for (index_t i = 0; i < n; ++i)
    {
      const Vector2d p = grid_point(g, double(i), double(j));
      REQUIRE(dense[z_index(i, j, d)] ==
              Catch::Approx(std::sin(p.x()) + p.y()).margin(1e-10));
    }
  REQUIRE_THROWS_AS(sample_rhs(g, cb, 1e-12, 16), guard_error);
}

TEST_CASE("build_subdomain_system ties the pipeline together")
{
  const Quadrangle q = skewed_quad();
  const int d = 3;
  const double tol = 1e-10;
  const SubdomainSystem sys = build_subdomain_system(q, d, SourceSpec::constant_source(1.0), tol);

  const testing::DenseSystem ref = testing::dense_subdomain(q, d);
  REQUIRE((canonical_dense(sys.stiffness, d) - ref.stiffness).norm() <=
          10 * tol * ref.stiffness.norm());
  const VectorXd ref_load = ref.mass * VectorXd::Ones(ref.mass.rows());
  REQUIRE((canonical_dense(sys.load, d) - ref_load).norm() <= 10 * tol * ref_load.norm());
}
