#include <qtt/coupling.hpp>

#include <qtt/assembly.hpp>

#include "support/dense_fem.hpp"
#include "support/test_utils.hpp"

#include <catch_amalgamated.hpp>

#include <random>

using namespace qtt;
using Eigen::Vector2d;

namespace
{
  //! lattice coordinates of the s-th node along a side traversal
  std::pair<index_t, index_t> side_node(Side s, index_t t, int d)
  {
    const index_t n = index_t(1) << d;
    switch (s)
    {
      case Side::bottom: return { t, 0 };
      case Side::right: return { n - 1, t };
      case Side::top: return { n - 1 - t, n - 1 };
      default: return { 0, n - 1 - t };
    }
  }

  //! two unit squares side by side, glued along x = 1
  DomainConfig two_squares()
  {
    DomainConfig cfg;
    cfg.quads.push_back(
        Quadrangle{ { Vector2d(0, 0), Vector2d(1, 0), Vector2d(1, 1), Vector2d(0, 1) } });
    cfg.quads.push_back(
        Quadrangle{ { Vector2d(1, 0), Vector2d(2, 0), Vector2d(2, 1), Vector2d(1, 1) } });
    InterfaceSpec f;
    f.a = 0;
    f.b = 1;
    f.vertex = false;
    f.side_a = Side::right;
    f.side_b = Side::left;
    f.reversed = true;
    cfg.interfaces.push_back(f);
    cfg.dirichlet = { { Side::bottom, Side::top, Side::left },
                      { Side::bottom, Side::right, Side::top } };
    return cfg;
  }
}

TEST_CASE("side selectors pick the traversal nodes")
{
  for (int d = 1; d <= 4; ++d)
  {
    const index_t n = index_t(1) << d;
    for (Side s : { Side::bottom, Side::right, Side::top, Side::left })
    {
      const MatrixXd psi = to_dense(psi_side(d, s));
      REQUIRE(psi.rows() == n);
      REQUIRE(psi.cols() == n * n);
      MatrixXd expect = MatrixXd::Zero(n, n * n);
      for (index_t t = 0; t < n; ++t)
      {
        const auto [i, j] = side_node(s, t, d);
        expect(t, z_index(i, j, d)) = 1.0;
      }
      REQUIRE((psi - expect).norm() == 0.0);
    }
  }
}

TEST_CASE("vertex selectors pick single corner nodes")
{
  for (int d = 1; d <= 4; ++d)
  {
    const index_t n = index_t(1) << d;
    const std::pair<Vertex, std::pair<index_t, index_t>> cases[] = {
      { Vertex::lb, { 0, 0 } },
      { Vertex::rb, { n - 1, 0 } },
      { Vertex::rt, { n - 1, n - 1 } },
      { Vertex::lt, { 0, n - 1 } },
    };
    for (const auto& [v, ij] : cases)
    {
      const MatrixXd psi = to_dense(psi_vertex(d, v));
      REQUIRE(psi.rows() == 1);
      for (index_t z = 0; z < n * n; ++z)
        REQUIRE(psi(0, z) == (z == z_index(ij.first, ij.second, d) ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("swap_rows reverses the traversal order")
{
  for (int d = 1; d <= 4; ++d)
  {
    const index_t n = index_t(1) << d;
    const MatrixXd psi = to_dense(psi_side(d, Side::right));
    const MatrixXd rev = to_dense(swap_rows(psi_side(d, Side::right)));
    for (index_t t = 0; t < n; ++t)
      REQUIRE((rev.row(t) - psi.row(n - 1 - t)).norm() == 0.0);
  }
}

TEST_CASE("side and vertex names round trip")
{
  for (Side s : { Side::bottom, Side::right, Side::top, Side::left })
    REQUIRE(parse_side(side_name(s)) == s);
  for (Vertex v : { Vertex::lb, Vertex::rb, Vertex::rt, Vertex::lt })
    REQUIRE(parse_vertex(vertex_name(v)) == v);
  REQUIRE_THROWS_AS(parse_side("north"), config_error);
  REQUIRE_THROWS_AS(parse_vertex("center"), config_error);
}

TEST_CASE("boundary masks zero exactly the requested sides")
{
  const int d = 3;
  const index_t n = index_t(1) << d;
  const VectorXd mask = to_dense(boundary_mask(d, { Side::left, Side::top }));
  for (index_t j = 0; j < n; ++j)
    for (index_t i = 0; i < n; ++i)
    {
      const bool off = i == 0 || j == n - 1;
      REQUIRE(mask[z_index(i, j, d)] == (off ? 0.0 : 1.0));
    }
}

TEST_CASE("dirichlet application keeps masked rows as identity rows")
{
  std::mt19937_64 rng(3);
  const int d = 2;
  const std::vector<int> modes(std::size_t(d), 4);
  const TTMatrix a = testing::random_tt_matrix(rng, modes, modes, 2);
  const TTVector mask = boundary_mask(d, { Side::bottom });
  const MatrixXd ad = to_dense(a);
  const VectorXd md = to_dense(mask);

  const MatrixXd fixed = to_dense(apply_dirichlet(a, mask, 1e-13));
  const MatrixXd zeroed = to_dense(mask_rows(a, mask, 1e-13));
  for (index_t r = 0; r < ad.rows(); ++r)
    for (index_t c = 0; c < ad.cols(); ++c)
    {
      const double keep = md[r] * ad(r, c) + (md[r] == 0.0 && r == c ? 1.0 : 0.0);
      REQUIRE(fixed(r, c) == Catch::Approx(keep).margin(1e-12));
      REQUIRE(zeroed(r, c) == Catch::Approx(md[r] * ad(r, c)).margin(1e-12));
    }

  const TTVector v = testing::random_tt_vector(rng, modes, 2);
  REQUIRE((to_dense(mask_entries(v, mask, 1e-13)) - md.cwiseProduct(to_dense(v))).norm() <= 1e-12);
}

TEST_CASE("gamma_estimate is the mean diagonal entry")
{
  std::mt19937_64 rng(5);
  const std::vector<int> modes{ 4, 4 };
  const TTMatrix a = testing::random_tt_matrix(rng, modes, modes, 2);
  REQUIRE(gamma_estimate(a) ==
          Catch::Approx(to_dense(a).diagonal().mean()).margin(1e-12));
}

TEST_CASE("validate_config accepts the glued squares")
{
  REQUIRE_NOTHROW(validate_config(two_squares()));
}

TEST_CASE("validate_config rejects broken topologies")
{
  {
    DomainConfig cfg = two_squares();
    cfg.interfaces[0].b = 2;
    REQUIRE_THROWS_AS(validate_config(cfg), config_error);
  }
  {
    DomainConfig cfg = two_squares();
    cfg.interfaces[0].b = 0;
    REQUIRE_THROWS_AS(validate_config(cfg), config_error);
  }
  {
    // forgetting the reversed flag breaks endpoint matching
    DomainConfig cfg = two_squares();
    cfg.interfaces[0].reversed = false;
    REQUIRE_THROWS_AS(validate_config(cfg), config_error);
  }
  {
    // same side claimed twice
    DomainConfig cfg = two_squares();
    cfg.interfaces.push_back(cfg.interfaces[0]);
    REQUIRE_THROWS_AS(validate_config(cfg), config_error);
  }
  {
    // interface side also flagged Dirichlet
    DomainConfig cfg = two_squares();
    cfg.dirichlet[0].push_back(Side::right);
    REQUIRE_THROWS_AS(validate_config(cfg), config_error);
  }
  {
    // uncovered side
    DomainConfig cfg = two_squares();
    cfg.dirichlet[0] = { Side::bottom, Side::left };
    REQUIRE_THROWS_AS(validate_config(cfg), config_error);
  }
  {
    // no Dirichlet side anywhere
    DomainConfig cfg = two_squares();
    cfg.dirichlet[0].clear();
    cfg.dirichlet[1].clear();
    REQUIRE_THROWS_AS(validate_config(cfg), config_error);
  }
  {
    // vertex interface on non-coincident corners
    DomainConfig cfg = two_squares();
    InterfaceSpec f;
    f.a = 0;
    f.b = 1;
    f.vertex = true;
    f.vertex_a = Vertex::lb;
    f.vertex_b = Vertex::rt;
    cfg.interfaces.push_back(f);
    REQUIRE_THROWS_AS(validate_config(cfg), config_error);
  }
}

TEST_CASE("split_solution separates the leading block index")
{
  std::mt19937_64 rng(7);
  const std::vector<int> modes{ 3, 4, 4 };
  const TTVector u = testing::random_tt_vector(rng, modes, 2);
  const VectorXd ud = to_dense(u);
  const auto parts = split_solution(u);
  REQUIRE(parts.size() == 3);
  for (int m = 0; m < 3; ++m)
  {
    const VectorXd pd = to_dense(parts[std::size_t(m)]);
    REQUIRE(pd.size() == 16);
    for (index_t z = 0; z < 16; ++z)
      REQUIRE(pd[z] == Catch::Approx(ud[m + 3 * z]).margin(1e-12));
  }
}

TEST_CASE("coupled system reproduces the union-mesh solution")
{
  const DomainConfig cfg = two_squares();
  for (int d = 2; d <= 3; ++d)
  {
    const double tol = 1e-12;
    std::vector<TTMatrix> a_raw;
    std::vector<TTVector> f_raw;
    for (const Quadrangle& q : cfg.quads)
    {
      const SubdomainSystem sys = build_subdomain_system(q, d, SourceSpec::constant_source(1.0), tol);
      a_raw.push_back(sys.stiffness);
      f_raw.push_back(sys.load);
    }
    const CoupledSystem sys = assemble_coupled(cfg, a_raw, f_raw, d, tol);

    const index_t rows = sys.op.rows();
    REQUIRE(rows == 2 * (index_t(1) << (2 * d)));
    const MatrixXd opd = to_dense(sys.op);
    const VectorXd rhsd = to_dense(sys.rhs);
    const VectorXd u = opd.partialPivLu().solve(rhsd);
    REQUIRE((opd * u - rhsd).norm() <= 1e-10 * rhsd.norm());

    const testing::UnionSolution ref =
        testing::dense_union_solve(cfg, d, [](const Vector2d&) { return 1.0; });

    const auto perm = z_permutation(d);
    const double scale = ref.per_quad[0].cwiseAbs().maxCoeff();
    for (int m = 0; m < 2; ++m)
      for (index_t z = 0; z < (index_t(1) << (2 * d)); ++z)
      {
        const double lib = u[m + 2 * z];
        const double want = ref.per_quad[std::size_t(m)][perm[std::size_t(z)]];
        REQUIRE(lib == Catch::Approx(want).margin(1e-8 * scale));
      }
  }
}
