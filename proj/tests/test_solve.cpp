#include <qtt/solve.hpp>

#include <qtt/assembly.hpp>
#include <qtt/coupling.hpp>

#include "support/dense_fem.hpp"
#include "support/test_utils.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace qtt;
using Eigen::Vector2d;

namespace
{
  //! one quadrangle, Dirichlet on every side
  DomainConfig boxed(const Quadrangle& q)
  {
    DomainConfig cfg;
    cfg.quads.push_back(q);
    cfg.dirichlet = { { Side::bottom, Side::right, Side::top, Side::left } };
    return cfg;
  }

  CoupledSystem coupled_poisson(const DomainConfig& cfg, int d, double tol)
  {
    std::vector<TTMatrix> a_raw;
    std::vector<TTVector> f_raw;
    for (const Quadrangle& q : cfg.quads)
    {
      const SubdomainSystem sys = build_subdomain_system(q, d, SourceSpec::constant_source(1.0), tol);
      a_raw.push_back(sys.stiffness);
      f_raw.push_back(sys.load);
    }
    return assemble_coupled(cfg, a_raw, f_raw, d, tol);
  }

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

TEST_CASE("dense_solve solves small systems and verifies its result")
{
  MatrixXd b(2, 2);
  b << 2, 0, 0, 4;
  VectorXd g(2);
  g << 2, 8;
  const VectorXd u = dense_solve(b, g);
  REQUIRE(u[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(u[1] == Catch::Approx(2.0).margin(1e-12));

  MatrixXd sing(2, 2);
  sing << 1, 1, 1, 1;
  REQUIRE_THROWS_AS(dense_solve(sing, g), singularity_error);

  VectorXd g3(3);
  g3 << 1, 2, 3;
  REQUIRE_THROWS_AS(dense_solve(b, g3), shape_error);
}

TEST_CASE("dense_solve on tensor operands enforces the size guard")
{
  const std::vector<int> small(std::size_t(2), 4);
  const TTMatrix eye = tt_identity(small);
  const TTVector g = tt_ones(small);
  const VectorXd u = dense_solve(eye, g);
  REQUIRE((u - VectorXd::Ones(16)).norm() <= 1e-12);

  const std::vector<int> big(std::size_t(7), 4);
  REQUIRE_THROWS_AS(dense_solve(tt_identity(big), tt_ones(big)), guard_error);
}

TEST_CASE("local operator apply agrees with the assembled local matrix")
{
  std::mt19937_64 rng(5);
  std::normal_distribution<double> dist(0.0, 1.0);
  const auto fill = [&](double& v) { v = dist(rng); };

  const int rl = 3, n = 4, rr = 5, rb0 = 2, rb1 = 3;
  Core3 bk(rb0, n * n, rb1);
  for (double& v : bk.a)
    fill(v);
  detail::EnvBlocks al(rb0, MatrixXd(rl, rl)), ar(rb1, MatrixXd(rr, rr));
  for (MatrixXd& m : al)
    for (int c = 0; c < m.size(); ++c)
      fill(m.data()[c]);
  for (MatrixXd& m : ar)
    for (int c = 0; c < m.size(); ++c)
      fill(m.data()[c]);

  const detail::LocalOp op{ &bk, &al, &ar, n, rl, rr };
  const MatrixXd h = detail::local_matrix(op);
  VectorXd y(op.size());
  for (int c = 0; c < y.size(); ++c)
    fill(y.data()[c]);
  REQUIRE((op.apply(y) - h * y).norm() <= 1e-12 * (h * y).norm());
}

TEST_CASE("identity systems converge in one sweep to the right-hand side")
{
  std::mt19937_64 rng(11);
  const std::vector<int> modes{ 4, 4, 4 };
  const TTVector g = qtt::testing::random_tt_vector(rng, modes, 3);
  SolveOptions opts;
  opts.tol = 1e-10;
  const SolveReport rep = tt_solve(tt_identity(modes), g, opts);
  REQUIRE(rep.converged);
  REQUIRE(rep.sweeps == 1);
  REQUIRE(rep.residual <= opts.tol);
  REQUIRE(norm(add(rep.u, scale(g, -1.0))) <= 1e-9 * norm(g));
}

TEST_CASE("tensor solve matches the dense oracle on a boxed Poisson problem")
{
  const Quadrangle q{ { Vector2d(0.1, -0.05), Vector2d(1.2, 0.1), Vector2d(0.9, 1.1),
                        Vector2d(-0.1, 0.8) } };
  const CoupledSystem sys = coupled_poisson(boxed(q), 3, 1e-12);

  SolveOptions opts;
  opts.tol = 1e-10;
  const SolveReport rep = tt_solve(sys.op, sys.rhs, opts);
  REQUIRE(rep.converged);
  REQUIRE(rep.residual <= opts.tol);

  const VectorXd ud = dense_solve(sys.op, sys.rhs);
  const VectorXd ut = to_dense(rep.u);
  REQUIRE((ut - ud).norm() <= 10 * opts.tol * ud.norm());
}

TEST_CASE("reported residual agrees with an independent recomputation")
{
  const CoupledSystem sys = coupled_poisson(two_squares(), 3, 1e-12);
  SolveOptions opts;
  opts.tol = 1e-9;
  const SolveReport rep = tt_solve(sys.op, sys.rhs, opts);
  REQUIRE(rep.converged);
  REQUIRE(std::abs(rep.residual - relative_residual(sys.op, rep.u, sys.rhs)) <= 1e-12);
}

TEST_CASE("starved iteration budgets raise an error carrying the best iterate")
{
  const CoupledSystem sys = coupled_poisson(two_squares(), 3, 1e-12);
  SolveOptions opts;
  opts.tol = 1e-13;
  opts.max_sweeps = 1;
  opts.max_rank = 2;
  bool thrown = false;
  try
  {
    tt_solve(sys.op, sys.rhs, opts);
  }
  catch (const solver_convergence_error& e)
  {
    thrown = true;
    const SolveReport& best = e.best();
    REQUIRE(best.u.dims() == sys.rhs.dims());
    REQUIRE(std::isfinite(best.residual));
    REQUIRE(best.residual > opts.tol);
    REQUIRE_FALSE(best.converged);
  }
  REQUIRE(thrown);
}

TEST_CASE("equal seeds give bit-identical solutions")
{
  const CoupledSystem sys = coupled_poisson(two_squares(), 3, 1e-12);
  SolveOptions opts;
  opts.tol = 1e-9;
  opts.seed = 42;
  const SolveReport a = tt_solve(sys.op, sys.rhs, opts);
  const SolveReport b = tt_solve(sys.op, sys.rhs, opts);
  REQUIRE((to_dense(a.u) - to_dense(b.u)).norm() == 0.0);
  REQUIRE(a.residual == b.residual);
  REQUIRE(a.sweeps == b.sweeps);
}

TEST_CASE("quadratic energy sums the per-subdomain bilinear forms")
{
  const std::vector<int> modes{ 4, 4 };
  const std::vector<TTMatrix> a(2, tt_identity(modes));
  const std::vector<TTVector> u(2, tt_ones(modes));
  REQUIRE(energy_quadratic(a, u) == Catch::Approx(32.0).margin(1e-12));
  REQUIRE_THROWS_AS(energy_quadratic(a, { tt_ones(modes) }), shape_error);
}

TEST_CASE("richardson extrapolation recovers the model limit and order")
{
  std::vector<double> energies;
  for (int d = 3; d <= 6; ++d)
    energies.push_back(7.0 + 3.0 * std::pow(4.0, -d));
  const RichardsonResult r = richardson(energies);
  REQUIRE(r.e_star == Catch::Approx(7.0).margin(1e-12));
  REQUIRE(r.observed_order == Catch::Approx(2.0).margin(1e-10));

  REQUIRE_THROWS_AS(richardson({ 1.0 }), shape_error);
  REQUIRE_THROWS_AS(richardson({}), shape_error);

  const RichardsonResult flat = richardson({ 5.0, 5.0, 5.0 });
  REQUIRE(flat.e_star == Catch::Approx(5.0).margin(1e-14));
  REQUIRE(std::isnan(flat.observed_order));
}

TEST_CASE("two-square energies approach the union energy")
{
  const DomainConfig cfg = two_squares();
  const int d = 3;
  const double tol = 1e-12;
  std::vector<TTMatrix> a_raw;
  std::vector<TTVector> f_raw;
  for (const Quadrangle& q : cfg.quads)
  {
    const SubdomainSystem s = build_subdomain_system(q, d, SourceSpec::constant_source(1.0), tol);
    a_raw.push_back(s.stiffness);
    f_raw.push_back(s.load);
  }
  const CoupledSystem sys = assemble_coupled(cfg, a_raw, f_raw, d, tol);
  SolveOptions opts;
  opts.tol = 1e-10;
  const SolveReport rep = tt_solve(sys.op, sys.rhs, opts);
  const double e = energy_quadratic(a_raw, split_solution(rep.u));

  const qtt::testing::UnionSolution ref =
      qtt::testing::dense_union_solve(cfg, d, [](const Vector2d&) { return 1.0; });
  REQUIRE(e == Catch::Approx(ref.energy).epsilon(1e-7));
}
