#pragma once

//! Linear solution of QTT systems.
//!
//! Two routes: a guarded dense direct solve used as an oracle, and tt_solve,
//! an alternating one-site scheme.  tt_solve keeps the iterate in mixed
//! canonical form, solves the projected local system at each core (dense
//! factorization when small, GMRES otherwise), enriches bonds with leading
//! directions of the local residual on the left-to-right pass, and truncates
//! by SVD on the right-to-left pass.  The reported residual is always
//! recomputed from B, g, u in exact TT arithmetic, never trusted from the
//! iteration.  Also provides the discrete energy functional and Richardson
//! extrapolation used by the convergence experiments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qtt/errors.hpp"
#include "qtt/tensor_train.hpp"

namespace qtt
{
  //! dense_solve refuses systems with more rows than this by default (3 * 4^6)
  inline constexpr index_t kDenseSolveGuard = 3 * (index_t(1) << 12);

  //! Direct dense solve with a backward-error check on the factorization.
  inline VectorXd dense_solve(const MatrixXd& b, const VectorXd& g)
  {
    if (b.rows() != b.cols() || b.rows() != g.size())
      throw shape_error("dense_solve: matrix must be square and match the right-hand side");
    Eigen::PartialPivLU<MatrixXd> lu(b);
    VectorXd u = lu.solve(g);
    if (!u.allFinite())
      throw singularity_error("dense_solve: non-finite solution indicates a singular matrix");
    const double scale = std::max(b.norm() * u.norm() + g.norm(), std::numeric_limits<double>::min());
    const double resid = (b * u - g).norm();
    if (!(resid <= 1e-10 * scale))
      throw singularity_error("dense_solve: relative backward error " + std::to_string(resid / scale)
                              + " indicates a (near-)singular matrix");
    return u;
  }

  inline VectorXd dense_solve(const TTMatrix& b, const TTVector& g, index_t guard = kDenseSolveGuard)
  {
    const index_t n = b.rows();
    if (n > guard)
      throw guard_error("dense_solve: " + std::to_string(n) + " rows exceeds guard " + std::to_string(guard));
    return dense_solve(to_dense(b, n * n), to_dense(g, n));
  }

  struct SolveOptions
  {
    double tol = 1e-8;          // target relative residual |Bu - g| / |g|
    int max_sweeps = 50;
    int max_rank = 128;
    int kick_rank = 4;          // residual directions added per bond on each left-to-right pass
    std::uint64_t seed = 0x2545F4914F6CDD1Dull;
    int direct_cap = 4200;      // local systems up to this size use a dense factorization
    int gmres_max = 200;        // iteration cap for the larger local solves
    double trunc_factor = 0.1;  // initial truncation tolerance as a fraction of tol
    std::ostream* trace = nullptr;  // when set, receives one diagnostic line per sweep
  };

  struct SolveReport
  {
    TTVector u;
    double residual = std::numeric_limits<double>::quiet_NaN();  // |Bu - g| / |g|, recomputed from B, g, u
    int sweeps = 0;
    double erank_B = 0.0;
    double erank_g = 0.0;
    double erank_u = 0.0;
    double energy = std::numeric_limits<double>::quiet_NaN();  // filled by the experiment layer
    bool converged = false;
  };

  //! sweep budget exhausted before reaching the tolerance; carries the best iterate seen
  class solver_convergence_error : public convergence_error
  {
  public:
    solver_convergence_error(const std::string& what, SolveReport best)
      : convergence_error(what), best_(std::move(best))
    {
    }

    const SolveReport& best() const noexcept { return best_; }

  private:
    SolveReport best_;
  };

  //! relative residual |Bu - g| / |g| in exact TT arithmetic
  inline double relative_residual(const TTMatrix& b, const TTVector& u, const TTVector& g)
  {
    const double gn = norm(g);
    const TTVector r = add(g, scale(matvec(b, u), -1.0));
    return gn == 0.0 ? norm(r) : norm(r) / gn;
  }

  namespace detail
  {
    //! operator environment at a bond: one (rU x rU) block per operator rank index
    using EnvBlocks = std::vector<MatrixXd>;

    inline EnvBlocks unit_env() { return { MatrixXd::Ones(1, 1) }; }

    //! absorb solution core u (test and trial side) and operator core bk from the left
    inline EnvBlocks push_left_op(const EnvBlocks& al, const Core3& u, const Core3& bk)
    {
      const int n = u.n;
      if (bk.n != n * n || int(al.size()) != bk.r0)
        throw shape_error("push_left_op: core shapes do not match the environment");
      std::vector<MatrixXd> p(std::size_t(n) * bk.r0);
      for (int beta = 0; beta < bk.r0; ++beta)
        for (int i = 0; i < n; ++i)
          p[std::size_t(i) + std::size_t(n) * beta] = u.slice(i).transpose() * al[std::size_t(beta)];
      EnvBlocks out(std::size_t(bk.r1));
      for (int bp = 0; bp < bk.r1; ++bp)
      {
        MatrixXd acc = MatrixXd::Zero(u.r1, u.r1);
        for (int j = 0; j < n; ++j)
        {
          MatrixXd q = MatrixXd::Zero(u.r1, u.r0);
          for (int beta = 0; beta < bk.r0; ++beta)
            for (int i = 0; i < n; ++i)
            {
              const double v = bk.at(beta, i + n * j, bp);
              if (v != 0.0)
                q += v * p[std::size_t(i) + std::size_t(n) * beta];
            }
          acc.noalias() += q * u.slice(j);
        }
        out[std::size_t(bp)] = std::move(acc);
      }
      return out;
    }

    //! absorb solution core u and operator core bk from the right
    inline EnvBlocks push_right_op(const EnvBlocks& ar, const Core3& u, const Core3& bk)
    {
      const int n = u.n;
      if (bk.n != n * n || int(ar.size()) != bk.r1)
        throw shape_error("push_right_op: core shapes do not match the environment");
      std::vector<MatrixXd> r(std::size_t(n) * bk.r1);
      for (int bp = 0; bp < bk.r1; ++bp)
        for (int j = 0; j < n; ++j)
          r[std::size_t(j) + std::size_t(n) * bp] = u.slice(j) * ar[std::size_t(bp)].transpose();
      EnvBlocks out(std::size_t(bk.r0));
      for (int beta = 0; beta < bk.r0; ++beta)
      {
        MatrixXd acc = MatrixXd::Zero(u.r0, u.r0);
        for (int i = 0; i < n; ++i)
        {
          MatrixXd w = MatrixXd::Zero(u.r0, u.r1);
          for (int bp = 0; bp < bk.r1; ++bp)
            for (int j = 0; j < n; ++j)
            {
              const double v = bk.at(beta, i + n * j, bp);
              if (v != 0.0)
                w += v * r[std::size_t(j) + std::size_t(n) * bp];
            }
          acc.noalias() += u.slice(i) * w.transpose();
        }
        out[std::size_t(beta)] = std::move(acc);
      }
      return out;
    }

    inline MatrixXd push_left_rhs(const MatrixXd& gl, const Core3& u, const Core3& gk)
    {
      if (gk.n != u.n)
        throw shape_error("push_left_rhs: mode mismatch");
      MatrixXd out = MatrixXd::Zero(u.r1, gk.r1);
      for (int i = 0; i < u.n; ++i)
        out.noalias() += u.slice(i).transpose() * gl * gk.slice(i);
      return out;
    }

    inline MatrixXd push_right_rhs(const MatrixXd& gr, const Core3& u, const Core3& gk)
    {
      if (gk.n != u.n)
        throw shape_error("push_right_rhs: mode mismatch");
      MatrixXd out = MatrixXd::Zero(u.r0, gk.r0);
      for (int i = 0; i < u.n; ++i)
        out.noalias() += u.slice(i) * gr * gk.slice(i).transpose();
      return out;
    }

    //! projected right-hand side at one core, laid out like a Core3 buffer
    inline VectorXd local_rhs(const MatrixXd& gl, const MatrixXd& gr, const Core3& gk)
    {
      const int rl = int(gl.rows());
      const int rr = int(gr.rows());
      VectorXd b(index_t(rl) * gk.n * rr);
      for (int i = 0; i < gk.n; ++i)
      {
        const MatrixXd bi = gl * gk.slice(i) * gr.transpose();
        for (int be = 0; be < rr; ++be)
          for (int al = 0; al < rl; ++al)
            b[al + index_t(rl) * (i + index_t(gk.n) * be)] = bi(al, be);
      }
      return b;
    }

    //! matrix-free local operator H = (left env) x (operator core) x (right env)
    struct LocalOp
    {
      const Core3* bk = nullptr;
      const EnvBlocks* left = nullptr;
      const EnvBlocks* right = nullptr;
      int n = 0;
      int rl = 0;
      int rr = 0;

      index_t size() const { return index_t(rl) * n * rr; }

      VectorXd apply(const VectorXd& y) const
      {
        const EnvBlocks& al = *left;
        const EnvBlocks& ar = *right;
        const int rb0 = bk->r0, rb1 = bk->r1;
        Eigen::Map<const MatrixXd> ymat(y.data(), rl, std::ptrdiff_t(n) * rr);
        // gather al[beta] * y into rows (alpha', alpha_r), columns (beta, j)
        MatrixXd t2(std::ptrdiff_t(rl) * rr, std::ptrdiff_t(rb0) * n);
        MatrixXd t(rl, std::ptrdiff_t(n) * rr);
        for (int be = 0; be < rb0; ++be)
        {
          t.noalias() = al[std::size_t(be)] * ymat;
          for (int j = 0; j < n; ++j)
            for (int b2 = 0; b2 < rr; ++b2)
              t2.col(be + std::ptrdiff_t(rb0) * j).segment(std::ptrdiff_t(b2) * rl, rl) =
                  t.col(j + std::ptrdiff_t(n) * b2);
        }
        // operator core viewed as rows (beta, j), columns (i, beta')
        MatrixXd bk2(std::ptrdiff_t(rb0) * n, std::ptrdiff_t(n) * rb1);
        for (int bp = 0; bp < rb1; ++bp)
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
              bk2.col(i + std::ptrdiff_t(n) * bp).segment(std::ptrdiff_t(rb0) * j, rb0) =
                  Eigen::Map<const VectorXd>(
                      bk->a.data() + rb0 * (i + std::ptrdiff_t(n) * j) + std::ptrdiff_t(rb0) * n * n * bp, rb0);
        const MatrixXd w = t2 * bk2;  // rows (alpha', alpha_r), columns (i, beta')
        VectorXd z = VectorXd::Zero(size());
        MatrixXd zi(rl, rr);
        for (int i = 0; i < n; ++i)
        {
          zi.setZero();
          for (int bp = 0; bp < rb1; ++bp)
            zi.noalias() += Eigen::Map<const MatrixXd>(w.col(i + std::ptrdiff_t(n) * bp).data(), rl, rr) *
                            ar[std::size_t(bp)].transpose();
          for (int b1 = 0; b1 < rr; ++b1)
            z.segment(std::ptrdiff_t(rl) * i + std::ptrdiff_t(rl) * n * b1, rl) = zi.col(b1);
        }
        return z;
      }
    };

    //! dense local operator, assembled with two reshaped matrix products
    //! instead of unit-vector probes of apply()
    inline MatrixXd local_matrix(const LocalOp& op)
    {
      const Core3& bk = *op.bk;
      const EnvBlocks& al = *op.left;
      const EnvBlocks& ar = *op.right;
      const int n = op.n, rl = op.rl, rr = op.rr;
      const int rb0 = bk.r0, rb1 = bk.r1;
      MatrixXd alm(std::ptrdiff_t(rl) * rl, rb0);
      for (int be = 0; be < rb0; ++be)
        alm.col(be) = Eigen::Map<const VectorXd>(al[std::size_t(be)].data(), std::ptrdiff_t(rl) * rl);
      Eigen::Map<const MatrixXd> bm(bk.a.data(), rb0, std::ptrdiff_t(n) * n * rb1);
      const MatrixXd m1 = alm * bm;  // (alpha', alpha) by (i + n*j, beta_r)
      Eigen::Map<const MatrixXd> m2(m1.data(), std::ptrdiff_t(rl) * rl * n * n, rb1);
      MatrixXd arm(std::ptrdiff_t(rr) * rr, rb1);
      for (int bp = 0; bp < rb1; ++bp)
        arm.col(bp) = Eigen::Map<const VectorXd>(ar[std::size_t(bp)].data(), std::ptrdiff_t(rr) * rr);
      const MatrixXd m3 = m2 * arm.transpose();  // rows (alpha', alpha, i + n*j), cols (gamma', gamma)
      MatrixXd h(op.size(), op.size());
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i)
          for (int a2 = 0; a2 < rl; ++a2)
            for (int a1 = 0; a1 < rl; ++a1)
            {
              const index_t row0 = a1 + index_t(rl) * i;
              const index_t col0 = a2 + index_t(rl) * j;
              const index_t src = a1 + index_t(rl) * (a2 + index_t(rl) * (i + index_t(n) * j));
              for (int b2 = 0; b2 < rr; ++b2)
                for (int b1 = 0; b1 < rr; ++b1)
                  h(row0 + index_t(rl) * n * b1, col0 + index_t(rl) * n * b2) = m3(src, b1 + index_t(rr) * b2);
            }
      return h;
    }

    //! full GMRES (modified Gram-Schmidt with one reorthogonalization, Givens updates)
    inline VectorXd gmres(const LocalOp& op, const VectorXd& b, VectorXd x, double rel_tol, int max_iter)
    {
      const double bnorm = b.norm();
      if (bnorm == 0.0)
        return VectorXd::Zero(b.size());
      const double target = rel_tol * bnorm;
      const VectorXd r0 = b - op.apply(x);
      const double beta = r0.norm();
      if (beta <= target)
        return x;
      const int m = int(std::min<index_t>(max_iter, b.size()));
      MatrixXd v(b.size(), m + 1);
      MatrixXd h = MatrixXd::Zero(m + 1, m);
      VectorXd cs = VectorXd::Zero(m);
      VectorXd sn = VectorXd::Zero(m);
      VectorXd rhs = VectorXd::Zero(m + 1);
      v.col(0) = r0 / beta;
      rhs(0) = beta;
      int k = 0;
      for (; k < m; ++k)
      {
        VectorXd w = op.apply(v.col(k));
        for (int pass = 0; pass < 2; ++pass)
          for (int i = 0; i <= k; ++i)
          {
            const double hik = v.col(i).dot(w);
            h(i, k) += hik;
            w -= hik * v.col(i);
          }
        const double wnorm = w.norm();
        h(k + 1, k) = wnorm;
        for (int i = 0; i < k; ++i)
        {
          const double t = cs(i) * h(i, k) + sn(i) * h(i + 1, k);
          h(i + 1, k) = -sn(i) * h(i, k) + cs(i) * h(i + 1, k);
          h(i, k) = t;
        }
        const double denom = std::hypot(h(k, k), h(k + 1, k));
        if (denom == 0.0)
        {
          ++k;
          break;
        }
        cs(k) = h(k, k) / denom;
        sn(k) = h(k + 1, k) / denom;
        h(k, k) = denom;
        h(k + 1, k) = 0.0;
        rhs(k + 1) = -sn(k) * rhs(k);
        rhs(k) *= cs(k);
        if (std::abs(rhs(k + 1)) <= target || wnorm <= 1e-300)
        {
          ++k;
          break;
        }
        v.col(k + 1) = w / wnorm;
      }
      if (k == 0)
        return x;
      const VectorXd y = h.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(rhs.head(k));
      x.noalias() += v.leftCols(k) * y;
      return x;
    }

    //! h is the dense local operator when it was assembled (nloc within the
    //! direct cap), empty otherwise; iter_tol bounds the relative residual of
    //! the iterative fallback
    inline VectorXd solve_local(const LocalOp& op, const MatrixXd& h, const VectorXd& b, const VectorXd& warm,
                                double iter_tol, int iter_max)
    {
      if (h.size() > 0)
      {
        const VectorXd x = h.partialPivLu().solve(b);
        const double ok = 1e-8 * std::max(b.norm(), 1e-300) + 1e-12 * h.norm() * x.norm();
        if (x.allFinite() && (h * x - b).norm() <= ok)
          return x;
        // the projected operator can be singular mid-iteration, retry iteratively
      }
      return gmres(op, b, warm, iter_tol, iter_max);
    }

    inline MatrixXd gaussian_matrix(std::mt19937_64& rng, index_t rows, int cols)
    {
      std::normal_distribution<double> dist(0.0, 1.0);
      MatrixXd m(rows, cols);
      for (int c = 0; c < cols; ++c)
        for (index_t r = 0; r < rows; ++r)
          m(r, c) = dist(rng);
      return m;
    }
  }

  //! Alternating one-site solve of B u = g.  Bonds are widened on each
  //! left-to-right pass with directions taken from a low-rank approximation of
  //! the global residual and pruned again on the way back.  Returns a report
  //! whose residual is recomputed from B, g, u; throws
  //! solver_convergence_error carrying the best iterate if the sweep budget
  //! runs out first.
  inline SolveReport tt_solve(const TTMatrix& b, const TTVector& g, const SolveOptions& opts = {},
                              const TTVector* guess = nullptr)
  {
    if (b.row_modes != b.col_modes)
      throw shape_error("tt_solve: operator must be square");
    if (g.mode_sizes() != b.row_modes)
      throw shape_error("tt_solve: right-hand side modes do not match the operator");
    if (guess && guess->mode_sizes() != g.mode_sizes())
      throw shape_error("tt_solve: initial guess modes do not match the system");
    const int nc = int(b.cores.size());

    SolveReport report;
    report.erank_B = erank(b);
    report.erank_g = erank(g);

    const double gnorm = norm(g);
    if (gnorm == 0.0)
    {
      report.u = tt_zeros(g.mode_sizes());
      report.residual = 0.0;
      report.converged = true;
      report.erank_u = erank(report.u);
      return report;
    }

    TTVector u = guess ? *guess : round(g, 0.5 * opts.tol, opts.max_rank);
    detail::right_orthogonalize(u.cores);

    std::vector<detail::EnvBlocks> al(std::size_t(nc) + 1), ar(std::size_t(nc) + 1);
    std::vector<MatrixXd> gl(std::size_t(nc) + 1), gr(std::size_t(nc) + 1);
    al[0] = detail::unit_env();
    ar[std::size_t(nc)] = detail::unit_env();
    gl[0] = MatrixXd::Ones(1, 1);
    gr[std::size_t(nc)] = MatrixXd::Ones(1, 1);
    for (int k = nc - 1; k >= 1; --k)
    {
      ar[std::size_t(k)] = detail::push_right_op(ar[std::size_t(k) + 1], u.cores[std::size_t(k)], b.cores[std::size_t(k)]);
      gr[std::size_t(k)] = detail::push_right_rhs(gr[std::size_t(k) + 1], u.cores[std::size_t(k)], g.cores[std::size_t(k)]);
    }

    std::mt19937_64 rng(opts.seed);
    double trunc_tol = opts.trunc_factor * opts.tol;
    double best_res = std::numeric_limits<double>::infinity();
    TTVector best_u = u;

    // one residual evaluation per sweep serves both the convergence
    // certificate and, truncated to low rank, the bond enrichment directions
    const auto residual_train = [&](double& rnorm_out)
    {
      TTVector r = add(g, scale(matvec(b, u), -1.0));
      detail::right_orthogonalize(r.cores);
      rnorm_out = r.cores.front().left_unfold().norm();
      return r;
    };
    const auto enrich_truncate = [&](TTVector& r, double rnorm)
    {
      const double delta = rnorm > 0.0 ? 0.25 * rnorm / std::sqrt(double(std::max(nc - 1, 1))) : 0.0;
      detail::truncate_left_to_right(r.cores, delta, opts.kick_rank);
    };

    double rnorm = 0.0;
    TTVector res = residual_train(rnorm);
    enrich_truncate(res, rnorm);
    double prev_cert = std::numeric_limits<double>::infinity();

    for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep)
    {
      MatrixXd wl = MatrixXd::Ones(1, 1);  // transfer from the residual train's left basis into u's
      // iterative local solves only need to outpace the current residual level
      const double loc_tol = std::max(0.05 * opts.tol, std::min(0.1, 0.01 * prev_cert));

      // left-to-right: solve each core, widen the next bond with residual directions
      for (int k = 0; k < nc; ++k)
      {
        Core3& uk = u.cores[std::size_t(k)];
        const detail::LocalOp op{ &b.cores[std::size_t(k)], &al[std::size_t(k)], &ar[std::size_t(k) + 1],
                                  uk.n, uk.r0, uk.r1 };
        const VectorXd bloc = detail::local_rhs(gl[std::size_t(k)], gr[std::size_t(k) + 1], g.cores[std::size_t(k)]);
        const VectorXd warm = Eigen::Map<const VectorXd>(uk.a.data(), index_t(uk.a.size()));
        const MatrixXd h = op.size() <= opts.direct_cap ? detail::local_matrix(op) : MatrixXd();
        const VectorXd y = detail::solve_local(op, h, bloc, warm, loc_tol, opts.gmres_max);

        if (k == nc - 1)
        {
          Eigen::Map<VectorXd>(uk.a.data(), index_t(uk.a.size())) = y;
          continue;
        }

        const index_t rows = index_t(uk.r0) * uk.n;
        Eigen::Map<const MatrixXd> ymat(y.data(), rows, uk.r1);
        // project the residual train's core into the current left basis; the
        // (r0 x n*r1) product reads directly as the (r0*n x r1) local block
        const Core3& rk = res.cores[std::size_t(k)];
        const MatrixXd zfull = wl * rk.right_unfold();
        Eigen::Map<const MatrixXd> zloc(zfull.data(), rows, index_t(rk.r1));
        int kick = int(std::min<index_t>({ index_t(opts.kick_rank), index_t(rk.r1),
                                           std::min<index_t>(opts.max_rank, rows) - uk.r1 }));
        kick = std::max(kick, 0);
        MatrixXd basis(rows, uk.r1 + kick);
        basis.leftCols(uk.r1) = ymat;
        if (kick > 0)
        {
          if (zloc.norm() > 1e-14 * std::max(1.0, ymat.norm()))
            basis.middleCols(uk.r1, kick) = zloc.leftCols(kick);
          else // degenerate residual projection: fall back to seeded random directions
            basis.rightCols(kick) = detail::gaussian_matrix(rng, rows, kick);
        }
        const Eigen::HouseholderQR<MatrixXd> qr(basis);
        const int rnew = int(std::min<index_t>(rows, index_t(uk.r1) + kick));
        const MatrixXd q = qr.householderQ() * MatrixXd::Identity(rows, rnew);
        const MatrixXd carry = q.transpose() * ymat;  // q * carry reproduces y, enrichment only widens the basis
        wl = q.transpose() * zloc;                    // keep the transfer aligned with the widened basis

        Core3 nk(uk.r0, uk.n, rnew);
        Eigen::Map<MatrixXd>(nk.a.data(), rows, rnew) = q;
        uk = std::move(nk);

        const Core3& un = u.cores[std::size_t(k) + 1];
        Core3 nn(rnew, un.n, un.r1);
        Eigen::Map<MatrixXd>(nn.a.data(), rnew, index_t(un.n) * un.r1).noalias() = carry * un.right_unfold();
        u.cores[std::size_t(k) + 1] = std::move(nn);

        al[std::size_t(k) + 1] = detail::push_left_op(al[std::size_t(k)], u.cores[std::size_t(k)], b.cores[std::size_t(k)]);
        gl[std::size_t(k) + 1] = detail::push_left_rhs(gl[std::size_t(k)], u.cores[std::size_t(k)], g.cores[std::size_t(k)]);
      }

      // right-to-left: solve and truncate, moving the center back to core 0
      for (int k = nc - 1; k >= 0; --k)
      {
        Core3& uk = u.cores[std::size_t(k)];
        const detail::LocalOp op{ &b.cores[std::size_t(k)], &al[std::size_t(k)], &ar[std::size_t(k) + 1],
                                  uk.n, uk.r0, uk.r1 };
        const VectorXd bloc = detail::local_rhs(gl[std::size_t(k)], gr[std::size_t(k) + 1], g.cores[std::size_t(k)]);
        const VectorXd warm = Eigen::Map<const VectorXd>(uk.a.data(), index_t(uk.a.size()));
        const MatrixXd h = op.size() <= opts.direct_cap ? detail::local_matrix(op) : MatrixXd();
        const VectorXd y = detail::solve_local(op, h, bloc, warm, loc_tol, opts.gmres_max);

        if (k == 0)
        {
          Eigen::Map<VectorXd>(uk.a.data(), index_t(uk.a.size())) = y;
          continue;
        }

        Eigen::Map<const MatrixXd> ymat(y.data(), uk.r0, index_t(uk.n) * uk.r1);
        const double delta = trunc_tol * y.norm() / std::sqrt(double(nc - 1));
        const auto split = detail::split_svd(ymat.transpose(), delta, opts.max_rank);
        Core3 nk(split.rank, uk.n, uk.r1);
        Eigen::Map<MatrixXd>(nk.a.data(), split.rank, index_t(uk.n) * uk.r1) = split.u.transpose();
        uk = std::move(nk);

        const Core3& up = u.cores[std::size_t(k) - 1];
        Core3 np(up.r0, up.n, split.rank);
        Eigen::Map<MatrixXd>(np.a.data(), index_t(up.r0) * up.n, split.rank).noalias() =
            up.left_unfold() * split.rest.transpose();
        u.cores[std::size_t(k) - 1] = std::move(np);

        ar[std::size_t(k)] = detail::push_right_op(ar[std::size_t(k) + 1], u.cores[std::size_t(k)], b.cores[std::size_t(k)]);
        gr[std::size_t(k)] = detail::push_right_rhs(gr[std::size_t(k) + 1], u.cores[std::size_t(k)], g.cores[std::size_t(k)]);
      }

      report.sweeps = sweep;
      TTVector r = residual_train(rnorm);
      const double cert = rnorm / gnorm;
      if (opts.trace)
      {
        int rumax = 0;
        index_t nloc_max = 0;
        for (const Core3& c : u.cores)
        {
          rumax = std::max(rumax, c.r1);
          nloc_max = std::max(nloc_max, index_t(c.r0) * c.n * c.r1);
        }
        *opts.trace << "sweep " << sweep << " residual " << cert << " max rank " << rumax
                    << " max local size " << nloc_max << " trunc " << trunc_tol << "\n";
      }
      if (cert < best_res)
      {
        best_res = cert;
        best_u = u;
      }
      if (cert <= opts.tol)
      {
        report.u = u;
        report.residual = cert;
        report.converged = true;
        report.erank_u = erank(report.u);
        return report;
      }
      enrich_truncate(r, rnorm);
      res = std::move(r);
      // a stalled certificate means the truncation level, not the rank, is
      // limiting progress; jump the tolerance toward where the certificate
      // says it has to be (at most four decades at a time), and otherwise
      // leave it alone so pruning stays active
      if (cert > 0.5 * prev_cert)
        trunc_tol = std::max({ std::min(trunc_tol * 0.3, 0.2 * opts.tol * trunc_tol / cert),
                               1e-4 * trunc_tol, 1e-15 });
      prev_cert = cert;
    }

    if (!std::isfinite(best_res))
    {
      best_res = relative_residual(b, u, g);
      best_u = u;
    }
    report.u = best_u;
    report.residual = best_res;
    report.erank_u = erank(report.u);
    if (best_res <= opts.tol)
    {
      report.converged = true;
      return report;
    }
    throw solver_convergence_error("tt_solve: relative residual " + std::to_string(best_res) + " after "
                                       + std::to_string(report.sweeps) + " sweeps, target " + std::to_string(opts.tol),
                                   report);
  }

  inline SolveReport tt_solve(const TTMatrix& b, const TTVector& g, double tol, int max_sweeps)
  {
    SolveOptions opts;
    opts.tol = tol;
    opts.max_sweeps = max_sweeps;
    return tt_solve(b, g, opts);
  }

  //! discrete Dirichlet energy: sum over subdomains of <u_m, A_m u_m> with the
  //! raw (pre-coupling, pre-mask) stiffness blocks
  inline double energy_quadratic(const std::vector<TTMatrix>& a_raw, const std::vector<TTVector>& u_parts)
  {
    if (a_raw.size() != u_parts.size())
      throw shape_error("energy_quadratic: block count mismatch");
    double e = 0.0;
    for (std::size_t m = 0; m < a_raw.size(); ++m)
      e += dot(u_parts[m], matvec(a_raw[m], u_parts[m]));
    return e;
  }

  struct RichardsonResult
  {
    double e_star = 0.0;
    //! log2 of consecutive energy-difference ratios, NaN with fewer than 3 levels
    double observed_order = std::numeric_limits<double>::quiet_NaN();
  };

  //! second-order Richardson extrapolation from the two finest consecutive levels
  inline RichardsonResult richardson(const std::vector<double>& energies)
  {
    const std::size_t n = energies.size();
    if (n < 2)
      throw shape_error("richardson: need at least two consecutive-level energies");
    RichardsonResult r;
    r.e_star = (4.0 * energies[n - 1] - energies[n - 2]) / 3.0;
    if (n >= 3)
    {
      const double d1 = energies[n - 3] - energies[n - 2];
      const double d2 = energies[n - 2] - energies[n - 1];
      if (d2 != 0.0 && d1 / d2 > 0.0)
        r.observed_order = std::log2(d1 / d2);
    }
    return r;
  }
}
