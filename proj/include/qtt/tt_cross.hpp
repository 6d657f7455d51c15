#pragma once

//! Cross approximation of entrywise-defined tensors and the pointwise
//! reciprocal built on top of it.
//!
//! Small inputs take a dense round trip.  Larger ones are interpolated by an
//! alternating row/column cross scheme with maxvol pivot selection, growing
//! ranks until a sampled validation set meets the tolerance.

#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "qtt/errors.hpp"
#include "qtt/tensor_train.hpp"

namespace qtt
{
  namespace detail
  {
    //! quasi-maximum-volume row subset of a tall full-column-rank matrix
    inline std::vector<int> maxvol_rows(const MatrixXd& a, double delta = 1e-2, int max_iter = 200)
    {
      const int n = int(a.rows());
      const int r = int(a.cols());
      if (n < r)
        throw shape_error("maxvol_rows: matrix must be tall");
      // initial nonsingular subset: Gaussian elimination with row pivoting
      std::vector<int> rows(r);
      {
        MatrixXd work = a;
        std::vector<char> used(n, 0);
        for (int k = 0; k < r; ++k)
        {
          int piv = -1;
          double best = -1.0;
          for (int i = 0; i < n; ++i)
            if (!used[i] && std::abs(work(i, k)) > best)
            {
              best = std::abs(work(i, k));
              piv = i;
            }
          if (best <= 0.0)
            throw singularity_error("maxvol_rows: rank-deficient input");
          rows[k] = piv;
          used[piv] = 1;
          for (int i = 0; i < n; ++i)
            if (!used[i] && work(i, k) != 0.0)
              work.row(i) -= (work(i, k) / work(piv, k)) * work.row(piv);
        }
      }
      for (int iter = 0; iter < max_iter; ++iter)
      {
        MatrixXd sub(r, r);
        for (int k = 0; k < r; ++k)
          sub.row(k) = a.row(rows[k]);
        const MatrixXd b = sub.transpose().partialPivLu().solve(a.transpose()).transpose();
        int bi = 0, bj = 0;
        double best = 0.0;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < r; ++j)
            if (std::abs(b(i, j)) > best)
            {
              best = std::abs(b(i, j));
              bi = i;
              bj = j;
            }
        if (best <= 1.0 + delta)
          break;
        rows[bj] = bi;
      }
      return rows;
    }
  }

  struct CrossOptions
  {
    int max_rank = 64;
    int max_sweeps = 20;
    int rank_step = 4;
    int validation_samples = 256;
    std::uint64_t seed = 0x5DEECE66Dull;
  };

  //! interpolate f over the given mode grid in TT form to relative tolerance tol
  inline TTVector cross_interpolate(const std::function<double(const std::vector<int>&)>& f,
                                    const std::vector<int>& modes, double tol,
                                    const CrossOptions& opts = {})
  {
    const int d = int(modes.size());
    if (d < 1)
      throw shape_error("cross_interpolate: empty mode list");
    std::mt19937_64 rng(opts.seed);
    auto random_index = [&](int k) { return int(rng() % std::uint64_t(modes[k])); };

    // natural rank bounds from left/right grid sizes
    std::vector<double> bound(d + 1, 1.0);
    {
      std::vector<double> left(d + 1, 1.0), right(d + 1, 1.0);
      for (int k = 0; k < d; ++k)
        left[k + 1] = std::min(left[k] * modes[k], 1e18);
      for (int k = d - 1; k >= 0; --k)
        right[k] = std::min(right[k + 1] * modes[k], 1e18);
      for (int k = 0; k <= d; ++k)
        bound[k] = std::min(left[k], right[k]);
    }

    // suffix index sets J[k] for bonds k = 1..d-1 (J[k] holds modes k..d-1)
    std::vector<std::vector<std::vector<int>>> jset(d);
    auto grow_jsets = [&](int target) {
      for (int k = 1; k < d; ++k)
      {
        const int cap = int(std::min<double>(target, bound[k]));
        while (int(jset[k].size()) < cap)
        {
          std::vector<int> suffix(d - k);
          for (int t = k; t < d; ++t)
            suffix[t - k] = random_index(t);
          jset[k].push_back(std::move(suffix));
        }
      }
    };
    grow_jsets(2);

    std::vector<std::vector<std::vector<int>>> iset(d); // prefix sets, iset[k] holds modes 0..k-1
    std::vector<Core3> cores(d);
    std::vector<int> idx(d);
    auto eval = [&](const std::vector<int>& prefix, int i, int k, const std::vector<int>& suffix) {
      for (std::size_t t = 0; t < prefix.size(); ++t)
        idx[t] = prefix[t];
      idx[k] = i;
      for (std::size_t t = 0; t < suffix.size(); ++t)
        idx[k + 1 + t] = suffix[t];
      return f(idx);
    };

    const std::vector<int> empty;
    for (int sweep = 0; sweep < opts.max_sweeps; ++sweep)
    {
      // left-to-right pass: build nested prefix sets
      iset[0] = { {} };
      for (int k = 0; k < d; ++k)
      {
        const auto& left = iset[k];
        const auto& right = k + 1 < d ? jset[k + 1] : std::vector<std::vector<int>>{ {} };
        const int rl = int(left.size());
        const int rr = int(right.size());
        MatrixXd c(rl * modes[k], rr);
        for (int b = 0; b < rr; ++b)
          for (int i = 0; i < modes[k]; ++i)
            for (int a = 0; a < rl; ++a)
              c(a + rl * i, b) = eval(left[a], i, k, right[b]);
        if (k == d - 1)
        {
          Core3 core(rl, modes[k], 1);
          core.left_unfold() = c;
          cores[k] = std::move(core);
          break;
        }
        const int rnew = int(std::min<Eigen::Index>(c.rows(), c.cols()));
        Eigen::HouseholderQR<MatrixXd> qr(c);
        MatrixXd q = qr.householderQ() * MatrixXd::Identity(c.rows(), rnew);
        const std::vector<int> rows = detail::maxvol_rows(q);
        MatrixXd sub(rnew, rnew);
        for (int t = 0; t < rnew; ++t)
          sub.row(t) = q.row(rows[t]);
        MatrixXd core_mat = sub.transpose().partialPivLu().solve(q.transpose()).transpose();
        Core3 core(rl, modes[k], rnew);
        core.left_unfold() = core_mat;
        cores[k] = std::move(core);
        std::vector<std::vector<int>> next;
        for (int row : rows)
        {
          std::vector<int> prefix = left[row % rl];
          prefix.push_back(row / rl);
          next.push_back(std::move(prefix));
        }
        iset[k + 1] = std::move(next);
      }

      // right-to-left pass: rebuild nested suffix sets
      for (int k = d - 1; k >= 1; --k)
      {
        const auto& left = iset[k];
        const auto& right = k + 1 < d ? jset[k + 1] : std::vector<std::vector<int>>{ {} };
        const int rl = int(left.size());
        const int rr = int(right.size());
        MatrixXd c(rl, modes[k] * rr);
        for (int b = 0; b < rr; ++b)
          for (int i = 0; i < modes[k]; ++i)
            for (int a = 0; a < rl; ++a)
              c(a, i + modes[k] * b) = eval(left[a], i, k, right[b]);
        const int rnew = int(std::min<Eigen::Index>(c.rows(), c.cols()));
        Eigen::HouseholderQR<MatrixXd> qr(c.transpose());
        MatrixXd q = qr.householderQ() * MatrixXd::Identity(c.cols(), rnew);
        const std::vector<int> cols = detail::maxvol_rows(q);
        MatrixXd sub(rnew, rnew);
        for (int t = 0; t < rnew; ++t)
          sub.row(t) = q.row(cols[t]);
        MatrixXd core_mat = sub.transpose().partialPivLu().solve(q.transpose()); // rnew x (n*rr)
        Core3 core(rnew, modes[k], rr);
        core.right_unfold() = core_mat;
        cores[k] = std::move(core);
        std::vector<std::vector<int>> next;
        for (int col : cols)
        {
          std::vector<int> suffix;
          suffix.push_back(col % modes[k]);
          const auto& tail = right[col / modes[k]];
          suffix.insert(suffix.end(), tail.begin(), tail.end());
          next.push_back(std::move(suffix));
        }
        jset[k] = std::move(next);
      }
      // closing core from the updated bond-1 suffix set
      {
        const auto& right = d > 1 ? jset[1] : std::vector<std::vector<int>>{ {} };
        const int rr = int(right.size());
        Core3 core(1, modes[0], rr);
        for (int b = 0; b < rr; ++b)
          for (int i = 0; i < modes[0]; ++i)
            core.at(0, i, b) = eval(empty, i, 0, right[b]);
        cores[0] = std::move(core);
      }

      TTVector t(cores);
      double max_err = 0.0, max_abs = 0.0;
      std::vector<int> sample(d);
      for (int s = 0; s < opts.validation_samples; ++s)
      {
        for (int k = 0; k < d; ++k)
          sample[k] = random_index(k);
        const double truth = f(sample);
        max_abs = std::max(max_abs, std::abs(truth));
        max_err = std::max(max_err, std::abs(truth - value_at(t, sample)));
      }
      if (max_abs == 0.0 || max_err <= tol * max_abs)
        return t;

      // not converged: widen the suffix sets and resweep
      bool grew = false;
      for (int k = 1; k < d; ++k)
      {
        const int cap = int(std::min<double>(opts.max_rank, bound[k]));
        const int want = std::min(cap, int(jset[k].size()) + opts.rank_step);
        while (int(jset[k].size()) < want)
        {
          std::vector<int> suffix(d - k);
          for (int t = k; t < d; ++t)
            suffix[t - k] = random_index(t);
          jset[k].push_back(std::move(suffix));
          grew = true;
        }
      }
      if (!grew && sweep + 2 >= opts.max_sweeps)
        throw convergence_error("cross_interpolate: rank budget exhausted before reaching tolerance");
    }
    throw convergence_error("cross_interpolate: sweep budget exhausted before reaching tolerance");
  }

  struct ReciprocalOptions
  {
    double floor = 1e-12;
    index_t dense_guard = index_t(1) << 16;
    CrossOptions cross;
  };

  //! entrywise 1/v to relative tolerance tol.  Entries with magnitude below the
  //! floor indicate a (near-)degenerate element map and raise singularity_error.
  inline TTVector elementwise_reciprocal(const TTVector& v, double tol, const ReciprocalOptions& opts = {})
  {
    const index_t n = v.size();
    if (n <= opts.dense_guard)
    {
      VectorXd dense = to_dense(v, opts.dense_guard);
      for (index_t i = 0; i < n; ++i)
        if (std::abs(dense(i)) < opts.floor)
          throw singularity_error("elementwise_reciprocal: entry below floor at index " + std::to_string(i));
      return from_dense(dense.cwiseInverse(), v.mode_sizes(), tol);
    }
    auto f = [&](const std::vector<int>& idx) {
      const double x = value_at(v, idx);
      if (std::abs(x) < opts.floor)
        throw singularity_error("elementwise_reciprocal: entry below floor");
      return 1.0 / x;
    };
    return cross_interpolate(f, v.mode_sizes(), tol, opts.cross);
  }
}
