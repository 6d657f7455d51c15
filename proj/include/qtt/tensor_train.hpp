#pragma once

//! Tensor-train (TT) containers and the exact TT algebra they support.
//!
//! Conventions used throughout:
//!  - a flat index is split little-endian over the cores: the first core owns
//!    the fastest-varying digit, so for binary modes index bit k lives in core k;
//!  - arithmetic (add, hadamard, dot, matvec, matmul, kron) is exact: ranks
//!    add or multiply, nothing is truncated implicitly.  Rounding is a separate,
//!    explicit operation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qtt/errors.hpp"

namespace qtt
{
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  using index_t = std::int64_t;

  //! order-3 TT core, entries laid out as (alpha, i, beta) -> alpha + r0*(i + n*beta)
  struct Core3
  {
    int r0 = 1;
    int n = 1;
    int r1 = 1;
    std::vector<double> a;

    Core3() = default;
    Core3(int r0_, int n_, int r1_) : r0(r0_), n(n_), r1(r1_), a(std::size_t(r0_) * n_ * r1_, 0.0) {}

    double& at(int alpha, int i, int beta) { return a[std::size_t(alpha) + std::size_t(r0) * (std::size_t(i) + std::size_t(n) * beta)]; }
    double at(int alpha, int i, int beta) const { return a[std::size_t(alpha) + std::size_t(r0) * (std::size_t(i) + std::size_t(n) * beta)]; }

    //! (r0*n) x r1 view, rows grouped (alpha, i) with alpha fastest
    Eigen::Map<const MatrixXd> left_unfold() const { return { a.data(), std::ptrdiff_t(r0) * n, r1 }; }
    Eigen::Map<MatrixXd> left_unfold() { return { a.data(), std::ptrdiff_t(r0) * n, r1 }; }

    //! r0 x (n*r1) view, columns grouped (i, beta) with i fastest
    Eigen::Map<const MatrixXd> right_unfold() const { return { a.data(), r0, std::ptrdiff_t(n) * r1 }; }
    Eigen::Map<MatrixXd> right_unfold() { return { a.data(), r0, std::ptrdiff_t(n) * r1 }; }

    //! r0 x r1 copy of mode slice i
    MatrixXd slice(int i) const
    {
      MatrixXd s(r0, r1);
      for (int beta = 0; beta < r1; ++beta)
        for (int alpha = 0; alpha < r0; ++alpha)
          s(alpha, beta) = at(alpha, i, beta);
      return s;
    }

    void set_slice(int i, const MatrixXd& s)
    {
      for (int beta = 0; beta < r1; ++beta)
        for (int alpha = 0; alpha < r0; ++alpha)
          at(alpha, i, beta) = s(alpha, beta);
    }
  };

  namespace detail
  {
    inline void check_chain(const std::vector<Core3>& cores, const char* what)
    {
      if (cores.empty())
        throw shape_error(std::string(what) + ": empty core list");
      if (cores.front().r0 != 1 || cores.back().r1 != 1)
        throw shape_error(std::string(what) + ": boundary ranks must be 1");
      for (std::size_t k = 0; k + 1 < cores.size(); ++k)
        if (cores[k].r1 != cores[k + 1].r0)
          throw shape_error(std::string(what) + ": rank chain mismatch at bond " + std::to_string(k));
    }
  }

  //! TT vector: d cores, entry x[i] = G_1(i_1) * ... * G_d(i_d) with i split little-endian
  struct TTVector
  {
    std::vector<Core3> cores;

    TTVector() = default;
    explicit TTVector(std::vector<Core3> cs) : cores(std::move(cs)) { detail::check_chain(cores, "TTVector"); }

    int dims() const { return int(cores.size()); }

    std::vector<int> mode_sizes() const
    {
      std::vector<int> m(cores.size());
      for (std::size_t k = 0; k < cores.size(); ++k)
        m[k] = cores[k].n;
      return m;
    }

    //! rank chain r_0..r_d (length d+1, boundaries 1)
    std::vector<int> ranks() const
    {
      std::vector<int> r(cores.size() + 1, 1);
      for (std::size_t k = 0; k < cores.size(); ++k)
        r[k + 1] = cores[k].r1;
      return r;
    }

    int max_rank() const
    {
      int r = 1;
      for (const auto& c : cores)
        r = std::max(r, c.r1);
      return r;
    }

    //! total element count; throws guard_error beyond the cap to avoid overflow
    index_t size(index_t cap = index_t(1) << 62) const
    {
      index_t s = 1;
      for (const auto& c : cores)
      {
        s *= c.n;
        if (s > cap)
          throw guard_error("TTVector::size exceeds cap");
      }
      return s;
    }
  };

  //! TT matrix: cores hold row/column mode pairs, stored with the combined
  //! digit l = i + nrows*j so that the plain Core3 machinery applies.
  struct TTMatrix
  {
    std::vector<Core3> cores;
    std::vector<int> row_modes;
    std::vector<int> col_modes;

    TTMatrix() = default;
    TTMatrix(std::vector<Core3> cs, std::vector<int> rm, std::vector<int> cm)
      : cores(std::move(cs)), row_modes(std::move(rm)), col_modes(std::move(cm))
    {
      detail::check_chain(cores, "TTMatrix");
      if (row_modes.size() != cores.size() || col_modes.size() != cores.size())
        throw shape_error("TTMatrix: mode lists must match core count");
      for (std::size_t k = 0; k < cores.size(); ++k)
        if (cores[k].n != row_modes[k] * col_modes[k])
          throw shape_error("TTMatrix: core mode size must equal row*col mode product");
    }

    int dims() const { return int(cores.size()); }

    std::vector<int> ranks() const
    {
      std::vector<int> r(cores.size() + 1, 1);
      for (std::size_t k = 0; k < cores.size(); ++k)
        r[k + 1] = cores[k].r1;
      return r;
    }

    int max_rank() const
    {
      int r = 1;
      for (const auto& c : cores)
        r = std::max(r, c.r1);
      return r;
    }

    index_t rows(index_t cap = index_t(1) << 62) const
    {
      index_t s = 1;
      for (int m : row_modes)
      {
        s *= m;
        if (s > cap)
          throw guard_error("TTMatrix::rows exceeds cap");
      }
      return s;
    }

    index_t cols(index_t cap = index_t(1) << 62) const
    {
      index_t s = 1;
      for (int m : col_modes)
      {
        s *= m;
        if (s > cap)
          throw guard_error("TTMatrix::cols exceeds cap");
      }
      return s;
    }

    //! r0 x r1 slice for the (row digit, col digit) pair
    MatrixXd slice(int k, int i, int j) const { return cores[k].slice(i + row_modes[k] * j); }
  };

  // ---------------------------------------------------------------------------
  // elementary constructors

  inline TTVector tt_ones(const std::vector<int>& modes)
  {
    std::vector<Core3> cs;
    for (int n : modes)
    {
      Core3 c(1, n, 1);
      std::fill(c.a.begin(), c.a.end(), 1.0);
      cs.push_back(std::move(c));
    }
    return TTVector(std::move(cs));
  }

  inline TTVector tt_zeros(const std::vector<int>& modes)
  {
    std::vector<Core3> cs;
    for (int n : modes)
      cs.emplace_back(1, n, 1);
    return TTVector(std::move(cs));
  }

  inline TTVector tt_constant(const std::vector<int>& modes, double value)
  {
    TTVector t = tt_ones(modes);
    for (double& x : t.cores.front().a)
      x *= value;
    return t;
  }

  //! rank-1 unit vector e_index
  inline TTVector tt_unit(const std::vector<int>& modes, index_t index)
  {
    std::vector<Core3> cs;
    for (int n : modes)
    {
      Core3 c(1, n, 1);
      c.at(0, int(index % n), 0) = 1.0;
      index /= n;
      cs.push_back(std::move(c));
    }
    if (index != 0)
      throw shape_error("tt_unit: index out of range");
    return TTVector(std::move(cs));
  }

  //! the vector (0, 1, ..., 2^d - 1) over binary modes, built with rank 2
  inline TTVector tt_range(int d)
  {
    if (d < 1)
      throw shape_error("tt_range: d must be >= 1");
    if (d == 1)
    {
      Core3 c(1, 2, 1);
      c.at(0, 1, 0) = 1.0;
      return TTVector({ c });
    }
    std::vector<Core3> cs;
    // running-sum automaton: state 0 carries the constant 1, state 1 the partial sum
    {
      Core3 c(1, 2, 2);
      for (int b = 0; b < 2; ++b)
      {
        c.at(0, b, 0) = 1.0;
        c.at(0, b, 1) = double(b); // weight 2^0
      }
      cs.push_back(std::move(c));
    }
    for (int k = 1; k + 1 < d; ++k)
    {
      Core3 c(2, 2, 2);
      const double w = double(index_t(1) << k);
      for (int b = 0; b < 2; ++b)
      {
        c.at(0, b, 0) = 1.0;
        c.at(0, b, 1) = w * b;
        c.at(1, b, 1) = 1.0;
      }
      cs.push_back(std::move(c));
    }
    {
      Core3 c(2, 2, 1);
      const double w = double(index_t(1) << (d - 1));
      for (int b = 0; b < 2; ++b)
      {
        c.at(0, b, 0) = w * b;
        c.at(1, b, 0) = 1.0;
      }
      cs.push_back(std::move(c));
    }
    return TTVector(std::move(cs));
  }

  inline TTMatrix tt_identity(const std::vector<int>& modes)
  {
    std::vector<Core3> cs;
    for (int n : modes)
    {
      Core3 c(1, n * n, 1);
      for (int i = 0; i < n; ++i)
        c.at(0, i + n * i, 0) = 1.0;
      cs.push_back(std::move(c));
    }
    return TTMatrix(std::move(cs), modes, modes);
  }

  // ---------------------------------------------------------------------------
  // entry evaluation and dense conversion

  //! evaluate one entry; digits are consumed little-endian from the flat index
  inline double value_at(const TTVector& t, index_t index)
  {
    Eigen::RowVectorXd v = Eigen::RowVectorXd::Ones(1);
    for (const auto& c : t.cores)
    {
      const int i = int(index % c.n);
      index /= c.n;
      v = v * c.slice(i);
    }
    if (index != 0)
      throw shape_error("value_at: index out of range");
    return v(0);
  }

  inline double value_at(const TTVector& t, const std::vector<int>& digits)
  {
    if (digits.size() != t.cores.size())
      throw shape_error("value_at: digit count mismatch");
    Eigen::RowVectorXd v = Eigen::RowVectorXd::Ones(1);
    for (std::size_t k = 0; k < t.cores.size(); ++k)
      v = v * t.cores[k].slice(digits[k]);
    return v(0);
  }

  //! materialize; the guard (default 2^24 entries) keeps accidental blow-ups out
  inline VectorXd to_dense(const TTVector& t, index_t guard = index_t(1) << 24)
  {
    const index_t n = t.size(guard * 2);
    if (n > guard)
      throw guard_error("to_dense: vector size " + std::to_string(n) + " exceeds guard " + std::to_string(guard));
    MatrixXd acc = MatrixXd::Ones(1, 1);
    for (const auto& c : t.cores)
    {
      // (N_sofar x r0) * (r0 x n*r1), then regroup columns (i,beta) into rows
      MatrixXd next = acc * c.right_unfold();
      acc = Eigen::Map<const MatrixXd>(next.data(), next.rows() * c.n, c.r1);
    }
    return VectorXd(Eigen::Map<const VectorXd>(acc.data(), n));
  }

  inline MatrixXd to_dense(const TTMatrix& m, index_t guard = index_t(1) << 24)
  {
    const index_t nr = m.rows(guard * 2);
    const index_t nc = m.cols(guard * 2);
    if (nr * nc > guard)
      throw guard_error("to_dense: matrix size exceeds guard");
    // materialize over the combined digits, then unshuffle into (row, col)
    MatrixXd acc = MatrixXd::Ones(1, 1);
    for (const auto& c : m.cores)
    {
      MatrixXd next = acc * c.right_unfold();
      acc = Eigen::Map<const MatrixXd>(next.data(), next.rows() * c.n, c.r1);
    }
    MatrixXd out(nr, nc);
    const int d = m.dims();
    for (index_t l = 0; l < nr * nc; ++l)
    {
      index_t rest = l, i = 0, j = 0, ri = 1, rj = 1;
      for (int k = 0; k < d; ++k)
      {
        const int nk = m.row_modes[k], mk = m.col_modes[k];
        const int digit = int(rest % (nk * mk));
        rest /= nk * mk;
        i += ri * (digit % nk);
        j += rj * (digit / nk);
        ri *= nk;
        rj *= mk;
      }
      out(i, j) = acc(l, 0);
    }
    return out;
  }

  // ---------------------------------------------------------------------------
  // TT-SVD construction and rounding

  namespace detail
  {
    //! relative floor below which singular values count as numerical zeros
    constexpr double kSigmaFloor = 1e-14;

    struct SplitResult
    {
      MatrixXd u;       // orthonormal columns
      MatrixXd rest;    // S * V^T
      int rank = 1;
    };

    struct ThinSvd
    {
      MatrixXd u;
      VectorXd s;
      MatrixXd v;
    };

    //! thin SVD with a consistency probe. BDCSVD in Eigen 3.4.0 can return
    //! orthonormal factors whose product does not reproduce the input; a few
    //! fixed sign-pattern probes of U*S*V^T x against M x catch that, and the
    //! rare bad case is redone with the slower one-sided factorization.
    inline ThinSvd thin_svd(const MatrixXd& m)
    {
      ThinSvd out;
      {
        Eigen::BDCSVD<MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
        out.u = svd.matrixU();
        out.s = svd.singularValues();
        out.v = svd.matrixV();
      }
      const double scale = out.s.size() > 0 ? std::max(out.s(0), std::numeric_limits<double>::min())
                                            : std::numeric_limits<double>::min();
      std::uint64_t h = 0x9E3779B97F4A7C15ull;
      for (int probe = 0; probe < 3; ++probe)
      {
        VectorXd x(m.cols());
        for (index_t i = 0; i < x.size(); ++i)
        {
          h ^= h >> 12, h ^= h << 25, h ^= h >> 27;
          x(i) = (h >> 63) ? 1.0 : -1.0;
        }
        const VectorXd err = m * x - out.u * (out.s.asDiagonal() * (out.v.transpose() * x));
        if (err.norm() > 1e-10 * scale * x.norm())
        {
          Eigen::JacobiSVD<MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
          out.u = svd.matrixU();
          out.s = svd.singularValues();
          out.v = svd.matrixV();
          break;
        }
      }
      return out;
    }

    //! truncated SVD split: drop the largest tail with ||tail||_2 <= delta
    inline SplitResult split_svd(const MatrixXd& m, double delta, int max_rank)
    {
      const int full = int(std::min(m.rows(), m.cols()));
      const ThinSvd svd = thin_svd(m);
      const VectorXd& sv = svd.s;
      double tail2 = 0.0;
      int rank = full;
      const double floor = sv.size() > 0 ? sv(0) * kSigmaFloor : 0.0;
      while (rank > 1)
      {
        const double s = sv(rank - 1);
        if (s <= floor || std::sqrt(tail2 + s * s) <= delta)
        {
          tail2 += s * s;
          --rank;
        }
        else
          break;
      }
      if (max_rank > 0)
        rank = std::min(rank, max_rank);
      SplitResult r;
      r.rank = rank;
      r.u = svd.u.leftCols(rank);
      r.rest = sv.head(rank).asDiagonal() * svd.v.leftCols(rank).transpose();
      return r;
    }

    //! TT-SVD over an arbitrary mode list (little-endian flattening assumed)
    inline std::vector<Core3> tt_svd(const VectorXd& data, const std::vector<int>& modes, double tol, int max_rank)
    {
      index_t total = 1;
      for (int n : modes)
        total *= n;
      if (total != data.size())
        throw shape_error("tt_svd: mode product does not match data length");
      const int d = int(modes.size());
      std::vector<Core3> cores;
      if (d == 1)
      {
        Core3 c(1, modes[0], 1);
        Eigen::Map<VectorXd>(c.a.data(), modes[0]) = data;
        cores.push_back(std::move(c));
        return cores;
      }
      const double norm = data.norm();
      const double delta = norm > 0.0 ? tol * norm / std::sqrt(double(d - 1)) : 0.0;
      MatrixXd cur = Eigen::Map<const MatrixXd>(data.data(), modes[0], total / modes[0]);
      int r_prev = 1;
      for (int k = 0; k + 1 < d; ++k)
      {
        SplitResult s = split_svd(cur, delta, max_rank);
        Core3 c(r_prev, modes[k], s.rank);
        Eigen::Map<MatrixXd>(c.a.data(), std::ptrdiff_t(r_prev) * modes[k], s.rank) = s.u;
        cores.push_back(std::move(c));
        r_prev = s.rank;
        if (k + 2 < d)
          cur = Eigen::Map<const MatrixXd>(s.rest.data(), std::ptrdiff_t(r_prev) * modes[k + 1],
                                           s.rest.cols() / modes[k + 1]);
        else
          cur = s.rest;
      }
      Core3 last(r_prev, modes[d - 1], 1);
      Eigen::Map<MatrixXd>(last.a.data(), r_prev, modes[d - 1]) = cur;
      cores.push_back(std::move(last));
      return cores;
    }

    //! bring cores 1..d-1 to right-orthonormal form; core 0 absorbs the norm
    inline void right_orthogonalize(std::vector<Core3>& cores)
    {
      for (int k = int(cores.size()) - 1; k > 0; --k)
      {
        Core3& c = cores[k];
        MatrixXd rt = c.right_unfold().transpose(); // (n*r1) x r0
        Eigen::HouseholderQR<MatrixXd> qr(rt);
        const int rnew = int(std::min(rt.rows(), rt.cols()));
        MatrixXd q = qr.householderQ() * MatrixXd::Identity(rt.rows(), rnew);
        MatrixXd r = qr.matrixQR().topRows(rnew).triangularView<Eigen::Upper>();
        Core3 nc(rnew, c.n, c.r1);
        nc.right_unfold() = q.transpose();
        Core3& p = cores[k - 1];
        MatrixXd merged = p.left_unfold() * r.transpose(); // (r_prev*n) x rnew
        Core3 np(p.r0, p.n, rnew);
        np.left_unfold() = merged;
        cores[k] = std::move(nc);
        cores[k - 1] = std::move(np);
      }
    }

    //! truncate an already right-orthogonal train left-to-right at cutoff delta
    inline void truncate_left_to_right(std::vector<Core3>& cores, double delta, int max_rank)
    {
      for (int k = 0; k + 1 < int(cores.size()); ++k)
      {
        Core3& c = cores[k];
        SplitResult s = split_svd(c.left_unfold(), delta, max_rank);
        Core3 nc(c.r0, c.n, s.rank);
        nc.left_unfold() = s.u;
        Core3& nx = cores[k + 1];
        MatrixXd merged = s.rest * nx.right_unfold(); // rank x (n*r1)
        Core3 nn(s.rank, nx.n, nx.r1);
        nn.right_unfold() = merged;
        cores[k] = std::move(nc);
        cores[k + 1] = std::move(nn);
      }
    }

    //! TT rounding: right-orthogonalize, then truncate left-to-right
    inline void round_cores(std::vector<Core3>& cores, double tol, int max_rank)
    {
      const int d = int(cores.size());
      if (d == 1)
        return;
      right_orthogonalize(cores);
      const double norm = cores.front().left_unfold().norm();
      const double delta = norm > 0.0 ? tol * norm / std::sqrt(double(d - 1)) : 0.0;
      truncate_left_to_right(cores, delta, max_rank);
    }
  }

  //! TT-SVD approximation of a dense vector with relative tolerance tol
  inline TTVector from_dense(const VectorXd& data, const std::vector<int>& modes, double tol, int max_rank = 0)
  {
    return TTVector(detail::tt_svd(data, modes, tol, max_rank));
  }

  //! TT-SVD approximation of a dense matrix over paired (row, col) digit modes
  inline TTMatrix from_dense(const MatrixXd& m, const std::vector<int>& row_modes,
                             const std::vector<int>& col_modes, double tol, int max_rank = 0)
  {
    if (row_modes.size() != col_modes.size())
      throw shape_error("from_dense: row/col mode lists differ in length");
    const int d = int(row_modes.size());
    index_t nr = 1, nc = 1;
    for (int k = 0; k < d; ++k)
    {
      nr *= row_modes[k];
      nc *= col_modes[k];
    }
    if (nr != m.rows() || nc != m.cols())
      throw shape_error("from_dense: mode products do not match matrix shape");
    VectorXd flat(nr * nc);
    std::vector<int> modes(d);
    for (int k = 0; k < d; ++k)
      modes[k] = row_modes[k] * col_modes[k];
    for (index_t l = 0; l < nr * nc; ++l)
    {
      index_t rest = l, i = 0, j = 0, ri = 1, rj = 1;
      for (int k = 0; k < d; ++k)
      {
        const int nk = row_modes[k], mk = col_modes[k];
        const int digit = int(rest % (nk * mk));
        rest /= nk * mk;
        i += ri * (digit % nk);
        j += rj * (digit / nk);
        ri *= nk;
        rj *= mk;
      }
      flat(l) = m(i, j);
    }
    return TTMatrix(detail::tt_svd(flat, modes, tol, max_rank), row_modes, col_modes);
  }

  //! recompress to relative tolerance tol (0 removes only numerical-zero modes)
  inline TTVector round(const TTVector& t, double tol, int max_rank = 0)
  {
    TTVector out = t;
    detail::round_cores(out.cores, tol, max_rank);
    return out;
  }

  inline TTMatrix round(const TTMatrix& m, double tol, int max_rank = 0)
  {
    TTMatrix out = m;
    detail::round_cores(out.cores, tol, max_rank);
    return out;
  }

  // ---------------------------------------------------------------------------
  // exact arithmetic

  inline TTVector scale(const TTVector& t, double s)
  {
    TTVector out = t;
    for (double& x : out.cores.front().a)
      x *= s;
    return out;
  }

  inline TTMatrix scale(const TTMatrix& m, double s)
  {
    TTMatrix out = m;
    for (double& x : out.cores.front().a)
      x *= s;
    return out;
  }

  namespace detail
  {
    //! structural sum of two core chains: ranks add, boundary cores concatenate
    inline std::vector<Core3> add_cores(const std::vector<Core3>& a, const std::vector<Core3>& b)
    {
      if (a.size() != b.size())
        throw shape_error("add: dimension mismatch");
      const int d = int(a.size());
      for (int k = 0; k < d; ++k)
        if (a[k].n != b[k].n)
          throw shape_error("add: mode size mismatch at core " + std::to_string(k));
      if (d == 1)
      {
        Core3 c = a[0];
        for (std::size_t i = 0; i < c.a.size(); ++i)
          c.a[i] += b[0].a[i];
        return { c };
      }
      std::vector<Core3> out;
      for (int k = 0; k < d; ++k)
      {
        const Core3& ca = a[k];
        const Core3& cb = b[k];
        const int r0 = k == 0 ? 1 : ca.r0 + cb.r0;
        const int r1 = k == d - 1 ? 1 : ca.r1 + cb.r1;
        Core3 c(r0, ca.n, r1);
        for (int i = 0; i < ca.n; ++i)
        {
          for (int al = 0; al < ca.r0; ++al)
            for (int be = 0; be < ca.r1; ++be)
              c.at(al, i, be) = ca.at(al, i, be);
          const int oa = k == 0 ? 0 : ca.r0;
          const int ob = k == d - 1 ? 0 : ca.r1;
          for (int al = 0; al < cb.r0; ++al)
            for (int be = 0; be < cb.r1; ++be)
              c.at(oa + al, i, ob + be) += cb.at(al, i, be);
        }
        out.push_back(std::move(c));
      }
      return out;
    }
  }

  inline TTVector add(const TTVector& a, const TTVector& b)
  {
    return TTVector(detail::add_cores(a.cores, b.cores));
  }

  inline TTMatrix add(const TTMatrix& a, const TTMatrix& b)
  {
    if (a.row_modes != b.row_modes || a.col_modes != b.col_modes)
      throw shape_error("add: matrix mode mismatch");
    return TTMatrix(detail::add_cores(a.cores, b.cores), a.row_modes, a.col_modes);
  }

  //! elementwise product; ranks multiply
  inline TTVector hadamard(const TTVector& a, const TTVector& b)
  {
    if (a.dims() != b.dims())
      throw shape_error("hadamard: dimension mismatch");
    std::vector<Core3> out;
    for (int k = 0; k < a.dims(); ++k)
    {
      const Core3& ca = a.cores[k];
      const Core3& cb = b.cores[k];
      if (ca.n != cb.n)
        throw shape_error("hadamard: mode size mismatch");
      Core3 c(ca.r0 * cb.r0, ca.n, ca.r1 * cb.r1);
      for (int i = 0; i < ca.n; ++i)
        for (int a1 = 0; a1 < ca.r0; ++a1)
          for (int b1 = 0; b1 < cb.r0; ++b1)
            for (int a2 = 0; a2 < ca.r1; ++a2)
              for (int b2 = 0; b2 < cb.r1; ++b2)
                c.at(a1 * cb.r0 + b1, i, a2 * cb.r1 + b2) = ca.at(a1, i, a2) * cb.at(b1, i, b2);
      out.push_back(std::move(c));
    }
    return TTVector(std::move(out));
  }

  inline double dot(const TTVector& a, const TTVector& b)
  {
    if (a.dims() != b.dims())
      throw shape_error("dot: dimension mismatch");
    MatrixXd w = MatrixXd::Ones(1, 1);
    for (int k = 0; k < a.dims(); ++k)
    {
      const Core3& ca = a.cores[k];
      const Core3& cb = b.cores[k];
      if (ca.n != cb.n)
        throw shape_error("dot: mode size mismatch");
      MatrixXd wn = MatrixXd::Zero(ca.r1, cb.r1);
      for (int i = 0; i < ca.n; ++i)
        wn += ca.slice(i).transpose() * w * cb.slice(i);
      w = std::move(wn);
    }
    return w(0, 0);
  }

  //! Frobenius norm via orthogonalization (accurate also for near-zero vectors)
  inline double norm(const TTVector& t)
  {
    std::vector<Core3> cs = t.cores;
    detail::right_orthogonalize(cs);
    return cs.front().left_unfold().norm();
  }

  inline double norm(const TTMatrix& m)
  {
    std::vector<Core3> cs = m.cores;
    detail::right_orthogonalize(cs);
    return cs.front().left_unfold().norm();
  }

  inline TTVector matvec(const TTMatrix& m, const TTVector& v)
  {
    if (m.dims() != v.dims())
      throw shape_error("matvec: dimension mismatch");
    std::vector<Core3> out;
    for (int k = 0; k < m.dims(); ++k)
    {
      const int nr = m.row_modes[k], nc = m.col_modes[k];
      const Core3& cv = v.cores[k];
      if (cv.n != nc)
        throw shape_error("matvec: mode size mismatch at core " + std::to_string(k));
      const Core3& cm = m.cores[k];
      Core3 c(cm.r0 * cv.r0, nr, cm.r1 * cv.r1);
      for (int i = 0; i < nr; ++i)
        for (int j = 0; j < nc; ++j)
          for (int a1 = 0; a1 < cm.r0; ++a1)
            for (int b1 = 0; b1 < cv.r0; ++b1)
              for (int a2 = 0; a2 < cm.r1; ++a2)
                for (int b2 = 0; b2 < cv.r1; ++b2)
                  c.at(a1 * cv.r0 + b1, i, a2 * cv.r1 + b2) +=
                      cm.at(a1, i + nr * j, a2) * cv.at(b1, j, b2);
      out.push_back(std::move(c));
    }
    return TTVector(std::move(out));
  }

  inline TTMatrix matmul(const TTMatrix& a, const TTMatrix& b)
  {
    if (a.dims() != b.dims() || a.col_modes != b.row_modes)
      throw shape_error("matmul: incompatible shapes");
    std::vector<Core3> out;
    for (int k = 0; k < a.dims(); ++k)
    {
      const int nr = a.row_modes[k], ns = a.col_modes[k], nc = b.col_modes[k];
      const Core3& ca = a.cores[k];
      const Core3& cb = b.cores[k];
      Core3 c(ca.r0 * cb.r0, nr * nc, ca.r1 * cb.r1);
      for (int i = 0; i < nr; ++i)
        for (int j = 0; j < nc; ++j)
          for (int s = 0; s < ns; ++s)
            for (int a1 = 0; a1 < ca.r0; ++a1)
              for (int b1 = 0; b1 < cb.r0; ++b1)
                for (int a2 = 0; a2 < ca.r1; ++a2)
                  for (int b2 = 0; b2 < cb.r1; ++b2)
                    c.at(a1 * cb.r0 + b1, i + nr * j, a2 * cb.r1 + b2) +=
                        ca.at(a1, i + nr * s, a2) * cb.at(b1, s + ns * j, b2);
      out.push_back(std::move(c));
    }
    return TTMatrix(std::move(out), a.row_modes, b.col_modes);
  }

  inline TTMatrix transpose(const TTMatrix& m)
  {
    std::vector<Core3> out;
    for (int k = 0; k < m.dims(); ++k)
    {
      const int nr = m.row_modes[k], nc = m.col_modes[k];
      const Core3& cm = m.cores[k];
      Core3 c(cm.r0, cm.n, cm.r1);
      for (int i = 0; i < nr; ++i)
        for (int j = 0; j < nc; ++j)
          for (int al = 0; al < cm.r0; ++al)
            for (int be = 0; be < cm.r1; ++be)
              c.at(al, j + nc * i, be) = cm.at(al, i + nr * j, be);
      out.push_back(std::move(c));
    }
    return TTMatrix(std::move(out), m.col_modes, m.row_modes);
  }

  //! diagonal matrix with the entries of v
  inline TTMatrix diag_matrix(const TTVector& v)
  {
    std::vector<Core3> out;
    for (const Core3& cv : v.cores)
    {
      Core3 c(cv.r0, cv.n * cv.n, cv.r1);
      for (int i = 0; i < cv.n; ++i)
        for (int al = 0; al < cv.r0; ++al)
          for (int be = 0; be < cv.r1; ++be)
            c.at(al, i + cv.n * i, be) = cv.at(al, i, be);
      out.push_back(std::move(c));
    }
    return TTMatrix(std::move(out), v.mode_sizes(), v.mode_sizes());
  }

  //! main diagonal of a square-mode TT matrix
  inline TTVector diagonal_of(const TTMatrix& m)
  {
    if (m.row_modes != m.col_modes)
      throw shape_error("diagonal_of: square modes required");
    std::vector<Core3> out;
    for (int k = 0; k < m.dims(); ++k)
    {
      const int n = m.row_modes[k];
      const Core3& cm = m.cores[k];
      Core3 c(cm.r0, n, cm.r1);
      for (int i = 0; i < n; ++i)
        for (int al = 0; al < cm.r0; ++al)
          for (int be = 0; be < cm.r1; ++be)
            c.at(al, i, be) = cm.at(al, i + n * i, be);
      out.push_back(std::move(c));
    }
    return TTVector(std::move(out));
  }

  //! Kronecker-style concatenation: A's cores come first and own the fast digits,
  //! so dense(kron(A,B))[ia + size(A)*ib] = dense(A)[ia] * dense(B)[ib].
  inline TTVector kron(const TTVector& a, const TTVector& b)
  {
    std::vector<Core3> cs = a.cores;
    cs.insert(cs.end(), b.cores.begin(), b.cores.end());
    return TTVector(std::move(cs));
  }

  inline TTMatrix kron(const TTMatrix& a, const TTMatrix& b)
  {
    std::vector<Core3> cs = a.cores;
    cs.insert(cs.end(), b.cores.begin(), b.cores.end());
    std::vector<int> rm = a.row_modes, cm = a.col_modes;
    rm.insert(rm.end(), b.row_modes.begin(), b.row_modes.end());
    cm.insert(cm.end(), b.col_modes.begin(), b.col_modes.end());
    return TTMatrix(std::move(cs), std::move(rm), std::move(cm));
  }

  // ---------------------------------------------------------------------------
  // block cores and the block-matrix product

  //! TT-matrix core viewed as a block matrix: block (alpha, beta) is an nr x nc slice
  struct BlockCore
  {
    int brows = 1;
    int bcols = 1;
    int nr = 1;
    int nc = 1;
    std::vector<MatrixXd> blocks; // row-major block order

    BlockCore() = default;
    BlockCore(int brows_, int bcols_, int nr_, int nc_)
      : brows(brows_), bcols(bcols_), nr(nr_), nc(nc_),
        blocks(std::size_t(brows_) * bcols_, MatrixXd::Zero(nr_, nc_))
    {}

    MatrixXd& block(int alpha, int beta) { return blocks[std::size_t(alpha) * bcols + beta]; }
    const MatrixXd& block(int alpha, int beta) const { return blocks[std::size_t(alpha) * bcols + beta]; }
  };

  namespace detail
  {
    //! Kronecker product matching the little-endian digit order: the FIRST
    //! factor owns the fast row/column digits.
    inline MatrixXd kron_fastfirst(const MatrixXd& a, const MatrixXd& b)
    {
      MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
      for (Eigen::Index ib = 0; ib < b.rows(); ++ib)
        for (Eigen::Index jb = 0; jb < b.cols(); ++jb)
          out.block(ib * a.rows(), jb * a.cols(), a.rows(), a.cols()) = b(ib, jb) * a;
      return out;
    }
  }

  //! block-matrix product where scalar multiplication is replaced by the
  //! digit-ordered Kronecker product; chaining all cores of a TT matrix this way
  //! reproduces its materialization as the single remaining block.
  inline BlockCore bowtie(const BlockCore& k, const BlockCore& l)
  {
    if (k.bcols != l.brows)
      throw shape_error("bowtie: inner block counts differ");
    BlockCore out(k.brows, l.bcols, k.nr * l.nr, k.nc * l.nc);
    for (int al = 0; al < k.brows; ++al)
      for (int ga = 0; ga < l.bcols; ++ga)
      {
        MatrixXd acc = MatrixXd::Zero(out.nr, out.nc);
        for (int be = 0; be < k.bcols; ++be)
          acc += detail::kron_fastfirst(k.block(al, be), l.block(be, ga));
        out.block(al, ga) = std::move(acc);
      }
    return out;
  }

  inline BlockCore block_core_from(const TTMatrix& m, int k)
  {
    const Core3& c = m.cores[k];
    const int nr = m.row_modes[k], nc = m.col_modes[k];
    BlockCore b(c.r0, c.r1, nr, nc);
    for (int al = 0; al < c.r0; ++al)
      for (int be = 0; be < c.r1; ++be)
        for (int i = 0; i < nr; ++i)
          for (int j = 0; j < nc; ++j)
            b.block(al, be)(i, j) = c.at(al, i + nr * j, be);
    return b;
  }

  inline TTMatrix tt_matrix_from_blocks(const std::vector<BlockCore>& chain)
  {
    std::vector<Core3> cs;
    std::vector<int> rm, cm;
    for (const BlockCore& b : chain)
    {
      Core3 c(b.brows, b.nr * b.nc, b.bcols);
      for (int al = 0; al < b.brows; ++al)
        for (int be = 0; be < b.bcols; ++be)
          for (int i = 0; i < b.nr; ++i)
            for (int j = 0; j < b.nc; ++j)
              c.at(al, i + b.nr * j, be) = b.block(al, be)(i, j);
      cs.push_back(std::move(c));
      rm.push_back(b.nr);
      cm.push_back(b.nc);
    }
    return TTMatrix(std::move(cs), std::move(rm), std::move(cm));
  }

  // ---------------------------------------------------------------------------
  // effective rank

  namespace detail
  {
    //! storage-matching effective rank: solve sum-of-core-sizes = S for a uniform
    //! rank, with actual mode sizes as coefficients.
    inline double erank_from(const std::vector<int>& sizes, const std::vector<int>& r)
    {
      const int d = int(sizes.size());
      double storage = 0.0;
      for (int k = 0; k < d; ++k)
        storage += double(r[k]) * sizes[k] * r[k + 1];
      if (d == 1)
        return storage / sizes[0];
      if (d == 2)
        return storage / (sizes[0] + sizes[1]);
      double quad = 0.0;
      for (int k = 1; k + 1 < d; ++k)
        quad += sizes[k];
      const double lin = sizes[0] + sizes[d - 1];
      return (-lin + std::sqrt(lin * lin + 4.0 * quad * storage)) / (2.0 * quad);
    }
  }

  inline double erank(const TTVector& t)
  {
    return detail::erank_from(t.mode_sizes(), t.ranks());
  }

  inline double erank(const TTMatrix& m)
  {
    std::vector<int> sizes(m.dims());
    for (int k = 0; k < m.dims(); ++k)
      sizes[k] = m.row_modes[k] * m.col_modes[k];
    return detail::erank_from(sizes, m.ranks());
  }
}
