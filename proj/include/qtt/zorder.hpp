#pragma once

//! z-order (bit-interleaved) indexing of 2^d x 2^d grids and the interleaving
//! Kronecker product that operates on it.
//!
//! A grid point (i, j) gets the z-index with digits z_k = i_k + 2*j_k, i.e. the
//! i-bits sit at the even bit positions.  The canonical (column-contiguous)
//! index is i + 2^d * j.

#include <utility>
#include <vector>

#include "qtt/errors.hpp"
#include "qtt/tensor_train.hpp"

namespace qtt
{
  inline index_t canonical_index(index_t i, index_t j, int d)
  {
    if (i < 0 || j < 0 || i >= (index_t(1) << d) || j >= (index_t(1) << d))
      throw shape_error("canonical_index: coordinates out of range");
    return i + (index_t(1) << d) * j;
  }

  inline index_t z_index(index_t i, index_t j, int d)
  {
    if (i < 0 || j < 0 || i >= (index_t(1) << d) || j >= (index_t(1) << d))
      throw shape_error("z_index: coordinates out of range");
    index_t z = 0;
    for (int k = 0; k < d; ++k)
      z |= (((i >> k) & 1) << (2 * k)) | (((j >> k) & 1) << (2 * k + 1));
    return z;
  }

  inline std::pair<index_t, index_t> z_split(index_t z, int d)
  {
    if (z < 0 || z >= (index_t(1) << (2 * d)))
      throw shape_error("z_split: index out of range");
    index_t i = 0, j = 0;
    for (int k = 0; k < d; ++k)
    {
      i |= ((z >> (2 * k)) & 1) << k;
      j |= ((z >> (2 * k + 1)) & 1) << k;
    }
    return { i, j };
  }

  //! perm[z] = canonical index of the grid point whose z-index is z
  inline std::vector<index_t> z_permutation(int d)
  {
    const index_t total = index_t(1) << (2 * d);
    std::vector<index_t> perm(total);
    for (index_t z = 0; z < total; ++z)
    {
      auto [i, j] = z_split(z, d);
      perm[z] = canonical_index(i, j, d);
    }
    return perm;
  }

  //! interleaving Kronecker product of two binary-mode TT vectors: the first
  //! operand supplies the i-axis (fast) bit of every mode-4 digit, so that
  //! result[z(i,j)] = a[i] * b[j].
  inline TTVector z_kron(const TTVector& a, const TTVector& b)
  {
    if (a.dims() != b.dims())
      throw shape_error("z_kron: dimension mismatch");
    std::vector<Core3> out;
    for (int k = 0; k < a.dims(); ++k)
    {
      const Core3& ca = a.cores[k];
      const Core3& cb = b.cores[k];
      if (ca.n != 2 || cb.n != 2)
        throw shape_error("z_kron: binary modes required");
      Core3 c(ca.r0 * cb.r0, 4, ca.r1 * cb.r1);
      for (int bi = 0; bi < 2; ++bi)
        for (int bj = 0; bj < 2; ++bj)
        {
          const MatrixXd s = detail::kron_fastfirst(ca.slice(bi), cb.slice(bj));
          // rank pairing from kron_fastfirst: a's rank index fastest
          for (int al = 0; al < c.r0; ++al)
            for (int be = 0; be < c.r1; ++be)
              c.at(al, bi + 2 * bj, be) = s(al, be);
        }
      out.push_back(std::move(c));
    }
    return TTVector(std::move(out));
  }

  //! matrix version: rows and columns are interleaved independently, so that
  //! result[z(i,i'), z(j,j')] = a[i,j] * b[i',j'].
  inline TTMatrix z_kron(const TTMatrix& a, const TTMatrix& b)
  {
    if (a.dims() != b.dims())
      throw shape_error("z_kron: dimension mismatch");
    std::vector<Core3> out;
    std::vector<int> rm, cm;
    for (int k = 0; k < a.dims(); ++k)
    {
      const int anr = a.row_modes[k], anc = a.col_modes[k];
      const int bnr = b.row_modes[k], bnc = b.col_modes[k];
      if (anr > 2 || anc > 2 || bnr > 2 || bnc > 2)
        throw shape_error("z_kron: binary row/col modes required");
      const Core3& ca = a.cores[k];
      const Core3& cb = b.cores[k];
      const int nr = anr * bnr, nc = anc * bnc;
      Core3 c(ca.r0 * cb.r0, nr * nc, ca.r1 * cb.r1);
      for (int i1 = 0; i1 < anr; ++i1)
        for (int j1 = 0; j1 < anc; ++j1)
          for (int i2 = 0; i2 < bnr; ++i2)
            for (int j2 = 0; j2 < bnc; ++j2)
            {
              const MatrixXd s = detail::kron_fastfirst(ca.slice(i1 + anr * j1), cb.slice(i2 + bnr * j2));
              const int i = i1 + anr * i2;
              const int j = j1 + anc * j2;
              for (int al = 0; al < c.r0; ++al)
                for (int be = 0; be < c.r1; ++be)
                  c.at(al, i + nr * j, be) = s(al, be);
            }
      out.push_back(std::move(c));
      rm.push_back(nr);
      cm.push_back(nc);
    }
    return TTMatrix(std::move(out), std::move(rm), std::move(cm));
  }

  //! coordinate fields over the z-ordered grid: first the i-field, then the
  //! j-field, each of length 4^d with value i resp. j at z(i,j)
  inline std::pair<TTVector, TTVector> z_meshgrid(int d)
  {
    const TTVector range = tt_range(d);
    const TTVector one = tt_ones(std::vector<int>(d, 2));
    return { z_kron(range, one), z_kron(one, range) };
  }

  //! the field a + b*i + c*j over the z-ordered grid, built directly with rank 2
  //! (rank 1 when b == c == 0)
  inline TTVector z_linear_field(int d, double a, double b, double c)
  {
    if (d < 1)
      throw shape_error("z_linear_field: d must be >= 1");
    if (b == 0.0 && c == 0.0)
      return tt_constant(std::vector<int>(d, 4), a);
    auto g = [&](int k, int z) {
      const double w = double(index_t(1) << k);
      return w * (b * (z & 1) + c * ((z >> 1) & 1));
    };
    if (d == 1)
    {
      Core3 c0(1, 4, 1);
      for (int z = 0; z < 4; ++z)
        c0.at(0, z, 0) = a + g(0, z);
      return TTVector({ c0 });
    }
    std::vector<Core3> cs;
    {
      Core3 c0(1, 4, 2);
      for (int z = 0; z < 4; ++z)
      {
        c0.at(0, z, 0) = 1.0;
        c0.at(0, z, 1) = g(0, z);
      }
      cs.push_back(std::move(c0));
    }
    for (int k = 1; k + 1 < d; ++k)
    {
      Core3 ck(2, 4, 2);
      for (int z = 0; z < 4; ++z)
      {
        ck.at(0, z, 0) = 1.0;
        ck.at(0, z, 1) = g(k, z);
        ck.at(1, z, 1) = 1.0;
      }
      cs.push_back(std::move(ck));
    }
    {
      Core3 cd(2, 4, 1);
      for (int z = 0; z < 4; ++z)
      {
        cd.at(0, z, 0) = a + g(d - 1, z);
        cd.at(1, z, 0) = 1.0;
      }
      cs.push_back(std::move(cd));
    }
    return TTVector(std::move(cs));
  }
}
