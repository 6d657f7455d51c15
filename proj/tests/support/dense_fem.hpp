#pragma once

#include <qtt/coupling.hpp>
#include <qtt/geometry.hpp>

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <utility>
#include <vector>

//! Dense finite element reference implementations, written directly from the
//! discretization definition so library results can be checked against an
//! independent code path.
namespace qtt::testing
{
  using Eigen::Matrix2d;
  using Eigen::Vector2d;

  //! bilinear image of reference coordinates (xi, eta) in [-1,1]^2
  inline Vector2d dense_map(const Quadrangle& q, double xi, double eta)
  {
    const double w0 = (1 - xi) * (1 - eta) / 4;
    const double w1 = (1 + xi) * (1 - eta) / 4;
    const double w2 = (1 + xi) * (1 + eta) / 4;
    const double w3 = (1 - xi) * (1 + eta) / 4;
    return w0 * q.v[0] + w1 * q.v[1] + w2 * q.v[2] + w3 * q.v[3];
  }

  //! world position of lattice node (i, j) on the 2^d x 2^d subdomain grid
  inline Vector2d dense_node(const Quadrangle& q, int d, double i, double j)
  {
    const double n1 = double((1 << d) - 1);
    return dense_map(q, -1.0 + 2.0 * i / n1, -1.0 + 2.0 * j / n1);
  }

  struct DenseSystem
  {
    MatrixXd stiffness;
    MatrixXd mass;
  };

  //! element-loop assembly with one center integration point per element;
  //! nodes in canonical order i + n*j
  inline DenseSystem dense_subdomain(const Quadrangle& q, int d)
  {
    const int n = 1 << d;
    const index_t nn = index_t(n) * n;
    DenseSystem sys;
    sys.stiffness = MatrixXd::Zero(nn, nn);
    sys.mass = MatrixXd::Zero(nn, nn);
    const int ox[4] = { 0, 1, 1, 0 };
    const int oy[4] = { 0, 0, 1, 1 };
    const double gxi[4] = { -0.25, 0.25, 0.25, -0.25 };
    const double geta[4] = { -0.25, -0.25, 0.25, 0.25 };
    for (int ej = 0; ej + 1 < n; ++ej)
      for (int ei = 0; ei + 1 < n; ++ei)
      {
        std::array<Vector2d, 4> p;
        for (int c = 0; c < 4; ++c)
          p[std::size_t(c)] = dense_node(q, d, ei + ox[c], ej + oy[c]);
        Matrix2d jac;
        jac.col(0) = (-p[0] + p[1] + p[2] - p[3]) / 4.0;
        jac.col(1) = (-p[0] - p[1] + p[2] + p[3]) / 4.0;
        const double det = jac.determinant();
        const Matrix2d jit = jac.inverse().transpose();
        std::array<Vector2d, 4> grad;
        for (int c = 0; c < 4; ++c)
          grad[std::size_t(c)] = jit * Vector2d(gxi[c], geta[c]);
        for (int c1 = 0; c1 < 4; ++c1)
          for (int c2 = 0; c2 < 4; ++c2)
          {
            const index_t a = (ei + ox[c1]) + index_t(n) * (ej + oy[c1]);
            const index_t b = (ei + ox[c2]) + index_t(n) * (ej + oy[c2]);
            sys.stiffness(a, b) += 4.0 * det * grad[std::size_t(c1)].dot(grad[std::size_t(c2)]);
            sys.mass(a, b) += 4.0 * det * 0.25 * 0.25;
          }
      }
    return sys;
  }

  struct UnionSolution
  {
    std::vector<VectorXd> per_quad; //!< canonical node order per subdomain
    double energy = 0.0;
  };

  //! glue the subdomain lattices by world position and solve the Poisson
  //! problem on the union mesh with homogeneous Dirichlet data
  inline UnionSolution dense_union_solve(const DomainConfig& cfg, int d,
                                         const std::function<double(const Vector2d&)>& f)
  {
    const int n = 1 << d;
    const index_t nn = index_t(n) * n;
    const int q = int(cfg.quads.size());

    std::map<std::pair<long long, long long>, int> ids;
    std::vector<Vector2d> pos;
    std::vector<std::vector<int>> node_of(std::size_t(q), std::vector<int>(std::size_t(nn), -1));
    const double key_scale = 1e7;
    auto find_or_add = [&](const Vector2d& p) -> int {
      const long long kx = llround(p.x() * key_scale);
      const long long ky = llround(p.y() * key_scale);
      for (long long dx = -1; dx <= 1; ++dx)
        for (long long dy = -1; dy <= 1; ++dy)
        {
          auto it = ids.find({ kx + dx, ky + dy });
          if (it != ids.end() && (pos[std::size_t(it->second)] - p).norm() < 1e-9)
            return it->second;
        }
      const int id = int(pos.size());
      ids[{ kx, ky }] = id;
      pos.push_back(p);
      return id;
    };
    for (int m = 0; m < q; ++m)
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i)
          node_of[std::size_t(m)][std::size_t(i + index_t(n) * j)] =
              find_or_add(dense_node(cfg.quads[std::size_t(m)], d, i, j));

    const int nu = int(pos.size());
    MatrixXd stiff = MatrixXd::Zero(nu, nu);
    MatrixXd mass = MatrixXd::Zero(nu, nu);
    for (int m = 0; m < q; ++m)
    {
      const DenseSystem sys = dense_subdomain(cfg.quads[std::size_t(m)], d);
      for (index_t a = 0; a < nn; ++a)
        for (index_t b = 0; b < nn; ++b)
        {
          const int ga = node_of[std::size_t(m)][std::size_t(a)];
          const int gb = node_of[std::size_t(m)][std::size_t(b)];
          stiff(ga, gb) += sys.stiffness(a, b);
          mass(ga, gb) += sys.mass(a, b);
        }
    }

    std::vector<bool> fixed(std::size_t(nu), false);
    for (int m = 0; m < q; ++m)
      for (Side s : cfg.dirichlet[std::size_t(m)])
        for (int t = 0; t < n; ++t)
        {
          int i = 0, j = 0;
          switch (s)
          {
            case Side::bottom: i = t; j = 0; break;
            case Side::right: i = n - 1; j = t; break;
            case Side::top: i = n - 1 - t; j = n - 1; break;
            case Side::left: i = 0; j = n - 1 - t; break;
          }
          fixed[std::size_t(node_of[std::size_t(m)][std::size_t(i + index_t(n) * j)])] = true;
        }

    VectorXd fbar(nu);
    for (int a = 0; a < nu; ++a)
      fbar[a] = f(pos[std::size_t(a)]);
    const VectorXd force = mass * fbar;

    std::vector<int> free_ids;
    for (int a = 0; a < nu; ++a)
      if (!fixed[std::size_t(a)])
        free_ids.push_back(a);
    const int nf = int(free_ids.size());
    MatrixXd kff(nf, nf);
    VectorXd ff(nf);
    for (int a = 0; a < nf; ++a)
    {
      ff[a] = force[free_ids[std::size_t(a)]];
      for (int b = 0; b < nf; ++b)
        kff(a, b) = stiff(free_ids[std::size_t(a)], free_ids[std::size_t(b)]);
    }
    const VectorXd uf = kff.partialPivLu().solve(ff);

    VectorXd u = VectorXd::Zero(nu);
    for (int a = 0; a < nf; ++a)
      u[free_ids[std::size_t(a)]] = uf[a];

    UnionSolution sol;
    sol.energy = uf.dot(kff * uf);
    sol.per_quad.assign(std::size_t(q), VectorXd(nn));
    for (int m = 0; m < q; ++m)
      for (index_t a = 0; a < nn; ++a)
        sol.per_quad[std::size_t(m)][a] = u[node_of[std::size_t(m)][std::size_t(a)]];
    return sol;
  }
}
