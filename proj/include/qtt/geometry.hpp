#pragma once

//! Quadrangle geometry: the bilinear reference-to-world map, its restriction to
//! a 2^d x 2^d tensor grid, and the element-center Jacobian data needed for
//! one-point quadrature.  The key structural fact used downstream is that the
//! element-center Jacobian (and its determinant) is affine in the element
//! indices (i, j), so it separates into a base part plus i- and j-increments.

#include <array>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "qtt/errors.hpp"
#include "qtt/tensor_train.hpp"
#include "qtt/zorder.hpp"

namespace qtt
{
  using Eigen::Matrix2d;
  using Eigen::Vector2d;

  //! vertices in counterclockwise order, mapped to the reference square corners
  //! (-1,-1), (1,-1), (1,1), (-1,1)
  struct Quadrangle
  {
    std::array<Vector2d, 4> v;
  };

  //! corner of the reference square, components in {-1, +1}
  struct Corner
  {
    int cx = -1;
    int cy = -1;
  };

  //! fixed corner enumeration used by assembly loops (matches the vertex order)
  inline std::array<Corner, 4> reference_corners()
  {
    return { Corner{ -1, -1 }, Corner{ 1, -1 }, Corner{ 1, 1 }, Corner{ -1, 1 } };
  }

  //! bilinear shape function values at (xi, eta), corner order as above
  inline std::array<double, 4> shape_values(double xi, double eta)
  {
    return {
      (1 - xi) * (1 - eta) / 4,
      (1 + xi) * (1 - eta) / 4,
      (1 + xi) * (1 + eta) / 4,
      (1 - xi) * (1 + eta) / 4,
    };
  }

  //! gradients (d/dxi, d/deta) of the shape functions at (xi, eta)
  inline std::array<Vector2d, 4> shape_gradients(double xi, double eta)
  {
    return {
      Vector2d(-(1 - eta) / 4, -(1 - xi) / 4),
      Vector2d((1 - eta) / 4, -(1 + xi) / 4),
      Vector2d((1 + eta) / 4, (1 + xi) / 4),
      Vector2d(-(1 + eta) / 4, (1 - xi) / 4),
    };
  }

  inline Vector2d bilinear_map(const Quadrangle& q, double xi, double eta)
  {
    const auto phi = shape_values(xi, eta);
    return phi[0] * q.v[0] + phi[1] * q.v[1] + phi[2] * q.v[2] + phi[3] * q.v[3];
  }

  //! Jacobian of the bilinear map at (xi, eta); columns are d/dxi and d/deta
  inline Matrix2d bilinear_jacobian(const Quadrangle& q, double xi, double eta)
  {
    const auto g = shape_gradients(xi, eta);
    Matrix2d j = Matrix2d::Zero();
    for (int c = 0; c < 4; ++c)
    {
      j.col(0) += q.v[c] * g[c](0);
      j.col(1) += q.v[c] * g[c](1);
    }
    return j;
  }

  //! a usable quadrangle has a positive map Jacobian at all four corners
  //! (convexity + counterclockwise orientation)
  inline void validate_quadrangle(const Quadrangle& q)
  {
    for (const Corner c : reference_corners())
    {
      const double det = bilinear_jacobian(q, double(c.cx), double(c.cy)).determinant();
      if (!(det > 0.0))
        throw degenerate_element_error("quadrangle has non-positive Jacobian at corner (" +
                                       std::to_string(c.cx) + "," + std::to_string(c.cy) + ")");
    }
  }

  //! grid map coefficients: node (i, j) of the 2^d x 2^d grid sits at
  //! q0 + qx*i + qy*j + qxy*i*j
  struct GridCoefficients
  {
    Vector2d q0, qx, qy, qxy;
    int d = 1;
  };

  inline GridCoefficients grid_coefficients(const Quadrangle& q, int d)
  {
    if (d < 1)
      throw shape_error("grid_coefficients: d must be >= 1");
    const double s = 2.0 / double((index_t(1) << d) - 1);
    const Vector2d a0 = (q.v[0] + q.v[1] + q.v[2] + q.v[3]) / 4;
    const Vector2d axi = (-q.v[0] + q.v[1] + q.v[2] - q.v[3]) / 4;
    const Vector2d aeta = (-q.v[0] - q.v[1] + q.v[2] + q.v[3]) / 4;
    const Vector2d axieta = (q.v[0] - q.v[1] + q.v[2] - q.v[3]) / 4;
    GridCoefficients g;
    g.q0 = a0 - axi - aeta + axieta; // node (0,0) = first vertex
    g.qx = s * (axi - axieta);
    g.qy = s * (aeta - axieta);
    g.qxy = s * s * axieta;
    g.d = d;
    return g;
  }

  //! world position of grid node (i, j); fractional arguments give points
  //! between nodes (element centers use i + 1/2)
  inline Vector2d grid_point(const GridCoefficients& g, double i, double j)
  {
    return g.q0 + g.qx * i + g.qy * j + g.qxy * (i * j);
  }

  //! affine decomposition of the element-center Jacobian over element indices:
  //! J(i,j) = base + i*di + j*dj, and likewise det(i,j) = det_base + i*det_di + j*det_dj
  struct JacobianField
  {
    Matrix2d base, di, dj;
    double det_base = 0, det_di = 0, det_dj = 0;
    int d = 1;
  };

  namespace detail
  {
    inline double cross2(const Vector2d& a, const Vector2d& b)
    {
      return a(0) * b(1) - a(1) * b(0);
    }
  }

  inline JacobianField jacobian_parts(const Quadrangle& q, int d)
  {
    validate_quadrangle(q);
    const GridCoefficients g = grid_coefficients(q, d);
    // center of element (i,j) is grid point (i+1/2, j+1/2); the Jacobian of the
    // element map at its center is then affine in (i,j):
    //   col_xi  = qx/2 + qxy*(2j+1)/4,  col_eta = qy/2 + qxy*(2i+1)/4
    const Vector2d u = g.qx / 2;
    const Vector2d v = g.qy / 2;
    const Vector2d w = g.qxy / 4;
    JacobianField f;
    f.d = d;
    f.base.col(0) = u + w;
    f.base.col(1) = v + w;
    f.di.col(0) = Vector2d::Zero();
    f.di.col(1) = 2 * w;
    f.dj.col(0) = 2 * w;
    f.dj.col(1) = Vector2d::Zero();
    f.det_base = detail::cross2(u + w, v + w);
    f.det_di = 2 * detail::cross2(u, w); // cross terms in w vanish
    f.det_dj = 2 * detail::cross2(w, v);
    // affine determinant is positive on all real elements iff positive at the
    // four extreme real element indices
    const double last = double((index_t(1) << d) - 2);
    for (const double i : { 0.0, last })
      for (const double j : { 0.0, last })
        if (!(f.det_base + i * f.det_di + j * f.det_dj > 0.0))
          throw degenerate_element_error("non-positive element Jacobian inside the grid");
    return f;
  }
}
