#pragma once

//! Exception types shared by all qtt modules.

#include <stdexcept>
#include <string>

namespace qtt
{
  //! incompatible tensor-train shapes (mode sizes, rank chains, dimension counts)
  class shape_error : public std::invalid_argument
  {
  public:
    explicit shape_error(const std::string& what) : std::invalid_argument(what) {}
  };

  //! a dense materialization (or dense fallback) would exceed its size guard
  class guard_error : public std::runtime_error
  {
  public:
    explicit guard_error(const std::string& what) : std::runtime_error(what) {}
  };

  //! an entry passed to a pointwise inversion is (numerically) zero
  class singularity_error : public std::runtime_error
  {
  public:
    explicit singularity_error(const std::string& what) : std::runtime_error(what) {}
  };

  //! geometric degeneracy: non-convex or inverted quadrangle element map
  class degenerate_element_error : public std::runtime_error
  {
  public:
    explicit degenerate_element_error(const std::string& what) : std::runtime_error(what) {}
  };

  //! an iterative scheme exhausted its budget before reaching its tolerance
  class convergence_error : public std::runtime_error
  {
  public:
    explicit convergence_error(const std::string& what) : std::runtime_error(what) {}
  };

  //! invalid domain configuration or experiment plan
  class config_error : public std::runtime_error
  {
  public:
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
  };
}
