#pragma once

#include <stdexcept>
#include <string>

namespace drl {

/// A rejection sampler ran out of iterations.
class InfeasibleDraw : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A sample lacks a treatment arm or outcome level needed by a fit.
class DegenerateSample : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file or table violates its schema or invariants.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace drl
