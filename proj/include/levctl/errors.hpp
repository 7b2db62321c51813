#pragma once

#include <stdexcept>
#include <string>

namespace levctl {

/// Invalid parameter, malformed configuration, or violated precondition.
/// The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An in-situ estimation (Rabi-phase fit, calibration) failed.
/// The CLI maps this to exit code 3.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A spectral or model fit did not converge or found no feature.
/// Same CLI exit code as EstimationError.
class FitError : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

}  // namespace levctl
