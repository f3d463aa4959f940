#pragma once

#include <Eigen/Dense>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace covsteer {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// A model callback produced a non-finite value; carries the offending point.
class ModelEvaluationError : public std::runtime_error {
 public:
  ModelEvaluationError(const std::string& what, Vec x, Vec u)
      : std::runtime_error(what + format_point(x, u)),
        x_(std::move(x)),
        u_(std::move(u)) {}

  const Vec& state() const { return x_; }
  const Vec& control() const { return u_; }

 private:
  static std::string format_point(const Vec& x, const Vec& u) {
    std::ostringstream os;
    os << " at x=[" << x.transpose() << "], u=[" << u.transpose() << "]";
    return os.str();
  }

  Vec x_;
  Vec u_;
};

/// A stochastic integration step left the finite range.
class IntegrationBlowupError : public std::runtime_error {
 public:
  IntegrationBlowupError(const std::string& what, int step_index)
      : std::runtime_error(what + " (step " + std::to_string(step_index) + ")"),
        step_index_(step_index) {}

  int step_index() const { return step_index_; }

 private:
  int step_index_;
};

/// Dimension mismatch or other violated structural precondition.
class StructuralError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Quu could not be made positive definite within the regularization budget.
class RegularizationFailureError : public std::runtime_error {
 public:
  RegularizationFailureError(const std::string& what, int step_index)
      : std::runtime_error(what + " (step " + std::to_string(step_index) + ")"),
        step_index_(step_index) {}

  int step_index() const { return step_index_; }

 private:
  int step_index_;
};

/// A deterministic forward rollout diverged (caller may shrink the step).
class RolloutDivergenceError : public std::runtime_error {
 public:
  RolloutDivergenceError(const std::string& what, int step_index)
      : std::runtime_error(what + " (step " + std::to_string(step_index) + ")"),
        step_index_(step_index) {}

  int step_index() const { return step_index_; }

 private:
  int step_index_;
};

/// Moment estimation was asked for with an unusable sample set.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Mat symmetrized(const Mat& m) { return 0.5 * (m + m.transpose()); }

inline double max_abs(const Mat& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

}  // namespace covsteer
