#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace htype {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/** @brief Raised for invalid input or an invalid model. */
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Three-index array, element (a, b, c) stored at (a * N + b) * N + c.
struct Tensor3 {
  int N = 0;
  std::vector<double> d;

  Tensor3() = default;
  explicit Tensor3(int n) : N(n), d(static_cast<std::size_t>(n) * n * n, 0.0) {}

  double& operator()(int a, int b, int c) { return d[(static_cast<std::size_t>(a) * N + b) * N + c]; }
  double operator()(int a, int b, int c) const { return d[(static_cast<std::size_t>(a) * N + b) * N + c]; }

  double max_abs() const {
    double r = 0.0;
    for (double v : d) r = std::max(r, std::abs(v));
    return r;
  }
};

/// Four-index array with the same row-major layout.
struct Tensor4 {
  int N = 0;
  std::vector<double> d;

  Tensor4() = default;
  explicit Tensor4(int n) : N(n), d(static_cast<std::size_t>(n) * n * n * n, 0.0) {}

  double& operator()(int a, int b, int c, int e) {
    return d[((static_cast<std::size_t>(a) * N + b) * N + c) * N + e];
  }
  double operator()(int a, int b, int c, int e) const {
    return d[((static_cast<std::size_t>(a) * N + b) * N + c) * N + e];
  }

  double max_abs() const {
    double r = 0.0;
    for (double v : d) r = std::max(r, std::abs(v));
    return r;
  }
};

inline double max_abs(const Mat& A) { return A.size() ? A.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace htype
