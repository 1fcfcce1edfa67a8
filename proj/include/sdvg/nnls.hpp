#pragma once

#include <Eigen/Dense>

#include <limits>
#include <vector>

namespace sdvg {

template <typename Scalar>
struct NnlsResult {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x;
  Scalar residual_norm = 0;
  int iterations = 0;
  bool converged = false;
};

// Lawson-Hanson active-set solver for  min ||A x - b||_2  subject to  x >= 0.
template <typename DerivedA, typename DerivedB>
NnlsResult<typename DerivedA::Scalar> nnls(const Eigen::MatrixBase<DerivedA>& A,
                                           const Eigen::MatrixBase<DerivedB>& b,
                                           int max_iterations = -1) {
  using Scalar = typename DerivedA::Scalar;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  const Eigen::Index n = A.cols();
  if (max_iterations < 0) max_iterations = static_cast<int>(3 * n + 30);
  const Scalar tol = Scalar(10) * std::numeric_limits<Scalar>::epsilon() *
                     A.cwiseAbs().colwise().sum().maxCoeff() * std::max<Eigen::Index>(n, 1);

  NnlsResult<Scalar> result;
  Vector x = Vector::Zero(n);
  std::vector<bool> passive(static_cast<std::size_t>(n), false);

  auto solve_passive = [&](Vector& z) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
    }
    z = Vector::Zero(n);
    if (idx.empty()) return;
    Matrix Ap(A.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) Ap.col(static_cast<Eigen::Index>(k)) = A.col(idx[k]);
    const Vector zp = Ap.colPivHouseholderQr().solve(b);
    for (std::size_t k = 0; k < idx.size(); ++k) z(idx[k]) = zp(static_cast<Eigen::Index>(k));
  };

  for (int iter = 0; iter < max_iterations; ++iter) {
    result.iterations = iter + 1;
    const Vector w = A.transpose() * (b - A * x);

    Eigen::Index best = -1;
    Scalar best_w = tol;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!passive[static_cast<std::size_t>(j)] && w(j) > best_w) {
        best_w = w(j);
        best = j;
      }
    }
    if (best < 0) {
      result.converged = true;
      break;
    }
    passive[static_cast<std::size_t>(best)] = true;

    Vector z;
    for (int inner = 0; inner < max_iterations; ++inner) {
      solve_passive(z);
      bool feasible = true;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[static_cast<std::size_t>(j)] && z(j) <= 0) feasible = false;
      }
      if (feasible) break;

      Scalar alpha = std::numeric_limits<Scalar>::max();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[static_cast<std::size_t>(j)] && z(j) <= 0) {
          alpha = std::min(alpha, x(j) / (x(j) - z(j)));
        }
      }
      x += alpha * (z - x);
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[static_cast<std::size_t>(j)] && x(j) <= tol) {
          passive[static_cast<std::size_t>(j)] = false;
          x(j) = 0;
        }
      }
    }
    x = z;
  }

  result.x = x;
  result.residual_norm = (A * x - b).norm();
  return result;
}

}  // namespace sdvg
