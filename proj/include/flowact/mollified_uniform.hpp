#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numbers>

namespace flowact {

// Per-dimension density of U[-1, 1] convolved with N(0, sigma^2), taken as
// Phi((1 - x) / sigma) - Phi((-1 - x) / sigma) without the 1/2 normalizer.
// Everything is evaluated in log space so the tails stay finite for any
// finite x.

/// log Q(u) where Q is the standard normal upper tail.
template <typename Scalar>
Scalar log_normal_upper_tail(Scalar u) {
  using std::log;
  if (u < Scalar(30)) {
    return log(Scalar(0.5) * std::erfc(u / std::numbers::sqrt2_v<Scalar>));
  }
  const Scalar inv2 = Scalar(1) / (u * u);
  const Scalar series = Scalar(1) - inv2 + Scalar(3) * inv2 * inv2 - Scalar(15) * inv2 * inv2 * inv2;
  return -u * u / Scalar(2) - log(u) - Scalar(0.5) * log(Scalar(2) * std::numbers::pi_v<Scalar>) + log(series);
}

template <typename Scalar>
Scalar log_normal_pdf(Scalar v) {
  return -v * v / Scalar(2) - Scalar(0.5) * std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
}

template <typename Scalar>
Scalar log_mollified_uniform(Scalar x, Scalar sigma) {
  using std::abs;
  const Scalar u = abs(x);
  if (u <= Scalar(1)) {
    const Scalar q1 = std::exp(log_normal_upper_tail((Scalar(1) - u) / sigma));
    const Scalar q2 = std::exp(log_normal_upper_tail((Scalar(1) + u) / sigma));
    return std::log1p(-(q1 + q2));
  }
  const Scalar la = log_normal_upper_tail((u - Scalar(1)) / sigma);
  const Scalar lb = log_normal_upper_tail((u + Scalar(1)) / sigma);
  return la + std::log1p(-std::exp(lb - la));
}

/// d/dx of log_mollified_uniform.
template <typename Scalar>
Scalar log_mollified_uniform_derivative(Scalar x, Scalar sigma) {
  const Scalar u = std::abs(x);
  const Scalar lp = log_mollified_uniform(x, sigma);
  const Scalar inner = std::exp(log_normal_pdf((Scalar(1) + u) / sigma) - lp) -
                       std::exp(log_normal_pdf((Scalar(1) - u) / sigma) - lp);
  const Scalar du = inner / sigma;
  return x < Scalar(0) ? -du : du;
}

/// Sum of per-dimension log densities for each row of `z`.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> prior_log_density(
    const Eigen::MatrixBase<Derived>& z, typename Derived::Scalar sigma) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(z.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Scalar acc(0);
    for (Eigen::Index j = 0; j < z.cols(); ++j) acc += log_mollified_uniform(z(i, j), sigma);
    out(i) = acc;
  }
  return out;
}

/// The latent prior: mollified uniform over [-1, 1]^D.
struct MollifiedUniform {
  int dim = 1;
  double sigma = 0.01;

  double log_density(const Eigen::RowVectorXd& z) const { return prior_log_density(z, sigma)(0); }
};

}  // namespace flowact
