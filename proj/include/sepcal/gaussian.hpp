#pragma once

// Gaussian densities in moment form and the handful of closed-form
// integrals built on them. Everything is evaluated in the log domain.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "sepcal/errors.hpp"

namespace sepcal {

/// Relative diagonal jitter applied when a covariance fails to factorize.
inline constexpr double kCovarianceJitter = 1e-9;

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  Gaussian() = default;
  Gaussian(Eigen::VectorXd m, Eigen::MatrixXd c) : mean(std::move(m)), cov(std::move(c)) {}

  Eigen::Index dim() const { return mean.size(); }
};

namespace detail {

// Cholesky factor of a symmetric matrix. A failing factorization is retried
// once with `kCovarianceJitter * trace / d` on the diagonal.
template <typename Derived>
Eigen::LLT<typename Derived::PlainObject> factorize(const Eigen::MatrixBase<Derived>& cov,
                                                    const char* what = "covariance") {
  using Plain = typename Derived::PlainObject;
  Plain sym = 0.5 * (cov + cov.transpose());
  Eigen::LLT<Plain> llt(sym);
  if (llt.info() == Eigen::Success && (llt.matrixLLT().diagonal().array() > 0.0).all()) {
    return llt;
  }
  const double jitter = kCovarianceJitter * sym.trace() / static_cast<double>(sym.rows());
  if (!(jitter > 0.0) || !std::isfinite(jitter)) {
    throw NumericalError(std::string(what) + " is not positive definite");
  }
  sym.diagonal().array() += jitter;
  llt.compute(sym);
  if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().array() > 0.0).all()) {
    throw NumericalError(std::string(what) + " is not positive definite after regularization");
  }
  return llt;
}

template <typename Plain>
double log_det(const Eigen::LLT<Plain>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

template <typename Plain>
Plain inverse(const Eigen::LLT<Plain>& llt) {
  const auto n = llt.matrixLLT().rows();
  Plain id = Plain::Identity(n, n);
  Plain inv = llt.solve(id);
  return 0.5 * (inv + inv.transpose());
}

inline void require_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                                " vs " + std::to_string(b) + ")");
  }
}

}  // namespace detail

/// Throws if the mean/covariance shapes disagree or the covariance is not
/// symmetric within 1e-9 (relative to its largest entry).
inline void validate(const Gaussian& g) {
  if (g.cov.rows() != g.cov.cols()) throw std::invalid_argument("Gaussian: covariance not square");
  detail::require_same_dim(g.mean.size(), g.cov.rows(), "Gaussian");
  const double scale = std::max(1.0, g.cov.cwiseAbs().maxCoeff());
  if ((g.cov - g.cov.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw std::invalid_argument("Gaussian: covariance not symmetric");
  }
}

/// log N(x; g.mean, g.cov)
template <typename Derived>
double gaussian_logpdf(const Eigen::MatrixBase<Derived>& x, const Gaussian& g) {
  detail::require_same_dim(x.size(), g.dim(), "gaussian_logpdf");
  const auto llt = detail::factorize(g.cov);
  const Eigen::VectorXd r = x - g.mean;
  const Eigen::VectorXd y = llt.matrixL().solve(r);
  const double d = static_cast<double>(g.dim());
  return -0.5 * y.squaredNorm() - 0.5 * detail::log_det(llt) -
         0.5 * d * std::log(2.0 * std::numbers::pi);
}

/// Normalized product of Gaussian densities: precisions and
/// precision-weighted means add.
inline Gaussian gaussian_product(std::span<const Gaussian> gs) {
  if (gs.empty()) throw std::invalid_argument("gaussian_product: empty input");
  const auto d = gs.front().dim();
  Eigen::MatrixXd precision = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd info = Eigen::VectorXd::Zero(d);
  for (const auto& g : gs) {
    detail::require_same_dim(g.dim(), d, "gaussian_product");
    const Eigen::MatrixXd lambda = detail::inverse(detail::factorize(g.cov));
    precision += lambda;
    info += lambda * g.mean;
  }
  const auto llt = detail::factorize(precision, "summed precision");
  Gaussian out;
  out.cov = detail::inverse(llt);
  out.mean = llt.solve(info);
  return out;
}

/// log of the Bhattacharyya coefficient  ∫ sqrt(N1 N2), evaluated as
///   -1/8 dmᵀ S⁻¹ dm + 1/4 log|Σ1| + 1/4 log|Σ2| - 1/2 log|S|,  S = (Σ1 + Σ2) / 2.
inline double log_bhattacharyya(const Gaussian& g1, const Gaussian& g2) {
  detail::require_same_dim(g1.dim(), g2.dim(), "bhattacharyya");
  const Eigen::MatrixXd avg = 0.5 * (g1.cov + g2.cov);
  const auto llt = detail::factorize(avg, "averaged covariance");
  const Eigen::VectorXd dm = g1.mean - g2.mean;
  const Eigen::VectorXd y = llt.matrixL().solve(dm);
  return -0.125 * y.squaredNorm() + 0.25 * detail::log_det(detail::factorize(g1.cov)) +
         0.25 * detail::log_det(detail::factorize(g2.cov)) - 0.5 * detail::log_det(llt);
}

/// Same integral in information form,
///   (|Λ1||Λ2|)^{1/4} / |(Λ1+Λ2)/2|^{1/2}
///     · exp{ -1/4 (μ1ᵀΛ1μ1 + μ2ᵀΛ2μ2) + 1/4 bᵀ(Λ1+Λ2)⁻¹b },  b = Λ1μ1 + Λ2μ2,
/// kept as an algebraically independent route for cross-checking.
inline double log_bhattacharyya_information_form(const Gaussian& g1, const Gaussian& g2) {
  detail::require_same_dim(g1.dim(), g2.dim(), "bhattacharyya");
  const Eigen::MatrixXd l1 = detail::inverse(detail::factorize(g1.cov));
  const Eigen::MatrixXd l2 = detail::inverse(detail::factorize(g2.cov));
  const Eigen::MatrixXd sum = l1 + l2;
  const auto sum_llt = detail::factorize(sum, "summed precision");
  const Eigen::VectorXd b = l1 * g1.mean + l2 * g2.mean;
  const double d = static_cast<double>(g1.dim());
  const double log_det_l1 = detail::log_det(detail::factorize(l1, "precision"));
  const double log_det_l2 = detail::log_det(detail::factorize(l2, "precision"));
  const double log_det_half_sum = detail::log_det(sum_llt) - d * std::log(2.0);
  const double quad = g1.mean.dot(l1 * g1.mean) + g2.mean.dot(l2 * g2.mean);
  return 0.25 * (log_det_l1 + log_det_l2) - 0.5 * log_det_half_sum - 0.25 * quad +
         0.25 * b.dot(sum_llt.solve(b));
}

inline double bhattacharyya_coefficient(const Gaussian& g1, const Gaussian& g2) {
  return std::exp(log_bhattacharyya(g1, g2));
}

/// Numerically stable log(Σ exp(v)).
template <typename Range>
double log_sum_exp(const Range& values) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : values) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace sepcal
