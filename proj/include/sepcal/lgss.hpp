#pragma once

// Linear-Gaussian state-space primitives: constant-velocity motion in the
// plane, position-only sensors and translation-only sensor frames.
//
// State layout is [px, py, vx, vy]; measurements are [px, py].

#include <Eigen/Dense>

#include "sepcal/errors.hpp"
#include "sepcal/gaussian.hpp"

namespace sepcal {

inline constexpr int kStateDim = 4;
inline constexpr int kMeasDim = 2;

using Vec2 = Eigen::Vector2d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat4 = Eigen::Matrix4d;
using Mat24 = Eigen::Matrix<double, 2, 4>;

/// Constant velocity with unknown acceleration:
///   F = [I, dt I; 0, I],   Q = sigma2 [q1 I, q2 I; q3 I, q4 I].
struct MotionModel {
  double dt = 1.0;
  double sigma2 = 0.25;
  double q1 = 0.25;
  double q2 = 0.5;
  double q3 = 0.5;
  double q4 = 1.0;
  Mat4 F = Mat4::Identity();
  Mat4 Q = Mat4::Zero();

  static MotionModel make(double dt, double sigma2, double q1, double q2, double q3, double q4) {
    if (!(dt > 0.0)) throw ConfigError("motion model: dt must be positive");
    if (!(sigma2 >= 0.0)) throw ConfigError("motion model: sigma2 must be non-negative");
    if (q2 != q3) throw ConfigError("motion model: off-diagonal blocks q2 and q3 must match");
    MotionModel m;
    m.dt = dt;
    m.sigma2 = sigma2;
    m.q1 = q1;
    m.q2 = q2;
    m.q3 = q3;
    m.q4 = q4;
    m.F = Mat4::Identity();
    m.F.topRightCorner<2, 2>() = dt * Mat2::Identity();
    m.Q.setZero();
    m.Q.topLeftCorner<2, 2>() = sigma2 * q1 * Mat2::Identity();
    m.Q.topRightCorner<2, 2>() = sigma2 * q2 * Mat2::Identity();
    m.Q.bottomLeftCorner<2, 2>() = sigma2 * q3 * Mat2::Identity();
    m.Q.bottomRightCorner<2, 2>() = sigma2 * q4 * Mat2::Identity();
    // Q is a covariance: the 2x2 pattern [q1 q2; q2 q4] must be PSD.
    if (q1 < 0.0 || q4 < 0.0 || q1 * q4 - q2 * q3 < -1e-12) {
      throw ConfigError("motion model: process noise is not positive semi-definite");
    }
    return m;
  }

  /// Process noise of the experiments: sigma = 0.5, q1 = 1/4, q2 = q3 = 1/2, q4 = 1.
  static MotionModel standard(double dt = 1.0) { return make(dt, 0.25, 0.25, 0.5, 0.5, 1.0); }
};

struct SensorModel {
  Mat24 H = (Mat24() << 1, 0, 0, 0, 0, 1, 0, 0).finished();
  Mat2 R = 100.0 * Mat2::Identity();

  static SensorModel position(double sigma_n) {
    SensorModel s;
    s.R = sigma_n * sigma_n * Mat2::Identity();
    return s;
  }
};

/// Translation of a sensor frame: a global point x appears as x - theta.
struct OffsetTransform {
  Vec2 theta = Vec2::Zero();
};

/// Re-expresses a position given in `from`'s frame in `to`'s frame.
inline Vec2 apply_offset(const Vec2& point, const OffsetTransform& from, const OffsetTransform& to) {
  return point + from.theta - to.theta;
}

/// Shifts the position block of a state or track; velocity and covariance are
/// left untouched.
inline Eigen::VectorXd apply_offset(const Eigen::VectorXd& state, const OffsetTransform& from,
                                    const OffsetTransform& to) {
  if (state.size() < 2) throw std::invalid_argument("apply_offset: state has no position block");
  Eigen::VectorXd out = state;
  out.head<2>() += from.theta - to.theta;
  return out;
}

inline Gaussian apply_offset(const Gaussian& track, const OffsetTransform& from,
                             const OffsetTransform& to) {
  return Gaussian(apply_offset(track.mean, from, to), track.cov);
}

inline void require_track(const Gaussian& g, const char* what) {
  if (g.dim() != kStateDim || g.cov.rows() != kStateDim || g.cov.cols() != kStateDim) {
    throw std::invalid_argument(std::string(what) + ": expected a 4-d track");
  }
}

inline Gaussian kf_predict(const Gaussian& track, const MotionModel& m) {
  require_track(track, "kf_predict");
  Gaussian out;
  out.mean = m.F * track.mean;
  Eigen::MatrixXd p = m.F * track.cov * m.F.transpose() + m.Q;
  out.cov = 0.5 * (p + p.transpose());
  return out;
}

struct KfUpdate {
  Gaussian posterior;
  Eigen::VectorXd innovation;
  Eigen::MatrixXd innovation_cov;
};

inline KfUpdate kf_update(const Gaussian& track, const Eigen::Ref<const Eigen::VectorXd>& z,
                          const SensorModel& s) {
  require_track(track, "kf_update");
  detail::require_same_dim(z.size(), kMeasDim, "kf_update");
  KfUpdate out;
  out.innovation = z - s.H * track.mean;
  out.innovation_cov = s.R + s.H * track.cov * s.H.transpose();
  const auto llt = detail::factorize(out.innovation_cov, "innovation covariance");
  // K = P Hᵀ S⁻¹
  const Eigen::MatrixXd gain = llt.solve(s.H * track.cov).transpose();
  out.posterior.mean = track.mean + gain * out.innovation;
  Eigen::MatrixXd p = (Mat4::Identity() - gain * s.H) * track.cov;
  out.posterior.cov = 0.5 * (p + p.transpose());
  return out;
}

/// Measurement-space prediction N(H x, R + H P Hᵀ) of a track.
inline Gaussian predict_measurement(const Gaussian& track, const SensorModel& s) {
  return Gaussian(s.H * track.mean, s.R + s.H * track.cov * s.H.transpose());
}

}  // namespace sepcal
