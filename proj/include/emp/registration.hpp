#pragma once

#include "emp/correspondence.hpp"
#include "emp/errors.hpp"
#include "emp/geometry.hpp"
#include "emp/memory.hpp"

namespace emp {

/// Raised by the best-fit solver. For degenerate geometry `fallback` carries the
/// identity-rotation estimate (translation aligns the weighted centroids).
class DegenerateError : public NumericalError {
 public:
  enum class Kind { kWeights, kGeometry };
  DegenerateError(Kind kind, const std::string& what, Pose fallback = {})
      : NumericalError(what), kind_(kind), fallback_(fallback) {}
  Kind kind() const { return kind_; }
  const Pose& fallback() const { return fallback_; }

 private:
  Kind kind_;
  Pose fallback_;
};

/// Weighted rigid best fit: argmin over (R, t) of sum w_l |q_l - (R p_l + t)|^2.
/// Throws DegenerateError when sum(w) == 0 or the weighted cross-covariance has rank < 2.
Pose weighted_best_fit(const Points3& p, const Points3& q, const Eigen::VectorXd& weights);
Pose best_fit(const Points3& p, const Points3& q);

/// Sum of weighted squared residuals at `pose`.
double weighted_residual(const Points3& p, const Points3& q, const Eigen::VectorXd& weights,
                         const Pose& pose);

struct Localisation {
  Pose pose;
  CorrespondenceSet matches;
  bool low_confidence = false;  // mean weight below kLowConfidence
};

/// Hard path: pairs (h_c[j], M_c[c[j]]) weighted by omega[j].
Localisation localise_hard(const SpatialMemory& mem, const PointEmbeddings& pe,
                           const ConfidenceMatrix& conf);
/// Same, streaming the confidence matrix with the given softmax scale.
Localisation localise_hard(const SpatialMemory& mem, const PointEmbeddings& pe,
                           double scale = 1.0);

/// Soft path: unweighted best fit between h_c and conf^T M_c.
Pose localise_soft(const SpatialMemory& mem, const PointEmbeddings& pe,
                   const ConfidenceMatrix& conf);
Localisation localise_soft(const SpatialMemory& mem, const PointEmbeddings& pe,
                           double scale = 1.0);

struct IcpOptions {
  int max_iterations = 50;
  double tolerance = 1e-8;  // on the change of the mean residual
  Pose initial = Pose::identity();
};

struct IcpResult {
  Pose pose;
  int iterations = 0;
  bool converged = false;
  double mean_residual = 0.0;
};

/// Point-to-point ICP with exact nearest neighbours; maps `source` onto `target`.
IcpResult icp(const PointCloud& source, const PointCloud& target, const IcpOptions& options = {});

struct PoseLosses {
  double rotation = 0.0;     // |q(R_pred) - q(R_gt)/|q(R_gt)||, sign-aligned
  double translation = 0.0;  // |t_pred - t_gt|
};

PoseLosses pose_losses(const Pose& pred, const Pose& gt);

}  // namespace emp
