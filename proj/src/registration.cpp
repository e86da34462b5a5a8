#include "emp/registration.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace emp {
namespace {

constexpr double kRankTolerance = 1e-10;

struct Gathered {
  Points3 p;
  Points3 q;
  Eigen::VectorXd w;
};

Gathered gather_pairs(const PointEmbeddings& pe, const Points3& targets, const Mask& target_valid,
                      const Eigen::VectorXd* weights) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index j = 0; j < pe.size(); ++j) {
    if (pe.valid(j) && target_valid(j)) rows.push_back(j);
  }
  Gathered g;
  const auto n = static_cast<Eigen::Index>(rows.size());
  g.p.resize(n, 3);
  g.q.resize(n, 3);
  g.w.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    g.p.row(k) = pe.coords.row(rows[k]);
    g.q.row(k) = targets.row(rows[k]);
    g.w(k) = weights ? (*weights)(rows[k]) : 1.0;
  }
  return g;
}

Localisation hard_from_matches(const SpatialMemory& mem, const PointEmbeddings& pe,
                               CorrespondenceSet matches) {
  Points3 targets = Points3::Zero(pe.size(), 3);
  for (Eigen::Index j = 0; j < pe.size(); ++j) {
    if (matches.valid(j)) targets.row(j) = mem.coords().row(matches.indices(j));
  }
  const Gathered g = gather_pairs(pe, targets, matches.valid, &matches.weights);
  Localisation out;
  out.pose = weighted_best_fit(g.p, g.q, g.w);
  out.low_confidence = matches.mean_weight() < kLowConfidence;
  out.matches = std::move(matches);
  return out;
}

void check_memory(const SpatialMemory& mem, const PointEmbeddings& pe) {
  if (mem.empty()) throw InvalidArgument("localise: memory is empty");
  if (mem.channels() != pe.channels()) throw InvalidArgument("localise: feature widths differ");
}

}  // namespace

Pose weighted_best_fit(const Points3& p, const Points3& q, const Eigen::VectorXd& weights) {
  if (p.rows() != q.rows() || p.rows() != weights.size()) {
    throw InvalidArgument("weighted_best_fit: p, q and weights must have equal row counts");
  }
  if ((weights.array() < 0.0).any() || !weights.allFinite()) {
    throw InvalidArgument("weighted_best_fit: weights must be finite and non-negative");
  }
  const double total = weights.sum();
  if (!(total > 0.0)) {
    throw DegenerateError(DegenerateError::Kind::kWeights, "weighted_best_fit: weights sum to zero");
  }
  const Vec3 p_bar = (p.transpose() * weights) / total;
  const Vec3 q_bar = (q.transpose() * weights) / total;
  const Points3 p_hat = p.rowwise() - p_bar.transpose();
  const Points3 q_hat = q.rowwise() - q_bar.transpose();
  const Mat3 h = p_hat.transpose() * weights.asDiagonal() * q_hat;

  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sigma = svd.singularValues();
  // Spread below centroid rounding level: collapsed cloud.
  const double spread_p = std::sqrt((p_hat.rowwise().squaredNorm().array() * weights.array()).sum() / total);
  const double spread_q = std::sqrt((q_hat.rowwise().squaredNorm().array() * weights.array()).sum() / total);
  const bool collapsed = spread_p <= 1e-12 * (1.0 + p_bar.norm()) ||
                         spread_q <= 1e-12 * (1.0 + q_bar.norm());
  if (collapsed || !(sigma(0) > 0.0) || sigma(1) <= kRankTolerance * sigma(0)) {
    Pose fallback;
    fallback.translation = q_bar - p_bar;
    throw DegenerateError(DegenerateError::Kind::kGeometry,
                          "weighted_best_fit: cross-covariance has rank < 2", fallback);
  }
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Eigen::Vector3d d(1.0, 1.0, (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
  Pose pose;
  pose.rotation = v * d.asDiagonal() * u.transpose();
  pose.translation = q_bar - pose.rotation * p_bar;
  return pose;
}

Pose best_fit(const Points3& p, const Points3& q) {
  return weighted_best_fit(p, q, Eigen::VectorXd::Ones(p.rows()));
}

double weighted_residual(const Points3& p, const Points3& q, const Eigen::VectorXd& weights,
                         const Pose& pose) {
  const Points3 moved = transform(p, pose);
  return ((q - moved).rowwise().squaredNorm().array() * weights.array()).sum();
}

Localisation localise_hard(const SpatialMemory& mem, const PointEmbeddings& pe,
                           const ConfidenceMatrix& conf) {
  check_memory(mem, pe);
  if (conf.rows() != mem.rows() || conf.cols() != pe.size()) {
    throw InvalidArgument("localise_hard: confidence shape does not match memory and frame");
  }
  return hard_from_matches(mem, pe, extract_matches(conf));
}

Localisation localise_hard(const SpatialMemory& mem, const PointEmbeddings& pe, double scale) {
  check_memory(mem, pe);
  return hard_from_matches(mem, pe, match_against_memory(mem, pe, scale).matches);
}

Pose localise_soft(const SpatialMemory& mem, const PointEmbeddings& pe,
                   const ConfidenceMatrix& conf) {
  check_memory(mem, pe);
  const PointCloud targets = soft_matches(conf, mem.coords());
  const Gathered g = gather_pairs(pe, targets.points, targets.valid, nullptr);
  return weighted_best_fit(g.p, g.q, g.w);
}

Localisation localise_soft(const SpatialMemory& mem, const PointEmbeddings& pe, double scale) {
  check_memory(mem, pe);
  MemoryMatch match = match_against_memory(mem, pe, scale);
  const Gathered g = gather_pairs(pe, match.soft_targets, match.matches.valid, nullptr);
  Localisation out;
  out.pose = weighted_best_fit(g.p, g.q, g.w);
  out.low_confidence = match.matches.mean_weight() < kLowConfidence;
  out.matches = std::move(match.matches);
  return out;
}

IcpResult icp(const PointCloud& source, const PointCloud& target, const IcpOptions& options) {
  std::vector<Eigen::Index> src_rows, dst_rows;
  for (Eigen::Index i = 0; i < source.size(); ++i) {
    if (source.valid(i)) src_rows.push_back(i);
  }
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    if (target.valid(i)) dst_rows.push_back(i);
  }
  if (src_rows.empty() || dst_rows.empty()) throw InvalidArgument("icp: empty point cloud");

  const auto ns = static_cast<Eigen::Index>(src_rows.size());
  const auto nt = static_cast<Eigen::Index>(dst_rows.size());
  Points3 src(ns, 3), dst(nt, 3);
  for (Eigen::Index k = 0; k < ns; ++k) src.row(k) = source.points.row(src_rows[k]);
  for (Eigen::Index k = 0; k < nt; ++k) dst.row(k) = target.points.row(dst_rows[k]);
  const Eigen::VectorXd dst_sq = dst.rowwise().squaredNorm();

  IcpResult result;
  result.pose = options.initial;
  double previous = std::numeric_limits<double>::infinity();
  Points3 matched(ns, 3);
  Eigen::MatrixXd cross;
  for (int it = 1; it <= options.max_iterations; ++it) {
    const Points3 moved = transform(src, result.pose);
    double residual = 0.0;
    constexpr Eigen::Index kBlock = 512;
    for (Eigen::Index start = 0; start < ns; start += kBlock) {
      const Eigen::Index count = std::min(kBlock, ns - start);
      cross.noalias() = dst * moved.middleRows(start, count).transpose();
      for (Eigen::Index k = 0; k < count; ++k) {
        Eigen::Index arg = 0;
        (dst_sq - 2.0 * cross.col(k)).minCoeff(&arg);
        matched.row(start + k) = dst.row(arg);
        residual += (dst.row(arg) - moved.row(start + k)).norm();
      }
    }
    residual /= static_cast<double>(ns);
    result.iterations = it;
    result.mean_residual = residual;
    if (residual < options.tolerance || previous - residual < options.tolerance) {
      result.converged = true;
      break;
    }
    previous = residual;
    try {
      result.pose = best_fit(src, matched);
    } catch (const DegenerateError& e) {
      if (e.kind() != DegenerateError::Kind::kGeometry) throw;
      result.pose = e.fallback();
    }
  }
  return result;
}

PoseLosses pose_losses(const Pose& pred, const Pose& gt) {
  PoseLosses out;
  out.translation = (pred.translation - gt.translation).norm();
  const Eigen::Vector4d qp = pred.quaternion().coeffs();
  Eigen::Vector4d qg = Eigen::Quaterniond(gt.rotation).coeffs();
  qg /= qg.norm();
  out.rotation = std::min((qp - qg).norm(), (qp + qg).norm());
  return out;
}

}  // namespace emp
