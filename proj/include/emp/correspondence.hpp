#pragma once

#include "emp/embedder.hpp"
#include "emp/geometry.hpp"
#include "emp/memory.hpp"

namespace emp {

inline constexpr double kDistanceEpsilon = 1e-12;  // inside the embedding-distance sqrt
inline constexpr double kLogEpsilon = 1e-12;       // inside the cross-entropy log
inline constexpr double kLowConfidence = 0.05;

enum class EmbeddingMetric { L2 };

struct HyperParams {
  double tau = 1e5;  // ground-truth temperature, 1 / length units
  int buffer = 4;    // b, frames held in memory
  double lambda_rotation = 5.0;
  double lambda_translation = 0.02;
  EmbeddingMetric metric = EmbeddingMetric::L2;

  void validate() const;
};

/// Rows index memory entries, columns index incoming points. An entry is computable when
/// both its row and its column are valid.
struct DistanceMatrix {
  Eigen::MatrixXd values;
  Mask row_valid;
  Mask col_valid;

  bool computable(Eigen::Index i, Eigen::Index j) const { return row_valid(i) && col_valid(j); }
};

/// Column-stochastic over valid rows. Columns with no computable entry are all zero and have
/// column_valid == false.
struct ConfidenceMatrix {
  Eigen::MatrixXd values;
  Mask row_valid;
  Mask column_valid;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

struct CorrespondenceSet {
  Eigen::VectorXd weights;  // omega
  Eigen::VectorXi indices;  // c, -1 where invalid
  Mask valid;

  Eigen::Index size() const { return weights.size(); }
  double mean_weight() const;
  /// Fraction of valid columns whose weight is below `threshold`.
  double low_confidence_fraction(double threshold = kLowConfidence) const;
};

/// values(i, j) = sqrt(max(|a_i|^2 + |b_j|^2 - 2 a_i.b_j, 0) + eps).
DistanceMatrix embed_distances(const RowMatrix& memory_feats, const Mask& memory_valid,
                               const RowMatrix& feats, const Mask& valid);
DistanceMatrix embed_distances(const SpatialMemory& mem, const PointEmbeddings& pe);

/// Exact Euclidean distances between 3D clouds.
DistanceMatrix point_distances(const PointCloud& memory_cloud, const PointCloud& cloud);

/// Column-wise softmax of -scale * values over computable entries.
ConfidenceMatrix softmax_confidence(const DistanceMatrix& d, double scale = 1.0);

/// Ground-truth confidence from memory and incoming clouds aligned with ground-truth poses.
ConfidenceMatrix gt_confidence(const PointCloud& memory_gt, const PointCloud& cloud_gt,
                               double tau);

/// -(1/N) sum_j sum_i gt log(pred + eps_log), N = number of columns with support in gt.
double cross_entropy(const ConfidenceMatrix& pred, const ConfidenceMatrix& gt);

/// omega = column max, c = lowest-index argmax.
CorrespondenceSet extract_matches(const ConfidenceMatrix& conf);

/// conf^T * memory_coords; rows of invalid columns are zero and flagged invalid.
PointCloud soft_matches(const ConfidenceMatrix& conf, const Points3& memory_coords);

/// Result of matching one frame against memory without materialising the dense matrices.
struct MemoryMatch {
  CorrespondenceSet matches;
  Points3 soft_targets;  // expected correspondence per column (zero when invalid)
};

/// Streams the confidence matrix (softmax with `scale`) column block by column block.
/// Equivalent to softmax_confidence(embed_distances(...)) followed by extract_matches and
/// soft_matches.
MemoryMatch match_against_memory(const SpatialMemory& mem, const PointEmbeddings& pe,
                                 double scale = 1.0);

}  // namespace emp
