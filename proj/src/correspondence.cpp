#include "emp/correspondence.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "emp/errors.hpp"
#include "emp/kernels.hpp"

namespace emp {

void HyperParams::validate() const {
  if (!(tau > 0.0)) throw InvalidArgument("hyper-parameters: tau must be > 0");
  if (buffer < 1) throw InvalidArgument("hyper-parameters: buffer must be >= 1");
  if (!(lambda_rotation >= 0.0) || !(lambda_translation >= 0.0)) {
    throw InvalidArgument("hyper-parameters: loss weights must be >= 0");
  }
}

double CorrespondenceSet::mean_weight() const {
  const Eigen::Index n = valid.count();
  if (n == 0) return 0.0;
  return valid.select(weights.array(), 0.0).sum() / static_cast<double>(n);
}

double CorrespondenceSet::low_confidence_fraction(double threshold) const {
  const Eigen::Index n = valid.count();
  if (n == 0) return 1.0;
  const Eigen::Index low = (valid && (weights.array() < threshold)).count();
  return static_cast<double>(low) / static_cast<double>(n);
}

DistanceMatrix embed_distances(const RowMatrix& memory_feats, const Mask& memory_valid,
                               const RowMatrix& feats, const Mask& valid) {
  if (memory_feats.cols() != feats.cols()) {
    throw InvalidArgument("embed_distances: feature widths differ (" +
                          std::to_string(memory_feats.cols()) + " vs " +
                          std::to_string(feats.cols()) + ")");
  }
  if (memory_valid.size() != memory_feats.rows() || valid.size() != feats.rows()) {
    throw InvalidArgument("embed_distances: mask sizes do not match");
  }
  DistanceMatrix d;
  d.row_valid = memory_valid;
  d.col_valid = valid;
  const Eigen::VectorXd mem_sq = memory_feats.rowwise().squaredNorm();
  const Eigen::VectorXd sq = feats.rowwise().squaredNorm();
  Eigen::MatrixXd cross = memory_feats * feats.transpose();
  d.values.resize(memory_feats.rows(), feats.rows());
  for (Eigen::Index j = 0; j < feats.rows(); ++j) {
    kernels::embedding_distance_column(mem_sq, sq(j), cross.col(j), d.values.col(j));
  }
  return d;
}

DistanceMatrix embed_distances(const SpatialMemory& mem, const PointEmbeddings& pe) {
  return embed_distances(mem.feats(), mem.valid(), pe.feats, pe.valid);
}

DistanceMatrix point_distances(const PointCloud& memory_cloud, const PointCloud& cloud) {
  DistanceMatrix d;
  d.row_valid = memory_cloud.valid;
  d.col_valid = cloud.valid;
  d.values.resize(memory_cloud.size(), cloud.size());
  for (Eigen::Index j = 0; j < cloud.size(); ++j) {
    const Eigen::RowVector3d p = cloud.points.row(j);
    d.values.col(j) = (memory_cloud.points.rowwise() - p).rowwise().norm();
  }
  return d;
}

ConfidenceMatrix softmax_confidence(const DistanceMatrix& d, double scale) {
  if (!(scale > 0.0)) throw InvalidArgument("softmax_confidence: scale must be > 0");
  const Eigen::Index rows = d.values.rows();
  const Eigen::Index cols = d.values.cols();
  ConfidenceMatrix conf;
  conf.values = Eigen::MatrixXd::Zero(rows, cols);
  conf.row_valid = d.row_valid;
  conf.column_valid.setConstant(cols, false);

  std::vector<Eigen::Index> valid_rows;
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (d.row_valid(i)) valid_rows.push_back(i);
  }
  const auto nv = static_cast<Eigen::Index>(valid_rows.size());
  if (nv == 0) return conf;

  Eigen::VectorXd column(nv), probs(nv);
  for (Eigen::Index j = 0; j < cols; ++j) {
    if (!d.col_valid(j)) continue;
    for (Eigen::Index k = 0; k < nv; ++k) column(k) = d.values(valid_rows[k], j);
    kernels::softmax_negated(column, scale, probs);
    for (Eigen::Index k = 0; k < nv; ++k) conf.values(valid_rows[k], j) = probs(k);
    conf.column_valid(j) = true;
  }
  return conf;
}

ConfidenceMatrix gt_confidence(const PointCloud& memory_gt, const PointCloud& cloud_gt,
                               double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("gt_confidence: tau must be > 0");
  return softmax_confidence(point_distances(memory_gt, cloud_gt), tau);
}

double cross_entropy(const ConfidenceMatrix& pred, const ConfidenceMatrix& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
    throw InvalidArgument("cross_entropy: shape mismatch");
  }
  double total = 0.0;
  Eigen::Index used = 0;
  for (Eigen::Index j = 0; j < gt.cols(); ++j) {
    if (!gt.column_valid(j)) continue;
    double col = 0.0;
    bool support = false;
    for (Eigen::Index i = 0; i < gt.rows(); ++i) {
      const double g = gt.values(i, j);
      if (g == 0.0) continue;
      support = true;
      col -= g * std::log(pred.values(i, j) + kLogEpsilon);
    }
    if (!support) continue;
    total += col;
    ++used;
  }
  return used == 0 ? 0.0 : total / static_cast<double>(used);
}

CorrespondenceSet extract_matches(const ConfidenceMatrix& conf) {
  CorrespondenceSet out;
  const Eigen::Index cols = conf.cols();
  out.weights = Eigen::VectorXd::Zero(cols);
  out.indices = Eigen::VectorXi::Constant(cols, -1);
  out.valid.setConstant(cols, false);
  for (Eigen::Index j = 0; j < cols; ++j) {
    if (!conf.column_valid(j)) continue;
    double best = -1.0;
    Eigen::Index arg = -1;
    for (Eigen::Index i = 0; i < conf.rows(); ++i) {
      if (!conf.row_valid(i)) continue;
      if (conf.values(i, j) > best) {
        best = conf.values(i, j);
        arg = i;
      }
    }
    if (arg < 0) continue;
    out.weights(j) = best;
    out.indices(j) = static_cast<int>(arg);
    out.valid(j) = true;
  }
  return out;
}

PointCloud soft_matches(const ConfidenceMatrix& conf, const Points3& memory_coords) {
  if (memory_coords.rows() != conf.rows()) {
    throw InvalidArgument("soft_matches: memory has " + std::to_string(memory_coords.rows()) +
                          " rows but confidence has " + std::to_string(conf.rows()));
  }
  PointCloud out;
  out.points = conf.values.transpose() * memory_coords;
  out.valid = conf.column_valid;
  return out;
}

MemoryMatch match_against_memory(const SpatialMemory& mem, const PointEmbeddings& pe,
                                 double scale) {
  if (mem.channels() != pe.channels()) {
    throw InvalidArgument("match_against_memory: feature widths differ");
  }
  if (!(scale > 0.0)) throw InvalidArgument("match_against_memory: scale must be > 0");
  const Eigen::Index cols = pe.size();
  const Eigen::Index n = pe.channels();
  MemoryMatch out;
  out.matches.weights = Eigen::VectorXd::Zero(cols);
  out.matches.indices = Eigen::VectorXi::Constant(cols, -1);
  out.matches.valid.setConstant(cols, false);
  out.soft_targets = Points3::Zero(cols, 3);

  const kernels::CompactRows memory = kernels::compact_rows(mem.feats(), mem.coords(), mem.valid());
  const Eigen::Index nv = memory.size();
  if (nv == 0) return out;

  std::vector<Eigen::Index> columns;
  for (Eigen::Index j = 0; j < cols; ++j) {
    if (pe.valid(j)) columns.push_back(j);
  }

  // Screening pass in single precision over row chunks. A chunk is discarded for a column
  // when its rounding-error bounded lower distance exceeds the column minimum by more than
  // kNegligible / scale; surviving rows are evaluated exactly in double precision and terms
  // beyond that margin are dropped.
  constexpr Eigen::Index kChunk = 32;
  constexpr Eigen::Index kRowTile = 1024;
  constexpr Eigen::Index kColTile = 128;
  constexpr double kNegligible = 50.0;
  const double margin = kNegligible / scale;
  const Eigen::Index padded = (nv + kRowTile - 1) / kRowTile * kRowTile;
  const Eigen::Index chunks = padded / kChunk;
  RowMatrixF mem_f = RowMatrixF::Zero(padded, n);
  mem_f.topRows(nv) = memory.feats.cast<float>();
  Eigen::VectorXf mem_sq_f = Eigen::VectorXf::Constant(padded, std::numeric_limits<float>::infinity());
  mem_sq_f.head(nv) = memory.squared_norms.cast<float>();
  const double max_norm = std::sqrt(memory.squared_norms.maxCoeff());
  const double unit_roundoff = std::ldexp(1.0, -24);

  RowMatrix block;
  RowMatrixF block_f;
  Eigen::VectorXd block_sq, bound;
  Eigen::MatrixXf tile, chunk_min(chunks, kColTile);
  std::vector<char> keep(static_cast<std::size_t>(chunks));
  std::vector<Eigen::Index> slot(static_cast<std::size_t>(chunks));
  std::vector<std::vector<Eigen::Index>> survivors;
  RowMatrix sel_feats;
  Points3 sel_coords;
  Eigen::VectorXd sel_sq, d, p;
  Eigen::MatrixXd exact;
  for (std::size_t start = 0; start < columns.size(); start += kColTile) {
    const auto count = static_cast<Eigen::Index>(
        std::min<std::size_t>(kColTile, columns.size() - start));
    block.resize(count, n);
    for (Eigen::Index k = 0; k < count; ++k) block.row(k) = pe.feats.row(columns[start + k]);
    block_sq = block.rowwise().squaredNorm();
    block_f = block.cast<float>();
    bound.resize(count);
    for (Eigen::Index k = 0; k < count; ++k) {
      const double reach = max_norm + std::sqrt(block_sq(k));
      bound(k) = 2.0 * static_cast<double>(n + 6) * unit_roundoff * reach * reach;
    }

    // chunk_min(c, k) = min over chunk c of (|m|^2 - 2 m.h_k) in single precision.
    for (Eigen::Index r0 = 0; r0 < padded; r0 += kRowTile) {
      tile.noalias() = mem_f.middleRows(r0, kRowTile) * block_f.transpose();
      for (Eigen::Index k = 0; k < count; ++k) {
        for (Eigen::Index c = 0; c < kRowTile / kChunk; ++c) {
          const Eigen::Index r = c * kChunk;
          chunk_min(r0 / kChunk + c, k) =
              (mem_sq_f.segment<kChunk>(r0 + r) - 2.0f * tile.col(k).segment<kChunk>(r)).minCoeff();
        }
      }
    }

    // Per column: surviving chunks; their union is evaluated exactly once per block.
    std::fill(keep.begin(), keep.end(), 0);
    survivors.assign(static_cast<std::size_t>(count), {});
    for (Eigen::Index k = 0; k < count; ++k) {
      const auto col_min = chunk_min.col(k);
      const double lowest = static_cast<double>(col_min.minCoeff()) + block_sq(k);
      const double reach = std::sqrt(std::max(lowest + bound(k), 0.0) + kDistanceEpsilon) + margin;
      const double limit = reach * reach + bound(k) - block_sq(k);
      auto& mine = survivors[static_cast<std::size_t>(k)];
      for (Eigen::Index c = 0; c < chunks; ++c) {
        if (!(static_cast<double>(col_min(c)) > limit) || !std::isfinite(limit)) {
          mine.push_back(c);
          keep[static_cast<std::size_t>(c)] = 1;
        }
      }
    }
    Eigen::Index nr = 0;
    for (Eigen::Index c = 0; c < chunks; ++c) {
      slot[static_cast<std::size_t>(c)] = nr;
      if (keep[static_cast<std::size_t>(c)]) nr += kChunk;
    }
    sel_feats.setZero(nr, n);
    sel_coords.setZero(nr, 3);
    sel_sq.setConstant(nr, std::numeric_limits<double>::infinity());
    for (Eigen::Index c = 0; c < chunks; ++c) {
      if (!keep[static_cast<std::size_t>(c)]) continue;
      const Eigen::Index first = c * kChunk;
      const Eigen::Index real = std::max<Eigen::Index>(0, std::min(kChunk, nv - first));
      const Eigen::Index at = slot[static_cast<std::size_t>(c)];
      sel_feats.middleRows(at, real) = memory.feats.middleRows(first, real);
      sel_coords.middleRows(at, real) = memory.coords.middleRows(first, real);
      sel_sq.segment(at, real) = memory.squared_norms.segment(first, real);
    }
    exact.noalias() = sel_feats * block.transpose();
    for (Eigen::Index k = 0; k < count; ++k) {
      const auto& mine = survivors[static_cast<std::size_t>(k)];
      const auto m = static_cast<Eigen::Index>(mine.size());
      d.resize(m * kChunk);
      for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index at = slot[static_cast<std::size_t>(mine[static_cast<std::size_t>(i)])];
        kernels::embedding_distance_column(sel_sq.segment<kChunk>(at), block_sq(k),
                                           exact.col(k).segment<kChunk>(at), d.segment<kChunk>(i * kChunk));
      }
      Eigen::Index arg = 0;
      const double dmin = d.minCoeff(&arg);
      p = (d.array() - dmin <= margin).select((-scale * (d.array() - dmin)).exp(), 0.0);
      const double total = p.sum();
      Vec3 target = Vec3::Zero();
      for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index at = slot[static_cast<std::size_t>(mine[static_cast<std::size_t>(i)])];
        target += sel_coords.middleRows<kChunk>(at).transpose() * p.segment<kChunk>(i * kChunk);
      }
      const Eigen::Index best = mine[static_cast<std::size_t>(arg / kChunk)] * kChunk + arg % kChunk;
      const Eigen::Index j = columns[start + static_cast<std::size_t>(k)];
      out.matches.weights(j) = 1.0 / total;
      out.matches.indices(j) = static_cast<int>(memory.index[static_cast<std::size_t>(best)]);
      out.matches.valid(j) = true;
      out.soft_targets.row(j) = target.transpose() / total;
    }
  }
  return out;
}

}  // namespace emp
