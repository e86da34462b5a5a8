#pragma once

// Column kernels shared by the dense confidence operations, the streaming matcher and the
// training loss, so every path evaluates identical floating-point expressions.

#include <cmath>
#include <vector>

#include "emp/geometry.hpp"

namespace emp::kernels {

/// out = sqrt(max(mem_sq + sq - 2 cross, 0) + eps).
template <typename Norms, typename Cross, typename Out>
inline void embedding_distance_column(const Norms& mem_sq, double sq, const Cross& cross, Out&& out) {
  out = ((mem_sq.array() + sq - 2.0 * cross.array()).max(0.0) + 1e-12).sqrt();
}

/// probs = softmax(-scale * d), shifted by min(d).
template <typename In, typename Out>
inline void softmax_negated(const In& d, double scale, Out&& probs) {
  const double dmin = d.minCoeff();
  probs = (-scale * (d.array() - dmin)).exp();
  probs /= probs.sum();
}

/// Valid rows of a memory gathered contiguously.
struct CompactRows {
  RowMatrix feats;
  Points3 coords;
  Eigen::VectorXd squared_norms;
  std::vector<Eigen::Index> index;  // original row of each compact row

  Eigen::Index size() const { return feats.rows(); }
};

inline CompactRows compact_rows(const RowMatrix& feats, const Points3& coords, const Mask& valid) {
  CompactRows out;
  for (Eigen::Index i = 0; i < valid.size(); ++i) {
    if (valid(i)) out.index.push_back(i);
  }
  const auto n = static_cast<Eigen::Index>(out.index.size());
  out.feats.resize(n, feats.cols());
  out.coords.resize(n, 3);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.feats.row(k) = feats.row(out.index[k]);
    out.coords.row(k) = coords.row(out.index[k]);
  }
  out.squared_norms = out.feats.rowwise().squaredNorm();
  return out;
}

}  // namespace emp::kernels
