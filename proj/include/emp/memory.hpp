#pragma once

#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "emp/embedder.hpp"
#include "emp/geometry.hpp"

namespace emp {

/// Short-term spatial memory: FIFO of the last `capacity` frames' point-embeddings, with
/// coordinates expressed in the memory frame. Blocks of `points_per_frame` rows are stored
/// oldest first; feats, coords and valid are row-aligned.
class SpatialMemory {
 public:
  SpatialMemory(int capacity, Eigen::Index points_per_frame, Eigen::Index channels);

  /// Transforms pe.coords by `pose` and appends, evicting the oldest block when full.
  /// Returns false (and leaves the memory untouched) when frozen. frame_id defaults to an
  /// internal counter starting at 1.
  bool insert(const PointEmbeddings& pe, const Pose& pose, std::optional<int> frame_id = {});

  void freeze() { frozen_ = true; }
  void unfreeze() { frozen_ = false; }
  bool is_frozen() const { return frozen_; }

  int capacity() const { return capacity_; }
  int occupancy() const { return static_cast<int>(frame_ids_.size()); }
  bool empty() const { return frame_ids_.empty(); }
  Eigen::Index points_per_frame() const { return points_per_frame_; }
  Eigen::Index channels() const { return channels_; }
  Eigen::Index rows() const { return feats_.rows(); }

  const RowMatrix& feats() const { return feats_; }
  const Points3& coords() const { return coords_; }
  const Mask& valid() const { return valid_; }
  const std::vector<int>& frame_ids() const { return frame_ids_; }
  PointCloud cloud() const { return {coords_, valid_}; }

  /// Frame id and in-frame index of a memory row.
  std::pair<int, Eigen::Index> provenance(Eigen::Index row) const;

 private:
  int capacity_;
  Eigen::Index points_per_frame_;
  Eigen::Index channels_;
  bool frozen_ = false;
  int next_id_ = 1;
  RowMatrix feats_;
  Points3 coords_;
  Mask valid_;
  std::vector<int> frame_ids_;
};

/// CSV debug dump: frame_id,x,y,z[,label] for every valid row.
void write_memory_csv(std::ostream& out, const SpatialMemory& mem,
                      std::span<const int> labels = {});

}  // namespace emp
