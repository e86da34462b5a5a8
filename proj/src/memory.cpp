#include "emp/memory.hpp"

#include <string>

#include "emp/errors.hpp"

namespace emp {

SpatialMemory::SpatialMemory(int capacity, Eigen::Index points_per_frame, Eigen::Index channels)
    : capacity_(capacity), points_per_frame_(points_per_frame), channels_(channels) {
  if (capacity < 1 || points_per_frame < 1 || channels < 1) {
    throw InvalidArgument("memory: capacity, points per frame and channels must be >= 1");
  }
  feats_.resize(0, channels);
  coords_.resize(0, 3);
  valid_.resize(0);
}

bool SpatialMemory::insert(const PointEmbeddings& pe, const Pose& pose,
                           std::optional<int> frame_id) {
  if (pe.size() != points_per_frame_) {
    throw InvalidArgument("memory: expected " + std::to_string(points_per_frame_) +
                          " point-embeddings, got " + std::to_string(pe.size()));
  }
  if (pe.channels() != channels_) {
    throw InvalidArgument("memory: expected " + std::to_string(channels_) +
                          " feature channels, got " + std::to_string(pe.channels()));
  }
  if (frozen_) return false;

  const Eigen::Index n = points_per_frame_;
  const Eigen::Index keep = occupancy() == capacity_ ? (capacity_ - 1) * n : rows();
  const Eigen::Index drop = rows() - keep;

  RowMatrix feats(keep + n, channels_);
  Points3 coords(keep + n, 3);
  Mask valid(keep + n);
  feats.topRows(keep) = feats_.bottomRows(keep);
  coords.topRows(keep) = coords_.bottomRows(keep);
  valid.head(keep) = valid_.tail(keep);

  feats.bottomRows(n) = pe.feats;
  coords.bottomRows(n) = transform(pe.cloud(), pose).points;
  valid.tail(n) = pe.valid;

  feats_ = std::move(feats);
  coords_ = std::move(coords);
  valid_ = std::move(valid);
  if (drop > 0) frame_ids_.erase(frame_ids_.begin());
  const int id = frame_id.value_or(next_id_);
  next_id_ = id + 1;
  frame_ids_.push_back(id);
  return true;
}

std::pair<int, Eigen::Index> SpatialMemory::provenance(Eigen::Index row) const {
  if (row < 0 || row >= rows()) throw InvalidArgument("memory: row out of range");
  return {frame_ids_[static_cast<std::size_t>(row / points_per_frame_)], row % points_per_frame_};
}

void write_memory_csv(std::ostream& out, const SpatialMemory& mem, std::span<const int> labels) {
  if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != mem.rows()) {
    throw InvalidArgument("memory dump: one label per memory row required");
  }
  out << (labels.empty() ? "frame_id,x,y,z\n" : "frame_id,x,y,z,label\n");
  out.precision(9);
  for (Eigen::Index r = 0; r < mem.rows(); ++r) {
    if (!mem.valid()(r)) continue;
    out << mem.provenance(r).first << ',' << mem.coords()(r, 0) << ',' << mem.coords()(r, 1)
        << ',' << mem.coords()(r, 2);
    if (!labels.empty()) out << ',' << labels[static_cast<std::size_t>(r)];
    out << '\n';
  }
}

}  // namespace emp
