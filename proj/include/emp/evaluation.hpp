#pragma once

#include <cstdint>
#include <vector>

#include "emp/embedder.hpp"
#include "emp/memory.hpp"
#include "emp/registration.hpp"

namespace emp {

/// Poses in a common world frame, ordered by strictly increasing frame index.
struct Trajectory {
  std::vector<int> frames;
  std::vector<Pose> poses;
  std::vector<bool> flagged;  // degenerate localisation, previous pose carried forward

  std::size_t size() const { return frames.size(); }
  void push(int frame, const Pose& pose, bool flag = false);
};

enum class LocaliseMode { kHard, kSoft };

struct PipelineOptions {
  int buffer = 4;
  LocaliseMode mode = LocaliseMode::kHard;
  double scale = 1.0;  // softmax scale applied to embedding distances
};

/// Frame 1 seeds the memory at identity; every later frame is localised against the memory
/// and then inserted with its predicted pose.
Trajectory run_pipeline(const std::vector<Frame>& seq, const Embedder& embedder,
                        const PipelineOptions& options = {});

/// Ground-truth poses re-expressed relative to the first frame.
Trajectory ground_truth(const std::vector<Frame>& seq);

/// Mean over the first k frames of |t_pred - t_gt|, without alignment.
double ape(const Trajectory& pred, const Trajectory& gt, std::size_t k);

struct AteResult {
  double value = 0.0;
  bool translation_only = false;  // rigid alignment was degenerate
};

/// RMS position error over the first k frames after rigidly aligning pred onto gt.
AteResult ate(const Trajectory& pred, const Trajectory& gt, std::size_t k);

struct SweepRow {
  int offset = 0;
  int frame = 0;
  double emp_error = 0.0;
  double icp_error = 0.0;
  double low_confidence_fraction = 0.0;
  bool degenerate = false;
};

/// Memory holds frames 1..b (ground-truth aligned, expressed in frame b's camera) and is
/// frozen; frame b + offset is then localised by the embedding path and by ICP (both starting
/// from frame b's pose).
std::vector<SweepRow> fixed_memory_sweep(const std::vector<Frame>& seq, const Embedder& embedder,
                                         const std::vector<int>& offsets,
                                         const PipelineOptions& options = {});

/// Rank correlation with average ranks for ties; 0 when either side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct ClusterResult {
  std::vector<int> labels;         // one per input row, -1 for masked rows
  RowMatrix centres;               // k x n
  std::vector<double> objective;   // sum of squared distances after each assignment step
  int iterations = 0;
};

/// Seeded k-means (k-means++ initialisation, at most max_iterations Lloyd steps).
ClusterResult kmeans(const RowMatrix& data, int k, std::uint64_t seed, int max_iterations = 100);

/// k-means over the valid rows of the memory features.
ClusterResult cluster_embeddings(const SpatialMemory& mem, int k, std::uint64_t seed = 0);

}  // namespace emp
