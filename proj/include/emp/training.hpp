#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "emp/correspondence.hpp"
#include "emp/embedder.hpp"
#include "emp/registration.hpp"
#include "emp/simulator.hpp"

namespace emp {

enum class Variant { kPlain, kPose };

/// Arithmetic of the dense loss kernels; gradient_check always runs in double.
enum class Precision { kSingle, kDouble };

struct TrainConfig {
  int batch_size = 16;
  int sequence_length = 5;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int epochs = 10;
  Variant variant = Variant::kPlain;
  std::uint64_t seed = 0;
  HyperParams hyper;
  Precision precision = Precision::kSingle;
  int jobs = 1;                // threads across the sequences of a batch
  std::string checkpoint_dir;  // per-epoch checkpoints when non-empty

  void validate() const;
};

struct FrameDiagnostics {
  int frame = 0;
  double loss_c = 0.0;
  double loss_rotation = 0.0;
  double loss_translation = 0.0;
  Eigen::Index columns = 0;  // incoming points contributing to loss_c
  bool pose_degenerate = false;
};

/// Mean over localised frames (2..L) of loss_c (+ lambda_R loss_R + lambda_t loss_t).
struct SequenceLoss {
  double total = 0.0;
  double loss_c = 0.0;
  double loss_rotation = 0.0;
  double loss_translation = 0.0;
  std::vector<FrameDiagnostics> frames;
};

/// Teacher-forced loss: frame 1 defines the memory frame; each later frame is scored against
/// the memory and then inserted with its ground-truth relative pose.
SequenceLoss sequence_loss(const std::vector<Frame>& seq, const Embedder& embedder,
                           const TrainConfig& cfg);

struct SequenceGradient {
  SequenceLoss loss;
  EmbedderParams grads;
};

/// Exact reverse-mode gradient of sequence_loss. In the pose variant R is held constant
/// inside loss_t and differentiated through the SVD inside loss_R.
SequenceGradient backward(const std::vector<Frame>& seq, const EmbedderParams& params,
                          const TrainConfig& cfg);

struct TensorGradientError {
  std::string name;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  double relative_error = 0.0;
};

struct GradientReport {
  std::vector<TensorGradientError> tensors;
  double max_relative_error = 0.0;
};

/// Analytic vs central finite differences, per tensor:
/// |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-12).
GradientReport gradient_check(const std::vector<Frame>& seq, const EmbedderParams& params,
                              const TrainConfig& cfg, double step = 1e-4);

/// 8x8 frames from a 3-frame simulator sequence, N_r = 4, b = 2, n = 3.
struct GradientCheckInstance {
  std::vector<Frame> sequence;
  EmbedderParams params;
  TrainConfig config;
};
GradientCheckInstance small_gradient_instance(Variant variant, std::uint64_t param_seed = 1);

struct LossRecord {
  int epoch = 0;
  int batch = 0;
  double loss_c = 0.0;
  double loss_rotation = 0.0;
  double loss_translation = 0.0;
};

struct TrainResult {
  EmbedderParams params;
  std::vector<LossRecord> curve;
  bool retried = false;  // a non-finite loss forced a restart at lr / 10 with clipping
};

/// Adam over seeded shuffles of the training windows.
TrainResult train(const std::vector<std::vector<Frame>>& dataset, EmbedderParams initial,
                  const TrainConfig& cfg);

/// Splits sequences into consecutive non-overlapping windows of `length` frames.
std::vector<std::vector<Frame>> training_windows(const std::vector<Sequence>& sequences,
                                                 int length);

void write_loss_csv(std::ostream& out, const std::vector<LossRecord>& curve);

}  // namespace emp
