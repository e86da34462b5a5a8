#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emp/geometry.hpp"

namespace emp {

/// Interleaved RGB image, values in [0, 1].
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<double> data;  // height * width * 3

  double at(int row, int col, int channel) const {
    return data[(static_cast<std::size_t>(row) * width + col) * 3 + channel];
  }
  double& at(int row, int col, int channel) {
    return data[(static_cast<std::size_t>(row) * width + col) * 3 + channel];
  }
  bool operator==(const RgbImage&) const = default;
};

/// One RGB-D observation. gt_pose maps camera coordinates into the world frame.
struct Frame {
  RgbImage rgb;
  DepthMap depth;
  Intrinsics intrinsics;
  std::optional<Pose> gt_pose;

  int height() const { return rgb.height; }
  int width() const { return rgb.width; }
  void validate() const;
};

/// Paired per-point features and egocentric coordinates on the downsampled grid.
struct PointEmbeddings {
  RowMatrix feats;  // N_r x n
  Points3 coords;   // N_r x 3
  Mask valid;       // N_r
  int grid_height = 0;
  int grid_width = 0;

  Eigen::Index size() const { return feats.rows(); }
  Eigen::Index channels() const { return feats.cols(); }
  PointCloud cloud() const { return {coords, valid}; }
};

struct EmbedderConfig {
  int channels = 16;       // n
  int hidden = 16;         // width of the first block
  int second_stride = 1;   // 1: grid is h/2 x w/2, 2: grid is h/4 x w/4
  double max_depth = 8.0;  // depth input is scaled by 1/max_depth and clamped to [0, 1]

  int downsample() const { return 2 * second_stride; }
  void validate() const;
  bool operator==(const EmbedderConfig&) const = default;
};

/// Named view over one parameter tensor.
struct TensorView {
  std::string name;
  std::vector<int> shape;
  std::span<double> data;
};

/// Two 3x3 convolution blocks: conv(4 -> hidden, stride 2) + bias + ReLU, then a linear
/// conv(hidden -> n) without bias.
struct EmbedderParams {
  EmbedderConfig config;
  std::vector<double> conv1_weight;  // hidden x 4 x 3 x 3
  std::vector<double> conv1_bias;    // hidden
  std::vector<double> conv2_weight;  // n x hidden x 3 x 3

  static constexpr int kInputChannels = 4;

  /// Glorot-uniform weights, zero biases.
  static EmbedderParams initialise(const EmbedderConfig& config, std::uint64_t seed);
  /// Same shapes, all zeros.
  static EmbedderParams zeros(const EmbedderConfig& config);

  std::vector<TensorView> tensors();
  std::size_t parameter_count() const;
  bool all_finite() const;
  bool operator==(const EmbedderParams&) const = default;
};

/// Intermediates of one forward pass, sufficient for exact reverse-mode gradients.
struct EmbedderTape {
  int in_height = 0, in_width = 0;
  int mid_height = 0, mid_width = 0;
  int out_height = 0, out_width = 0;
  Eigen::MatrixXd cols1;       // (4*9) x (mid_h*mid_w)
  Eigen::MatrixXd pre1;        // hidden x (mid_h*mid_w), before ReLU
  Eigen::MatrixXd cols2;       // (hidden*9) x (out_h*out_w)
};

/// Grid size produced for a frame; throws InvalidArgument if the frame is not divisible.
std::pair<int, int> embedding_grid(const EmbedderConfig& config, int height, int width);

PointEmbeddings extract(const Frame& frame, const EmbedderParams& params);
std::pair<PointEmbeddings, EmbedderTape> extract_with_tape(const Frame& frame,
                                                           const EmbedderParams& params);

/// Accumulates d(loss)/d(params) into grads given d(loss)/d(feats) (N_r x n).
void backpropagate(const EmbedderTape& tape, const EmbedderParams& params,
                   const RowMatrix& feats_grad, EmbedderParams& grads);

/// Coordinates and validity for a frame on the given grid (shared by every backend).
PointCloud grid_coordinates(const Frame& frame, int grid_height, int grid_width);

/// Viewpoint-invariant test backend: sinusoidal encoding of ground-truth world position.
struct OracleConfig {
  int frequencies = 4;  // geometric from min to max; n = 6 * frequencies
  double min_frequency = 0.1;
  double max_frequency = 10.0;
  double amplitude = 1000.0;  // feature scale relative to the unit-scale softmax
  double band_exponent = 1.0;  // band k is scaled by amplitude / omega_k^band_exponent
  int downsample = 2;

  int channels() const { return 6 * frequencies; }
};

/// Encoding of world points (rows) into OracleConfig::channels() features.
RowMatrix oracle_encode(const Points3& world, const OracleConfig& config);

/// Throws PreconditionError when the frame has no gt_pose.
PointEmbeddings extract_oracle(const Frame& frame, const OracleConfig& config);

/// Common interface for feature backends used by the pipeline and the evaluation tools.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual PointEmbeddings extract(const Frame& frame) const = 0;
  virtual int channels() const = 0;
};

class ConvEmbedder final : public Embedder {
 public:
  explicit ConvEmbedder(EmbedderParams params) : params_(std::move(params)) {}
  PointEmbeddings extract(const Frame& frame) const override { return emp::extract(frame, params_); }
  int channels() const override { return params_.config.channels; }
  const EmbedderParams& params() const { return params_; }

 private:
  EmbedderParams params_;
};

class OracleEmbedder final : public Embedder {
 public:
  explicit OracleEmbedder(OracleConfig config = {}) : config_(config) {}
  PointEmbeddings extract(const Frame& frame) const override {
    return extract_oracle(frame, config_);
  }
  int channels() const override { return config_.channels(); }
  const OracleConfig& config() const { return config_; }

 private:
  OracleConfig config_;
};

/// Checkpoint: u64 LE header length, JSON header, then float32 LE tensor data.
void save_checkpoint(const std::string& path, const EmbedderParams& params);
EmbedderParams load_checkpoint(const std::string& path);

}  // namespace emp
