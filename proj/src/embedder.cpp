#include "emp/embedder.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "emp/errors.hpp"

namespace emp {
namespace {

using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

constexpr int kKernel = 3;
constexpr int kTaps = kKernel * kKernel;

// Unfolds a CHW tensor (channels x (h*w), channel-major) into 3x3 patches with zero padding 1.
Eigen::MatrixXd im2col(const Eigen::MatrixXd& input, int h, int w, int stride, int out_h,
                       int out_w) {
  const int channels = static_cast<int>(input.rows());
  Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(channels * kTaps, out_h * out_w);
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kKernel; ++ky) {
      for (int kx = 0; kx < kKernel; ++kx) {
        const int row = c * kTaps + ky * kKernel + kx;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= w) continue;
            cols(row, oy * out_w + ox) = input(c, iy * w + ix);
          }
        }
      }
    }
  }
  return cols;
}

Eigen::MatrixXd col2im(const Eigen::MatrixXd& cols, int channels, int h, int w, int stride,
                       int out_h, int out_w) {
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(channels, h * w);
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kKernel; ++ky) {
      for (int kx = 0; kx < kKernel; ++kx) {
        const int row = c * kTaps + ky * kKernel + kx;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= w) continue;
            grad(c, iy * w + ix) += cols(row, oy * out_w + ox);
          }
        }
      }
    }
  }
  return grad;
}

Eigen::MatrixXd network_input(const Frame& frame, double max_depth) {
  const int h = frame.height();
  const int w = frame.width();
  Eigen::MatrixXd x(EmbedderParams::kInputChannels, h * w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int p = r * w + c;
      x(0, p) = frame.rgb.at(r, c, 0);
      x(1, p) = frame.rgb.at(r, c, 1);
      x(2, p) = frame.rgb.at(r, c, 2);
      x(3, p) = std::clamp(frame.depth(r, c) / max_depth, 0.0, 1.0);
    }
  }
  return x;
}

void fill_uniform(std::vector<double>& v, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& x : v) x = dist(rng);
}

}  // namespace

void Frame::validate() const {
  if (rgb.height <= 0 || rgb.width <= 0 ||
      rgb.data.size() != static_cast<std::size_t>(rgb.height) * rgb.width * 3) {
    throw InvalidArgument("frame: malformed rgb image");
  }
  if (depth.rows() != rgb.height || depth.cols() != rgb.width) {
    throw InvalidArgument("frame: rgb and depth dimensions differ");
  }
  for (double v : rgb.data) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw InvalidArgument("frame: rgb values must lie in [0, 1]");
    }
  }
  validate_depth(depth);
  if (intrinsics.width != rgb.width || intrinsics.height != rgb.height) {
    throw InvalidArgument("frame: intrinsics do not match the image size");
  }
}

void EmbedderConfig::validate() const {
  if (channels <= 0 || hidden <= 0) throw InvalidArgument("embedder: channel counts must be > 0");
  if (second_stride != 1 && second_stride != 2) {
    throw InvalidArgument("embedder: second_stride must be 1 or 2");
  }
  if (!(max_depth > 0.0)) throw InvalidArgument("embedder: max_depth must be > 0");
}

EmbedderParams EmbedderParams::zeros(const EmbedderConfig& config) {
  config.validate();
  EmbedderParams p;
  p.config = config;
  p.conv1_weight.assign(static_cast<std::size_t>(config.hidden) * kInputChannels * kTaps, 0.0);
  p.conv1_bias.assign(config.hidden, 0.0);
  p.conv2_weight.assign(static_cast<std::size_t>(config.channels) * config.hidden * kTaps, 0.0);
  return p;
}

EmbedderParams EmbedderParams::initialise(const EmbedderConfig& config, std::uint64_t seed) {
  EmbedderParams p = zeros(config);
  std::mt19937_64 rng(seed);
  const double fan1 = kInputChannels * kTaps + config.hidden * kTaps;
  const double fan2 = config.hidden * kTaps + config.channels * kTaps;
  fill_uniform(p.conv1_weight, std::sqrt(6.0 / fan1), rng);
  fill_uniform(p.conv2_weight, std::sqrt(6.0 / fan2), rng);
  return p;
}

std::vector<TensorView> EmbedderParams::tensors() {
  const int h = config.hidden;
  const int n = config.channels;
  return {
      {"conv1.weight", {h, kInputChannels, kKernel, kKernel}, conv1_weight},
      {"conv1.bias", {h}, conv1_bias},
      {"conv2.weight", {n, h, kKernel, kKernel}, conv2_weight},
  };
}

std::size_t EmbedderParams::parameter_count() const {
  return conv1_weight.size() + conv1_bias.size() + conv2_weight.size();
}

bool EmbedderParams::all_finite() const {
  for (const auto* v : {&conv1_weight, &conv1_bias, &conv2_weight}) {
    for (double x : *v) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

std::pair<int, int> embedding_grid(const EmbedderConfig& config, int height, int width) {
  if (height <= 0 || width <= 0 || height % 4 != 0 || width % 4 != 0) {
    throw InvalidArgument("embedder: frame size " + std::to_string(height) + "x" +
                          std::to_string(width) + " is not divisible by 4");
  }
  return {height / config.downsample(), width / config.downsample()};
}

PointCloud grid_coordinates(const Frame& frame, int grid_height, int grid_width) {
  const DepthMap small = downsample_depth(frame.depth, grid_height, grid_width);
  return backproject(small, frame.intrinsics.rescaled(grid_width, grid_height));
}

std::pair<PointEmbeddings, EmbedderTape> extract_with_tape(const Frame& frame,
                                                           const EmbedderParams& params) {
  const EmbedderConfig& cfg = params.config;
  cfg.validate();
  frame.validate();
  const auto [gh, gw] = embedding_grid(cfg, frame.height(), frame.width());

  EmbedderTape tape;
  tape.in_height = frame.height();
  tape.in_width = frame.width();
  tape.mid_height = frame.height() / 2;
  tape.mid_width = frame.width() / 2;
  tape.out_height = gh;
  tape.out_width = gw;

  const Eigen::MatrixXd x = network_input(frame, cfg.max_depth);
  tape.cols1 = im2col(x, tape.in_height, tape.in_width, 2, tape.mid_height, tape.mid_width);
  // Aligned copies fix the reduction order.
  const RowMatrix w1 = ConstRowMap(params.conv1_weight.data(), cfg.hidden,
                                   EmbedderParams::kInputChannels * kTaps);
  const Eigen::VectorXd b1 = Eigen::Map<const Eigen::VectorXd>(params.conv1_bias.data(), cfg.hidden);
  tape.pre1 = w1 * tape.cols1;
  tape.pre1.colwise() += b1;
  const Eigen::MatrixXd act1 = tape.pre1.cwiseMax(0.0);

  tape.cols2 = im2col(act1, tape.mid_height, tape.mid_width, cfg.second_stride, gh, gw);
  const RowMatrix w2 = ConstRowMap(params.conv2_weight.data(), cfg.channels, cfg.hidden * kTaps);
  const Eigen::MatrixXd out = w2 * tape.cols2;

  PointEmbeddings pe;
  pe.grid_height = gh;
  pe.grid_width = gw;
  pe.feats = out.transpose();
  PointCloud cloud = grid_coordinates(frame, gh, gw);
  pe.coords = std::move(cloud.points);
  pe.valid = std::move(cloud.valid);
  return {std::move(pe), std::move(tape)};
}

PointEmbeddings extract(const Frame& frame, const EmbedderParams& params) {
  return extract_with_tape(frame, params).first;
}

void backpropagate(const EmbedderTape& tape, const EmbedderParams& params,
                   const RowMatrix& feats_grad, EmbedderParams& grads) {
  const EmbedderConfig& cfg = params.config;
  const Eigen::Index pixels = static_cast<Eigen::Index>(tape.out_height) * tape.out_width;
  if (feats_grad.rows() != pixels || feats_grad.cols() != cfg.channels) {
    throw InvalidArgument("backpropagate: feature gradient has the wrong shape");
  }
  const Eigen::MatrixXd d_out = feats_grad.transpose();

  RowMap gw2(grads.conv2_weight.data(), cfg.channels, cfg.hidden * kTaps);
  const RowMatrix dw2 = d_out * tape.cols2.transpose();
  gw2 += dw2;

  const RowMatrix w2 = ConstRowMap(params.conv2_weight.data(), cfg.channels, cfg.hidden * kTaps);
  const Eigen::MatrixXd d_cols2 = w2.transpose() * d_out;
  Eigen::MatrixXd d_pre1 = col2im(d_cols2, cfg.hidden, tape.mid_height, tape.mid_width,
                                  cfg.second_stride, tape.out_height, tape.out_width);
  d_pre1 = (tape.pre1.array() > 0.0).select(d_pre1, 0.0);

  RowMap gw1(grads.conv1_weight.data(), cfg.hidden, EmbedderParams::kInputChannels * kTaps);
  Eigen::Map<Eigen::VectorXd> gb1(grads.conv1_bias.data(), cfg.hidden);
  const RowMatrix dw1 = d_pre1 * tape.cols1.transpose();
  const Eigen::VectorXd db1 = d_pre1.rowwise().sum();
  gw1 += dw1;
  gb1 += db1;
}

RowMatrix oracle_encode(const Points3& world, const OracleConfig& config) {
  if (config.frequencies < 1 || !(config.min_frequency > 0.0) ||
      config.max_frequency < config.min_frequency) {
    throw InvalidArgument("oracle: invalid frequency configuration");
  }
  RowMatrix feats(world.rows(), config.channels());
  for (int k = 0; k < config.frequencies; ++k) {
    const double t = config.frequencies == 1 ? 0.0 : static_cast<double>(k) / (config.frequencies - 1);
    const double freq = config.min_frequency * std::pow(config.max_frequency / config.min_frequency, t);
    const double omega = 2.0 * std::numbers::pi * freq;
    const double amp = config.amplitude / std::pow(omega, config.band_exponent);
    for (Eigen::Index j = 0; j < world.rows(); ++j) {
      for (int axis = 0; axis < 3; ++axis) {
        const double phase = omega * world(j, axis);
        feats(j, 6 * k + 2 * axis) = amp * std::sin(phase);
        feats(j, 6 * k + 2 * axis + 1) = amp * std::cos(phase);
      }
    }
  }
  return feats;
}

PointEmbeddings extract_oracle(const Frame& frame, const OracleConfig& config) {
  if (!frame.gt_pose) throw PreconditionError("extract_oracle: frame has no ground-truth pose");
  if (config.downsample < 1 || frame.height() % config.downsample != 0 ||
      frame.width() % config.downsample != 0) {
    throw InvalidArgument("extract_oracle: frame size not divisible by the downsample factor");
  }
  const int gh = frame.height() / config.downsample;
  const int gw = frame.width() / config.downsample;
  PointCloud cloud = grid_coordinates(frame, gh, gw);
  PointEmbeddings pe;
  pe.grid_height = gh;
  pe.grid_width = gw;
  pe.feats = oracle_encode(transform(cloud.points, *frame.gt_pose), config);
  pe.coords = std::move(cloud.points);
  pe.valid = std::move(cloud.valid);
  return pe;
}

}  // namespace emp
