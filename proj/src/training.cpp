#include "emp/training.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

#include "emp/errors.hpp"
#include "emp/kernels.hpp"

namespace emp {
namespace {

constexpr Eigen::Index kTrainBlock = 128;
// Rows with tau * (D - D_min) above this carry ground-truth mass below exp(-50).
constexpr double kSupportCutoff = 50.0;
constexpr Eigen::Index kScanChunk = 64;

struct StepPlan {
  int frame = 0;
  std::vector<std::pair<int, Eigen::Index>> rows;  // (frame, point) per compact memory row
  Points3 memory_coords;                           // ground-truth aligned, memory frame
  std::vector<Eigen::Index> cols;                  // valid points of the incoming frame
  Points3 ego;                                     // egocentric coords of those points
  std::vector<Eigen::Index> gt_offsets;            // CSR over columns
  std::vector<Eigen::Index> gt_rows;
  std::vector<double> gt_values;
};

struct SequencePlan {
  std::vector<Pose> relative;  // first camera -> frame t
  std::vector<StepPlan> steps;
};

SequencePlan make_plan(const std::vector<PointCloud>& clouds, const std::vector<Frame>& seq,
                       const HyperParams& hyper) {
  SequencePlan plan;
  const Pose first_inv = seq.front().gt_pose->inverse();
  for (const Frame& f : seq) plan.relative.push_back(first_inv.compose(*f.gt_pose));

  const int count = static_cast<int>(seq.size());
  for (int t = 1; t < count; ++t) {
    StepPlan step;
    step.frame = t;
    for (int m = std::max(0, t - hyper.buffer); m < t; ++m) {
      const PointCloud& c = clouds[static_cast<std::size_t>(m)];
      for (Eigen::Index j = 0; j < c.size(); ++j) {
        if (c.valid(j)) step.rows.emplace_back(m, j);
      }
    }
    const PointCloud& cur = clouds[static_cast<std::size_t>(t)];
    for (Eigen::Index j = 0; j < cur.size(); ++j) {
      if (cur.valid(j)) step.cols.push_back(j);
    }
    const auto mv = static_cast<Eigen::Index>(step.rows.size());
    const auto nc = static_cast<Eigen::Index>(step.cols.size());
    if (mv == 0 || nc == 0) continue;

    step.memory_coords.resize(mv, 3);
    for (Eigen::Index r = 0; r < mv; ++r) {
      const auto [m, j] = step.rows[static_cast<std::size_t>(r)];
      step.memory_coords.row(r) =
          plan.relative[static_cast<std::size_t>(m)].apply(clouds[static_cast<std::size_t>(m)].points.row(j).transpose()).transpose();
    }
    step.ego.resize(nc, 3);
    for (Eigen::Index k = 0; k < nc; ++k) step.ego.row(k) = cur.points.row(step.cols[static_cast<std::size_t>(k)]);
    const Points3 aligned = transform(step.ego, plan.relative[static_cast<std::size_t>(t)]);

    step.gt_offsets.reserve(static_cast<std::size_t>(nc) + 1);
    step.gt_offsets.push_back(0);
    const Eigen::Matrix<double, Eigen::Dynamic, 3> mc = step.memory_coords;
    Eigen::VectorXd d2(mv);
    for (Eigen::Index k = 0; k < nc; ++k) {
      d2 = (mc.col(0).array() - aligned(k, 0)).square() + (mc.col(1).array() - aligned(k, 1)).square() +
           (mc.col(2).array() - aligned(k, 2)).square();
      const double dmin = std::sqrt(d2.minCoeff());
      const double reach = dmin + kSupportCutoff / hyper.tau;
      const double limit = reach * reach * (1.0 + 1e-9);
      double total = 0.0;
      const std::size_t first = step.gt_rows.size();
      for (Eigen::Index r = 0; r < mv; ++r) {
        if (r % kScanChunk == 0 && d2.segment(r, std::min(kScanChunk, mv - r)).minCoeff() > limit) {
          r += kScanChunk - 1;
          continue;
        }
        if (d2(r) > limit) continue;
        const double z = hyper.tau * (std::sqrt(d2(r)) - dmin);
        if (z > kSupportCutoff) continue;
        const double g = std::exp(-z);
        step.gt_rows.push_back(r);
        step.gt_values.push_back(g);
        total += g;
      }
      for (std::size_t e = first; e < step.gt_values.size(); ++e) step.gt_values[e] /= total;
      step.gt_offsets.push_back(static_cast<Eigen::Index>(step.gt_rows.size()));
    }
    plan.steps.push_back(std::move(step));
  }
  return plan;
}

void check_sequence(const std::vector<Frame>& seq) {
  if (seq.size() < 2) throw InvalidArgument("training: sequence length must be at least 2");
  for (const Frame& f : seq) {
    if (!f.gt_pose) throw PreconditionError("training: every frame needs a ground-truth pose");
  }
}

struct StepResult {
  double loss_c = 0.0;
  Points3 soft;  // expected correspondences, one row per column
};

// One streaming pass over the columns of a localisation step, evaluated in scalar type S.
// Without gradient buffers it evaluates the cross-entropy and the soft correspondences; with
// them it accumulates d(loss)/d(memory feats) and d(loss)/d(incoming feats), where the loss is
// ce_weight * loss_c + sum_j pose_grad_j . soft_j.
template <typename S>
StepResult column_pass(const StepPlan& step, const RowMatrix& mem_feats_in,
                       const RowMatrix& cur_feats_in, double ce_weight, const Points3* pose_grad,
                       const Points3* soft, RowMatrix* mem_grad, RowMatrix* cur_grad) {
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  using Coords = Eigen::Matrix<S, Eigen::Dynamic, 3>;
  const RowMat mem_feats = mem_feats_in.cast<S>();
  const RowMat cur_feats = cur_feats_in.cast<S>();
  const Coords coords = step.memory_coords.cast<S>();
  const Eigen::Index mv = mem_feats.rows();
  const Eigen::Index nc = cur_feats.rows();
  const bool with_grad = mem_grad != nullptr;
  const Vec mem_sq = mem_feats.rowwise().squaredNorm();
  const S distance_eps = static_cast<S>(kDistanceEpsilon);
  // Distances at the floor come from a clamped (non-positive) squared distance.
  const S floor = std::sqrt(S(0) + distance_eps);

  StepResult out;
  out.soft.resize(nc, 3);
  Mat block, mem_acc;
  Vec e(mv);
  std::vector<S> gt_dist;
  RowMat cur_acc, mem_ext, cur_ext;
  if (with_grad) {
    const Eigen::Index n = mem_feats.cols();
    mem_ext.resize(mv, n + 1);
    mem_ext << mem_feats, Vec::Ones(mv);
    cur_ext.resize(nc, n + 1);
    cur_ext << cur_feats, Vec::Ones(nc);
    mem_acc = Mat::Zero(mv, n + 1);
    cur_acc.resize(nc, n + 1);
  }
  for (Eigen::Index c0 = 0; c0 < nc; c0 += kTrainBlock) {
    const Eigen::Index count = std::min(kTrainBlock, nc - c0);
    const auto hf = cur_feats.middleRows(c0, count);
    block.noalias() = mem_feats * hf.transpose();
    for (Eigen::Index k = 0; k < count; ++k) {
      const Eigen::Index col = c0 + k;
      auto d = block.col(k);
      d = ((mem_sq.array() + hf.row(k).squaredNorm() - S(2) * d.array()).max(S(0)) + distance_eps).sqrt();
      const S dmin = d.minCoeff();
      e = (dmin - d.array()).exp();
      const double inv_sum = 1.0 / static_cast<double>(e.sum());

      const auto begin = static_cast<std::size_t>(step.gt_offsets[static_cast<std::size_t>(col)]);
      const auto end = static_cast<std::size_t>(step.gt_offsets[static_cast<std::size_t>(col) + 1]);
      gt_dist.resize(end - begin);
      double column_loss = 0.0;
      double support = 0.0;
      for (std::size_t e_i = begin; e_i < end; ++e_i) {
        const double pr = static_cast<double>(e(step.gt_rows[e_i])) * inv_sum;
        column_loss -= step.gt_values[e_i] * std::log(pr + kLogEpsilon);
        support += step.gt_values[e_i] * pr / (pr + kLogEpsilon);
        gt_dist[e_i - begin] = d(step.gt_rows[e_i]);
      }
      out.loss_c += column_loss;

      if (!with_grad) {
        d = e * static_cast<S>(inv_sum);
        continue;
      }
      // d(loss)/d(distance) = p * (coef - pose term) plus the sparse ground-truth part.
      const auto coef = static_cast<S>(-ce_weight * support);
      const auto norm = static_cast<S>(inv_sum);
      const auto mask = ((d.array() - floor) * S(1e30)).max(S(0)).min(S(1));
      if (pose_grad != nullptr) {
        const Vec3 g = pose_grad->row(col).transpose();
        const auto centre = static_cast<S>(soft->row(col).dot(g.transpose()));
        const auto proj = coords.col(0).array() * static_cast<S>(g.x()) +
                          coords.col(1).array() * static_cast<S>(g.y()) +
                          coords.col(2).array() * static_cast<S>(g.z());
        d = mask * (norm * e.array() * (coef - (proj - centre))) / d.array();
      } else {
        d = mask * ((coef * norm) * e.array()) / d.array();
      }
      for (std::size_t e_i = begin; e_i < end; ++e_i) {
        const Eigen::Index r = step.gt_rows[e_i];
        const double pr = static_cast<double>(e(r)) * inv_sum;
        const S dist = gt_dist[e_i - begin];
        if (dist > floor) {
          d(r) += static_cast<S>(ce_weight * step.gt_values[e_i] * pr / (pr + kLogEpsilon)) / dist;
        }
      }
    }
    const Eigen::Map<const Mat> grads(block.data(), mv, count);
    if (with_grad) {
      // The trailing ones column yields the row and column sums of the gradient block.
      mem_acc.noalias() += grads * cur_ext.middleRows(c0, count);
      cur_acc.middleRows(c0, count).noalias() = grads.transpose() * mem_ext;
    } else {
      out.soft.middleRows(c0, count) = (grads.transpose() * coords).template cast<double>();
    }
  }
  if (with_grad) {
    const Eigen::Index n = mem_feats.cols();
    *mem_grad = (mem_acc.col(n).asDiagonal() * mem_feats - mem_acc.leftCols(n)).template cast<double>();
    *cur_grad = (cur_acc.col(n).asDiagonal() * cur_feats - cur_acc.leftCols(n)).template cast<double>();
  }
  return out;
}

StepResult column_pass(Precision precision, const StepPlan& step, const RowMatrix& mem_feats,
                       const RowMatrix& cur_feats, double ce_weight, const Points3* pose_grad,
                       const Points3* soft, RowMatrix* mem_grad, RowMatrix* cur_grad) {
  if (precision == Precision::kSingle) {
    return column_pass<float>(step, mem_feats, cur_feats, ce_weight, pose_grad, soft, mem_grad, cur_grad);
  }
  return column_pass<double>(step, mem_feats, cur_feats, ce_weight, pose_grad, soft, mem_grad, cur_grad);
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

struct PoseTerms {
  bool degenerate = true;
  PoseLosses losses;
  Mat3 rotation = Mat3::Identity();
  Points3 grad;  // d(lambda_R loss_R + lambda_t loss_t)/d(soft_j)
};

// loss_t uses `frozen_rotation` in place of the fitted rotation when given, so finite
// differences can probe the objective in which R is a constant inside loss_t.
PoseTerms pose_terms(const Points3& ego, const Points3& soft, const Pose& gt,
                     const HyperParams& hyper, bool with_grad, const Mat3* frozen_rotation) {
  PoseTerms out;
  const Eigen::Index n = ego.rows();
  Pose pred;
  try {
    pred = best_fit(ego, soft);
  } catch (const DegenerateError&) {
    return out;
  }
  out.degenerate = false;
  out.rotation = pred.rotation;
  const Vec3 p_bar = ego.colwise().mean().transpose();
  const Vec3 q_bar = soft.colwise().mean().transpose();
  if (frozen_rotation != nullptr) pred.translation = q_bar - *frozen_rotation * p_bar;
  out.losses = pose_losses(pred, gt);
  if (!with_grad) return out;

  const Points3 p_hat = ego.rowwise() - p_bar.transpose();
  const Mat3 h = p_hat.transpose() * (soft.rowwise() - q_bar.transpose());
  const Mat3& r = pred.rotation;

  Mat3 dh = Mat3::Zero();
  if (out.losses.rotation > 0.0) {
    const Eigen::Quaterniond qp = pred.quaternion();
    Eigen::Quaterniond qg(gt.rotation);
    qg.normalize();
    Eigen::Vector4d diff = qp.coeffs() - qg.coeffs();
    const Eigen::Vector4d alt = qp.coeffs() + qg.coeffs();
    if (alt.norm() < diff.norm()) diff = alt;
    const Eigen::Vector4d gq = diff / diff.norm();  // (x, y, z, w)
    const Vec3 qv = qp.vec();
    const Vec3 gv = gq.head<3>();
    const Vec3 gw = 0.5 * (-gq(3) * qv + qp.w() * gv + qv.cross(gv));
    const Mat3 sym = 0.5 * (r * h + (r * h).transpose());
    const Mat3 a = sym.trace() * Mat3::Identity() - sym;
    const Vec3 y = a.fullPivLu().solve(gw);
    dh = -r.transpose() * skew(y);
  }
  Vec3 et = Vec3::Zero();
  if (out.losses.translation > 0.0) {
    et = (pred.translation - gt.translation) / out.losses.translation;
  }
  out.grad = hyper.lambda_rotation * (p_hat * dh);
  out.grad.rowwise() += (hyper.lambda_translation / static_cast<double>(n)) * et.transpose();
  return out;
}

RowMatrix gather_rows(const std::vector<RowMatrix>& feats,
                      const std::vector<std::pair<int, Eigen::Index>>& rows) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), feats.front().cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = feats[static_cast<std::size_t>(rows[r].first)].row(rows[r].second);
  }
  return out;
}

// Loss (and optionally per-frame feature gradients) of a planned sequence.
// Fitted rotations are appended to `rotations` when given; `frozen` supplies the rotations
// used inside loss_t (one per step) instead of the fitted ones.
SequenceLoss evaluate(const SequencePlan& plan, const std::vector<RowMatrix>& feats,
                      const TrainConfig& cfg, std::vector<RowMatrix>* grads,
                      std::vector<Mat3>* rotations = nullptr,
                      const std::vector<Mat3>* frozen = nullptr) {
  SequenceLoss loss;
  const bool pose_variant = cfg.variant == Variant::kPose;
  const double frame_weight = plan.steps.empty() ? 0.0 : 1.0 / static_cast<double>(plan.steps.size());
  for (std::size_t s = 0; s < plan.steps.size(); ++s) {
    const StepPlan& step = plan.steps[s];
    const RowMatrix mem = gather_rows(feats, step.rows);
    RowMatrix cur(static_cast<Eigen::Index>(step.cols.size()), mem.cols());
    for (std::size_t k = 0; k < step.cols.size(); ++k) {
      cur.row(static_cast<Eigen::Index>(k)) = feats[static_cast<std::size_t>(step.frame)].row(step.cols[k]);
    }
    const auto nc = static_cast<double>(step.cols.size());

    FrameDiagnostics diag;
    diag.frame = step.frame;
    diag.columns = static_cast<Eigen::Index>(step.cols.size());
    const bool need_soft = pose_variant || grads == nullptr;
    StepResult fwd;
    PoseTerms pose;
    if (need_soft) {
      fwd = column_pass(cfg.precision, step, mem, cur, 0.0, nullptr, nullptr, nullptr, nullptr);
      diag.loss_c = fwd.loss_c / nc;
    }
    if (pose_variant) {
      pose = pose_terms(step.ego, fwd.soft, plan.relative[static_cast<std::size_t>(step.frame)],
                        cfg.hyper, grads != nullptr, frozen ? &(*frozen)[s] : nullptr);
      diag.pose_degenerate = pose.degenerate;
      if (rotations != nullptr) rotations->push_back(pose.rotation);
      if (!pose.degenerate) {
        diag.loss_rotation = pose.losses.rotation;
        diag.loss_translation = pose.losses.translation;
      }
    }

    if (grads != nullptr) {
      RowMatrix mem_grad = RowMatrix::Zero(mem.rows(), mem.cols());
      RowMatrix cur_grad(cur.rows(), cur.cols());
      Points3 pose_grad;
      const bool with_pose = pose_variant && !pose.degenerate;
      if (with_pose) pose_grad = frame_weight * pose.grad;
      const StepResult back =
          column_pass(cfg.precision, step, mem, cur, frame_weight / nc, with_pose ? &pose_grad : nullptr,
                      with_pose ? &fwd.soft : nullptr, &mem_grad, &cur_grad);
      if (!need_soft) diag.loss_c = back.loss_c / nc;
      for (std::size_t r = 0; r < step.rows.size(); ++r) {
        (*grads)[static_cast<std::size_t>(step.rows[r].first)].row(step.rows[r].second) +=
            mem_grad.row(static_cast<Eigen::Index>(r));
      }
      RowMatrix& target = (*grads)[static_cast<std::size_t>(step.frame)];
      for (std::size_t k = 0; k < step.cols.size(); ++k) {
        target.row(step.cols[k]) += cur_grad.row(static_cast<Eigen::Index>(k));
      }
    }

    loss.loss_c += frame_weight * diag.loss_c;
    loss.loss_rotation += frame_weight * diag.loss_rotation;
    loss.loss_translation += frame_weight * diag.loss_translation;
    loss.frames.push_back(diag);
  }
  loss.total = loss.loss_c;
  if (pose_variant) {
    loss.total += cfg.hyper.lambda_rotation * loss.loss_rotation +
                  cfg.hyper.lambda_translation * loss.loss_translation;
  }
  return loss;
}

std::vector<PointCloud> conv_clouds(const std::vector<Frame>& seq, const EmbedderConfig& config) {
  std::vector<PointCloud> clouds;
  for (const Frame& f : seq) {
    const auto [gh, gw] = embedding_grid(config, f.height(), f.width());
    clouds.push_back(grid_coordinates(f, gh, gw));
  }
  return clouds;
}

SequenceGradient planned_backward(const std::vector<Frame>& seq, const SequencePlan& plan,
                                  const EmbedderParams& params, const TrainConfig& cfg) {
  std::vector<RowMatrix> feats, feat_grads;
  std::vector<EmbedderTape> tapes;
  for (const Frame& f : seq) {
    auto [pe, tape] = extract_with_tape(f, params);
    feat_grads.push_back(RowMatrix::Zero(pe.feats.rows(), pe.feats.cols()));
    feats.push_back(std::move(pe.feats));
    tapes.push_back(std::move(tape));
  }
  SequenceGradient out;
  out.loss = evaluate(plan, feats, cfg, &feat_grads);
  out.grads = EmbedderParams::zeros(params.config);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    backpropagate(tapes[i], params, feat_grads[i], out.grads);
  }
  return out;
}

double planned_loss(const std::vector<Frame>& seq, const SequencePlan& plan,
                    const EmbedderParams& params, const TrainConfig& cfg,
                    std::vector<Mat3>* rotations = nullptr,
                    const std::vector<Mat3>* frozen = nullptr) {
  std::vector<RowMatrix> feats;
  for (const Frame& f : seq) feats.push_back(extract(f, params).feats);
  return evaluate(plan, feats, cfg, nullptr, rotations, frozen).total;
}

double squared_norm(EmbedderParams& p) {
  double s = 0.0;
  for (const TensorView& t : p.tensors()) {
    for (double v : t.data) s += v * v;
  }
  return s;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1 || sequence_length < 2 || epochs < 0 || jobs < 1) {
    throw InvalidArgument("TrainConfig: counts must be positive (sequence length >= 2)");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("TrainConfig: learning rate must be finite and non-negative");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("TrainConfig: moment decay rates must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw InvalidArgument("TrainConfig: adam epsilon must be positive");
  hyper.validate();
}

SequenceLoss sequence_loss(const std::vector<Frame>& seq, const Embedder& embedder,
                           const TrainConfig& cfg) {
  check_sequence(seq);
  std::vector<PointCloud> clouds;
  std::vector<RowMatrix> feats;
  for (const Frame& f : seq) {
    PointEmbeddings pe = embedder.extract(f);
    clouds.push_back(pe.cloud());
    feats.push_back(std::move(pe.feats));
  }
  return evaluate(make_plan(clouds, seq, cfg.hyper), feats, cfg, nullptr);
}

SequenceGradient backward(const std::vector<Frame>& seq, const EmbedderParams& params,
                          const TrainConfig& cfg) {
  check_sequence(seq);
  const SequencePlan plan = make_plan(conv_clouds(seq, params.config), seq, cfg.hyper);
  return planned_backward(seq, plan, params, cfg);
}

GradientReport gradient_check(const std::vector<Frame>& seq, const EmbedderParams& params,
                              const TrainConfig& config, double step) {
  check_sequence(seq);
  TrainConfig cfg = config;
  cfg.precision = Precision::kDouble;
  const SequencePlan plan = make_plan(conv_clouds(seq, params.config), seq, cfg.hyper);
  SequenceGradient analytic = planned_backward(seq, plan, params, cfg);
  std::vector<Mat3> rotations;
  planned_loss(seq, plan, params, cfg, &rotations);

  EmbedderParams probe = params;
  auto probe_tensors = probe.tensors();
  auto grad_tensors = analytic.grads.tensors();
  GradientReport report;
  for (std::size_t t = 0; t < probe_tensors.size(); ++t) {
    std::span<double> values = probe_tensors[t].data;
    Eigen::VectorXd numeric(static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = planned_loss(seq, plan, probe, cfg, nullptr, &rotations);
      values[i] = saved - step;
      const double down = planned_loss(seq, plan, probe, cfg, nullptr, &rotations);
      values[i] = saved;
      numeric(static_cast<Eigen::Index>(i)) = (up - down) / (2.0 * step);
    }
    const Eigen::Map<const Eigen::VectorXd> exact(grad_tensors[t].data.data(),
                                                  static_cast<Eigen::Index>(grad_tensors[t].data.size()));
    TensorGradientError err;
    err.name = probe_tensors[t].name;
    err.analytic_norm = exact.norm();
    err.numeric_norm = numeric.norm();
    err.relative_error =
        (exact - numeric).norm() / std::max({err.analytic_norm, err.numeric_norm, 1e-12});
    report.max_relative_error = std::max(report.max_relative_error, err.relative_error);
    report.tensors.push_back(err);
  }
  return report;
}

GradientCheckInstance small_gradient_instance(Variant variant, std::uint64_t param_seed) {
  const Intrinsics k{8, 8, 3.5, 3.5, 8, 8};
  TrajectorySpec spec;
  spec.frames = 3;
  spec.seed = 5;
  EmbedderConfig ec;
  ec.channels = 3;
  ec.second_stride = 2;
  GradientCheckInstance inst;
  inst.sequence = generate_sequence(Scene::generate(3), spec, k);
  inst.params = EmbedderParams::initialise(ec, param_seed);
  inst.config.hyper.buffer = 2;
  inst.config.variant = variant;
  return inst;
}

std::vector<std::vector<Frame>> training_windows(const std::vector<Sequence>& sequences,
                                                 int length) {
  if (length < 2) throw InvalidArgument("training_windows: length must be at least 2");
  std::vector<std::vector<Frame>> out;
  const auto len = static_cast<std::size_t>(length);
  for (const Sequence& s : sequences) {
    for (std::size_t start = 0; start + len <= s.frames.size(); start += len) {
      out.emplace_back(s.frames.begin() + static_cast<std::ptrdiff_t>(start),
                       s.frames.begin() + static_cast<std::ptrdiff_t>(start + len));
    }
  }
  return out;
}

TrainResult train(const std::vector<std::vector<Frame>>& dataset, EmbedderParams initial,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw InvalidArgument("train: dataset is empty");
  if (!initial.all_finite()) throw InvalidArgument("train: initial parameters are not finite");
  for (const auto& seq : dataset) {
    check_sequence(seq);
    if (static_cast<int>(seq.size()) != cfg.sequence_length) {
      throw InvalidArgument("train: every window must hold " + std::to_string(cfg.sequence_length) +
                            " frames");
    }
  }

  std::vector<SequencePlan> plans;
  plans.reserve(dataset.size());
  for (const auto& seq : dataset) {
    plans.push_back(make_plan(conv_clouds(seq, initial.config), seq, cfg.hyper));
  }
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);
  auto checkpoint = [&](int epoch, const EmbedderParams& p) {
    if (cfg.checkpoint_dir.empty()) return;
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch);
    save_checkpoint((std::filesystem::path(cfg.checkpoint_dir) / name).string(), p);
  };

  TrainResult result;
  result.params = std::move(initial);
  checkpoint(0, result.params);

  EmbedderParams m = EmbedderParams::zeros(result.params.config);
  EmbedderParams v = EmbedderParams::zeros(result.params.config);
  long long step_count = 0;
  double lr = cfg.learning_rate;
  bool clip = false;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());

  struct Snapshot {
    EmbedderParams params, m, v;
    long long steps;
    std::mt19937_64 rng;
    std::size_t curve_size;
  };
  Snapshot good{result.params, m, v, step_count, rng, 0};

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    bool diverged = false;
    const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size() && !diverged; start += batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      std::vector<SequenceGradient> parts(end - start);
      auto work = [&](std::size_t worker) {
        for (std::size_t i = worker; i < parts.size(); i += static_cast<std::size_t>(cfg.jobs)) {
          const std::size_t idx = order[start + i];
          parts[i] = planned_backward(dataset[idx], plans[idx], result.params, cfg);
        }
      };
      if (cfg.jobs == 1) {
        work(0);
      } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < cfg.jobs; ++w) pool.emplace_back(work, static_cast<std::size_t>(w));
        for (std::thread& th : pool) th.join();
      }

      EmbedderParams grad = EmbedderParams::zeros(result.params.config);
      LossRecord record;
      record.epoch = epoch;
      record.batch = batch_index;
      const double scale = 1.0 / static_cast<double>(parts.size());
      auto grad_tensors = grad.tensors();
      for (SequenceGradient& part : parts) {
        auto part_tensors = part.grads.tensors();
        for (std::size_t t = 0; t < grad_tensors.size(); ++t) {
          for (std::size_t i = 0; i < grad_tensors[t].data.size(); ++i) {
            grad_tensors[t].data[i] += scale * part_tensors[t].data[i];
          }
        }
        record.loss_c += scale * part.loss.loss_c;
        record.loss_rotation += scale * part.loss.loss_rotation;
        record.loss_translation += scale * part.loss.loss_translation;
      }
      const double total = record.loss_c + record.loss_rotation + record.loss_translation;
      if (!std::isfinite(total) || !grad.all_finite()) {
        diverged = true;
        break;
      }
      if (clip) {
        const double norm = std::sqrt(squared_norm(grad));
        if (norm > 1.0) {
          for (const TensorView& t : grad.tensors()) {
            for (double& g : t.data) g /= norm;
          }
        }
      }

      ++step_count;
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
      auto pt = result.params.tensors();
      auto mt = m.tensors();
      auto vt = v.tensors();
      for (std::size_t t = 0; t < pt.size(); ++t) {
        for (std::size_t i = 0; i < pt[t].data.size(); ++i) {
          const double g = grad_tensors[t].data[i];
          mt[t].data[i] = cfg.beta1 * mt[t].data[i] + (1.0 - cfg.beta1) * g;
          vt[t].data[i] = cfg.beta2 * vt[t].data[i] + (1.0 - cfg.beta2) * g * g;
          const double mhat = mt[t].data[i] / c1;
          const double vhat = vt[t].data[i] / c2;
          pt[t].data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
        }
      }
      result.curve.push_back(record);
      if (!result.params.all_finite()) diverged = true;
    }

    if (diverged) {
      if (result.retried) {
        throw NumericalError("train: loss became non-finite after the reduced-rate retry in epoch " +
                             std::to_string(epoch));
      }
      result.retried = true;
      lr = cfg.learning_rate / 10.0;
      clip = true;
      result.params = good.params;
      m = good.m;
      v = good.v;
      step_count = good.steps;
      rng = good.rng;
      result.curve.resize(good.curve_size);
      --epoch;
      continue;
    }
    checkpoint(epoch, result.params);
    good = Snapshot{result.params, m, v, step_count, rng, result.curve.size()};
  }
  return result;
}

void write_loss_csv(std::ostream& out, const std::vector<LossRecord>& curve) {
  out << "epoch,batch,loss_c,loss_R,loss_t\n";
  char buf[160];
  for (const LossRecord& r : curve) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g\n", r.epoch, r.batch, r.loss_c,
                  r.loss_rotation, r.loss_translation);
    out << buf;
  }
}

}  // namespace emp
