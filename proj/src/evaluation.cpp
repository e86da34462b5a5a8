#include "emp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "emp/errors.hpp"

namespace emp {
namespace {

void check_pair(const Trajectory& pred, const Trajectory& gt, std::size_t k, const char* name) {
  if (pred.size() != gt.size()) {
    throw InvalidArgument(std::string(name) + ": trajectories differ in length");
  }
  if (k == 0 || k > pred.size()) {
    throw InvalidArgument(std::string(name) + ": k must lie in [1, trajectory length]");
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (pred.frames[i] != gt.frames[i]) {
      throw InvalidArgument(std::string(name) + ": frame indices differ");
    }
  }
}

Points3 positions(const Trajectory& t, std::size_t k) {
  Points3 out(static_cast<Eigen::Index>(k), 3);
  for (std::size_t i = 0; i < k; ++i) out.row(static_cast<Eigen::Index>(i)) = t.poses[i].translation.transpose();
  return out;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) r[idx[m]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

void Trajectory::push(int frame, const Pose& pose, bool flag) {
  if (!frames.empty() && frame <= frames.back()) {
    throw InvalidArgument("Trajectory: frame indices must increase strictly");
  }
  frames.push_back(frame);
  poses.push_back(pose);
  flagged.push_back(flag);
}

Trajectory run_pipeline(const std::vector<Frame>& seq, const Embedder& embedder,
                        const PipelineOptions& options) {
  if (seq.empty()) throw InvalidArgument("run_pipeline: empty sequence");
  Trajectory traj;
  std::optional<SpatialMemory> mem;
  Pose previous;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const PointEmbeddings pe = embedder.extract(seq[t]);
    if (!mem) mem.emplace(options.buffer, pe.size(), pe.channels());
    Pose pose;
    bool flag = false;
    if (t > 0) {
      try {
        pose = options.mode == LocaliseMode::kHard ? localise_hard(*mem, pe, options.scale).pose
                                                   : localise_soft(*mem, pe, options.scale).pose;
      } catch (const DegenerateError&) {
        pose = previous;
        flag = true;
      }
    }
    mem->insert(pe, pose, static_cast<int>(t) + 1);
    traj.push(static_cast<int>(t) + 1, pose, flag);
    previous = pose;
  }
  return traj;
}

Trajectory ground_truth(const std::vector<Frame>& seq) {
  Trajectory traj;
  if (seq.empty()) return traj;
  if (!seq.front().gt_pose) throw PreconditionError("ground_truth: frame 1 has no pose");
  const Pose first_inv = seq.front().gt_pose->inverse();
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (!seq[t].gt_pose) throw PreconditionError("ground_truth: frame without pose");
    traj.push(static_cast<int>(t) + 1, first_inv.compose(*seq[t].gt_pose));
  }
  return traj;
}

double ape(const Trajectory& pred, const Trajectory& gt, std::size_t k) {
  check_pair(pred, gt, k, "ape");
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += (pred.poses[i].translation - gt.poses[i].translation).norm();
  return sum / static_cast<double>(k);
}

AteResult ate(const Trajectory& pred, const Trajectory& gt, std::size_t k) {
  check_pair(pred, gt, k, "ate");
  const Points3 p = positions(pred, k);
  const Points3 q = positions(gt, k);
  AteResult out;
  Pose align;
  try {
    align = best_fit(p, q);
  } catch (const DegenerateError& e) {
    align = e.fallback();
    out.translation_only = true;
  }
  const Points3 moved = transform(p, align);
  out.value = std::sqrt((q - moved).rowwise().squaredNorm().mean());
  return out;
}

std::vector<SweepRow> fixed_memory_sweep(const std::vector<Frame>& seq, const Embedder& embedder,
                                         const std::vector<int>& offsets,
                                         const PipelineOptions& options) {
  const int b = options.buffer;
  if (b < 1) throw InvalidArgument("fixed_memory_sweep: buffer must be positive");
  int max_offset = 0;
  for (int o : offsets) {
    if (o < 0) throw InvalidArgument("fixed_memory_sweep: offsets must be non-negative");
    max_offset = std::max(max_offset, o);
  }
  if (static_cast<int>(seq.size()) < b + max_offset) {
    throw InvalidArgument("fixed_memory_sweep: sequence too short for the largest offset");
  }
  for (const Frame& f : seq) {
    if (!f.gt_pose) throw PreconditionError("fixed_memory_sweep: frames need ground-truth poses");
  }

  const Pose anchor_inv = seq[static_cast<std::size_t>(b - 1)].gt_pose->inverse();
  std::optional<SpatialMemory> mem;
  for (int m = 0; m < b; ++m) {
    const Frame& f = seq[static_cast<std::size_t>(m)];
    const PointEmbeddings pe = embedder.extract(f);
    if (!mem) mem.emplace(b, pe.size(), pe.channels());
    mem->insert(pe, anchor_inv.compose(*f.gt_pose), m + 1);
  }
  mem->freeze();
  const PointCloud target = mem->cloud();

  std::vector<SweepRow> rows;
  for (int o : offsets) {
    const int index = b - 1 + o;
    const Frame& f = seq[static_cast<std::size_t>(index)];
    const Pose truth = anchor_inv.compose(*f.gt_pose);
    const PointEmbeddings pe = embedder.extract(f);

    SweepRow row;
    row.offset = o;
    row.frame = index + 1;
    Localisation loc;
    try {
      loc = options.mode == LocaliseMode::kHard ? localise_hard(*mem, pe, options.scale)
                                                : localise_soft(*mem, pe, options.scale);
    } catch (const DegenerateError&) {
      row.degenerate = true;
      loc.pose = Pose::identity();
      loc.matches = match_against_memory(*mem, pe, options.scale).matches;
    }
    row.emp_error = (loc.pose.translation - truth.translation).norm();
    row.low_confidence_fraction = loc.matches.low_confidence_fraction();
    row.icp_error = (icp(pe.cloud(), target).pose.translation - truth.translation).norm();
    rows.push_back(row);
  }
  return rows;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw InvalidArgument("spearman: length mismatch");
  if (x.size() < 2) return 0.0;
  const std::vector<double> rx = ranks(x);
  const std::vector<double> ry = ranks(y);
  const Eigen::Map<const Eigen::VectorXd> a(rx.data(), static_cast<Eigen::Index>(rx.size()));
  const Eigen::Map<const Eigen::VectorXd> b(ry.data(), static_cast<Eigen::Index>(ry.size()));
  const Eigen::VectorXd da = a.array() - a.mean();
  const Eigen::VectorXd db = b.array() - b.mean();
  const double denom = da.norm() * db.norm();
  if (denom == 0.0) return 0.0;
  return da.dot(db) / denom;
}

ClusterResult kmeans(const RowMatrix& data, int k, std::uint64_t seed, int max_iterations) {
  const Eigen::Index n = data.rows();
  if (k < 1) throw InvalidArgument("kmeans: k must be at least 1");
  if (k > n) throw InvalidArgument("kmeans: k exceeds the number of rows");
  std::mt19937_64 rng(seed);

  ClusterResult out;
  out.centres.resize(k, data.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  out.centres.row(0) = data.row(pick(rng));
  Eigen::VectorXd nearest = (data.rowwise() - out.centres.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = nearest.sum();
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      for (chosen = 0; chosen < n - 1; ++chosen) {
        target -= nearest(chosen);
        if (target < 0.0) break;
      }
    } else {
      chosen = pick(rng);
    }
    out.centres.row(c) = data.row(chosen);
    nearest = nearest.cwiseMin((data.rowwise() - out.centres.row(c)).rowwise().squaredNorm());
  }

  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  const Eigen::VectorXd data_sq = data.rowwise().squaredNorm();
  for (int it = 0; it < max_iterations; ++it) {
    const Eigen::VectorXd centre_sq = out.centres.rowwise().squaredNorm();
    const Eigen::MatrixXd cross = data * out.centres.transpose();
    bool changed = false;
    double objective = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = data_sq(i) + centre_sq(c) - 2.0 * cross(i, c);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      objective += (data.row(i) - out.centres.row(best)).squaredNorm();
      if (labels[static_cast<std::size_t>(i)] != best) changed = true;
      labels[static_cast<std::size_t>(i)] = best;
    }
    out.objective.push_back(objective);
    out.iterations = it + 1;
    if (!changed) break;

    RowMatrix sums = RowMatrix::Zero(k, data.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(labels[static_cast<std::size_t>(i)]) += data.row(i);
      ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        out.centres.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      }
    }
  }
  out.labels = std::move(labels);
  return out;
}

ClusterResult cluster_embeddings(const SpatialMemory& mem, int k, std::uint64_t seed) {
  if (mem.empty()) throw InvalidArgument("cluster_embeddings: memory is empty");
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < mem.rows(); ++i) {
    if (mem.valid()(i)) rows.push_back(i);
  }
  if (k < 1 || static_cast<std::size_t>(k) > rows.size()) {
    throw InvalidArgument("cluster_embeddings: k must lie in [1, valid rows]");
  }
  RowMatrix data(static_cast<Eigen::Index>(rows.size()), mem.channels());
  for (std::size_t r = 0; r < rows.size(); ++r) data.row(static_cast<Eigen::Index>(r)) = mem.feats().row(rows[r]);
  ClusterResult fit = kmeans(data, k, seed);
  std::vector<int> labels(static_cast<std::size_t>(mem.rows()), -1);
  for (std::size_t r = 0; r < rows.size(); ++r) labels[static_cast<std::size_t>(rows[r])] = fit.labels[r];
  fit.labels = std::move(labels);
  return fit;
}

}  // namespace emp
