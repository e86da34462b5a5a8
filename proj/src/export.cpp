#include "emp/export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "emp/errors.hpp"

namespace emp {
namespace {

void check_grid(const CorrespondenceSet& matches, int grid_height, int grid_width) {
  if (grid_height < 1 || grid_width < 1 ||
      static_cast<Eigen::Index>(grid_height) * grid_width != matches.size()) {
    throw InvalidArgument("heatmap: grid does not match the number of weights");
  }
}

double weight_at(const CorrespondenceSet& matches, Eigen::Index j) {
  return matches.valid(j) ? matches.weights(j) : 0.0;
}

std::string format(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_heatmap_pgm(std::ostream& out, const CorrespondenceSet& matches, int grid_height,
                       int grid_width) {
  check_grid(matches, grid_height, grid_width);
  out << "P2\n" << grid_width << ' ' << grid_height << "\n255\n";
  for (int r = 0; r < grid_height; ++r) {
    for (int c = 0; c < grid_width; ++c) {
      const double w = std::clamp(weight_at(matches, static_cast<Eigen::Index>(r) * grid_width + c), 0.0, 1.0);
      if (c > 0) out << ' ';
      out << static_cast<int>(std::lround(255.0 * w));
    }
    out << '\n';
  }
}

void write_heatmap_csv(std::ostream& out, const CorrespondenceSet& matches, int grid_height,
                       int grid_width) {
  check_grid(matches, grid_height, grid_width);
  for (int r = 0; r < grid_height; ++r) {
    for (int c = 0; c < grid_width; ++c) {
      if (c > 0) out << ',';
      out << format(weight_at(matches, static_cast<Eigen::Index>(r) * grid_width + c));
    }
    out << '\n';
  }
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
  out << "frame,tx,ty,tz,qw,qx,qy,qz\n";
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const Pose& p = traj.poses[i];
    const Eigen::Quaterniond q = p.quaternion();
    out << traj.frames[i];
    for (double v : {p.translation.x(), p.translation.y(), p.translation.z(), q.w(), q.x(), q.y(), q.z()}) {
      out << ',' << format(v);
    }
    out << '\n';
  }
}

MetricsReport compute_metrics(const Trajectory& pred, const Trajectory& gt) {
  if (pred.size() != gt.size()) throw InvalidArgument("compute_metrics: trajectories differ in length");
  MetricsReport report;
  report.pred = pred;
  report.gt = gt;
  if (pred.size() >= 5) report.ape_5 = ape(pred, gt, 5);
  if (pred.size() >= 50) {
    report.ape_50 = ape(pred, gt, 50);
    const AteResult a = ate(pred, gt, 50);
    report.ate_50 = a.value;
    report.ate_translation_only = a.translation_only;
  }
  return report;
}

nlohmann::ordered_json metrics_json(const MetricsReport& report) {
  using nlohmann::ordered_json;
  ordered_json j;
  auto value = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  j["ape_5"] = value(report.ape_5);
  j["ape_50"] = value(report.ape_50);
  j["ate_50"] = value(report.ate_50);
  j["ate_translation_only"] = report.ate_translation_only;
  ordered_json frames = ordered_json::array();
  for (std::size_t i = 0; i < report.pred.size() && i < report.gt.size(); ++i) {
    frames.push_back({{"frame", report.pred.frames[i]},
                      {"error", (report.pred.poses[i].translation - report.gt.poses[i].translation).norm()},
                      {"flagged", static_cast<bool>(report.pred.flagged[i])}});
  }
  j["per_frame"] = frames;
  return j;
}

void write_metrics_json(std::ostream& out, const MetricsReport& report) {
  out << metrics_json(report).dump(2) << '\n';
}

}  // namespace emp
