#pragma once

#include <optional>
#include <ostream>

#include <json.hpp>

#include "emp/correspondence.hpp"
#include "emp/evaluation.hpp"

namespace emp {

/// Match weights reshaped to the embedding grid, as ASCII PGM (P2, maxval 255,
/// value = round(255 * weight)). Invalid columns are written as 0.
void write_heatmap_pgm(std::ostream& out, const CorrespondenceSet& matches, int grid_height,
                       int grid_width);
/// Same grid as CSV, one row per line, full precision.
void write_heatmap_csv(std::ostream& out, const CorrespondenceSet& matches, int grid_height,
                       int grid_width);

/// frame,tx,ty,tz,qw,qx,qy,qz with qw >= 0.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj);

struct MetricsReport {
  std::optional<double> ape_5;
  std::optional<double> ape_50;
  std::optional<double> ate_50;
  bool ate_translation_only = false;
  Trajectory pred;
  Trajectory gt;
};

/// Metrics at k = 5 and k = 50 (absent when the trajectory is shorter).
MetricsReport compute_metrics(const Trajectory& pred, const Trajectory& gt);

/// {ape_5, ape_50, ate_50, per_frame: [{frame, error, flagged}]}, null for absent metrics.
nlohmann::ordered_json metrics_json(const MetricsReport& report);
void write_metrics_json(std::ostream& out, const MetricsReport& report);

}  // namespace emp
