#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "emp/embedder.hpp"
#include "emp/geometry.hpp"

namespace emp {

struct Box {
  Vec3 min;
  Vec3 max;
  bool contains(const Vec3& p, double margin = 0.0) const {
    return (p.array() > min.array() - margin).all() && (p.array() < max.array() + margin).all();
  }
};

struct Material {
  Vec3 base;
  Vec3 accent;
  double checker = 0.5;           // checker cell size
  double noise_wavelength = 0.3;  // value-noise lattice spacing
  std::uint64_t noise_seed = 0;
};

struct SurfaceHit {
  double t = 0.0;  // ray parameter
  Vec3 point;
  Vec3 normal;
  int material = 0;
};

struct SceneOptions {
  double room_min_size = 4.5;
  double room_max_size = 5.5;
  double room_height = 2.5;
  int min_obstacles = 3;
  int max_obstacles = 5;
};

/// Closed box room (inward-facing walls, floor at z = 0) containing solid axis-aligned boxes.
/// World frame is z-up.
struct Scene {
  Box room;
  std::vector<Box> obstacles;
  std::vector<Material> materials;  // 6 room faces, then one per obstacle
  Vec3 light = Vec3(0.3, 0.5, 1.0).normalized();
  double ambient = 0.35;
  double max_range = 20.0;

  static Scene generate(std::uint64_t seed, const SceneOptions& options = {});

  std::optional<SurfaceHit> raycast(const Vec3& origin, const Vec3& direction) const;
  /// Unsigned distance from p to the closest surface.
  double surface_distance(const Vec3& p) const;
  /// p inside the room and outside every obstacle, with clearance `margin`.
  bool is_free(const Vec3& p, double margin = 0.0) const;
  Vec3 albedo(const SurfaceHit& hit) const;
};

/// Camera-to-world rotation for a camera at the given yaw (and optional pitch/roll), with
/// camera axes x right, y down, z forward.
Mat3 camera_rotation(double yaw, double pitch = 0.0, double roll = 0.0);

/// Raycast render; values are rounded to float32 precision. Throws InvalidArgument when the
/// camera centre is not in free space.
Frame render(const Scene& scene, const Pose& camera_to_world, const Intrinsics& k);

struct TrajectorySpec {
  int frames = 50;
  double step_translation = 0.15;
  double step_yaw_deg = 6.0;
  std::uint64_t seed = 1;
  bool full_rotation = false;
  double depth_noise = 0.0;  // multiplicative Gaussian sigma
  double min_overlap = 0.4;
  double camera_height = 1.2;
  double clearance = 0.5;
  double min_median_depth = 1.2;
};

class GenerationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fraction of `next`'s valid depth samples that are visible (depth-consistent) in `prev`.
double depth_overlap(const Frame& prev, const Frame& next, int step = 4);

std::vector<Frame> generate_sequence(const Scene& scene, const TrajectorySpec& spec,
                                     const Intrinsics& k = {});

struct Sequence {
  std::string id;
  std::vector<Frame> frames;
  bool operator==(const Sequence& other) const;
};

/// manifest.json plus <id>/%06d.rgb, %06d.depth (float32 LE) and poses.csv per sequence.
void write_dataset(const std::vector<Sequence>& sequences, const std::string& dir);
std::vector<Sequence> read_dataset(const std::string& dir);

}  // namespace emp
