#include "emp/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "emp/errors.hpp"

namespace emp {
namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double lattice(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
  const std::uint64_t h = mix64(seed ^ mix64(static_cast<std::uint64_t>(ix) * 0x100000001b3ULL ^
                                             mix64(static_cast<std::uint64_t>(iy))));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(double x, double y, double wavelength, std::uint64_t seed) {
  const double fx = x / wavelength;
  const double fy = y / wavelength;
  const double x0 = std::floor(fx);
  const double y0 = std::floor(fy);
  const double tx = smooth(fx - x0);
  const double ty = smooth(fy - y0);
  const auto ix = static_cast<std::int64_t>(x0);
  const auto iy = static_cast<std::int64_t>(y0);
  const double a = lattice(ix, iy, seed), b = lattice(ix + 1, iy, seed);
  const double c = lattice(ix, iy + 1, seed), d = lattice(ix + 1, iy + 1, seed);
  return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
}

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Material random_material(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> wave(0.1, 1.0);
  Material m;
  m.base = Vec3(unit(rng), unit(rng), unit(rng)) * 0.7 + Vec3::Constant(0.15);
  m.accent = Vec3(unit(rng), unit(rng), unit(rng)) * 0.7 + Vec3::Constant(0.15);
  m.checker = wave(rng);
  m.noise_wavelength = wave(rng);
  m.noise_seed = rng();
  return m;
}

// Entry parameter of a ray into a solid box (slab test); returns the axis of entry.
bool slab_entry(const Box& box, const Vec3& o, const Vec3& d, double& t_enter, int& axis,
                double& sign) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (d(a) == 0.0) {
      if (o(a) <= box.min(a) || o(a) >= box.max(a)) return false;
      continue;
    }
    double ta = (box.min(a) - o(a)) / d(a);
    double tb = (box.max(a) - o(a)) / d(a);
    double s = -1.0;
    if (ta > tb) {
      std::swap(ta, tb);
      s = 1.0;
    }
    if (ta > t0) {
      t0 = ta;
      axis = a;
      sign = s;
    }
    t1 = std::min(t1, tb);
  }
  if (axis < 0 || t0 > t1 || t0 <= 0.0) return false;
  t_enter = t0;
  return true;
}

}  // namespace

Scene Scene::generate(std::uint64_t seed, const SceneOptions& options) {
  std::mt19937_64 rng(mix64(seed));
  std::uniform_real_distribution<double> size(options.room_min_size, options.room_max_size);
  Scene scene;
  scene.room.min = Vec3::Zero();
  scene.room.max = Vec3(size(rng), size(rng), options.room_height);
  for (int f = 0; f < 6; ++f) scene.materials.push_back(random_material(rng));

  std::uniform_int_distribution<int> count(options.min_obstacles, options.max_obstacles);
  const int n = count(rng);
  std::uniform_real_distribution<double> extent(0.3, 1.0);
  std::uniform_real_distribution<double> tall(0.5, 2.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    Box b;
    const Vec3 e(extent(rng), extent(rng), tall(rng));
    // Obstacles stand against the walls so the room centre stays navigable.
    const int wall = static_cast<int>(rng() % 4);
    const double along = unit(rng);
    const Vec3& r = scene.room.max;
    Vec3 c;
    switch (wall) {
      case 0: c = Vec3(e.x() / 2, e.y() / 2 + along * (r.y() - e.y()), 0); break;
      case 1: c = Vec3(r.x() - e.x() / 2, e.y() / 2 + along * (r.y() - e.y()), 0); break;
      case 2: c = Vec3(e.x() / 2 + along * (r.x() - e.x()), e.y() / 2, 0); break;
      default: c = Vec3(e.x() / 2 + along * (r.x() - e.x()), r.y() - e.y() / 2, 0); break;
    }
    b.min = Vec3(c.x() - e.x() / 2, c.y() - e.y() / 2, 0.0);
    b.max = Vec3(c.x() + e.x() / 2, c.y() + e.y() / 2, e.z());
    scene.obstacles.push_back(b);
    scene.materials.push_back(random_material(rng));
  }
  return scene;
}

std::optional<SurfaceHit> Scene::raycast(const Vec3& o, const Vec3& d) const {
  SurfaceHit best;
  best.t = std::numeric_limits<double>::infinity();
  bool found = false;
  for (int a = 0; a < 3; ++a) {
    if (d(a) == 0.0) continue;
    const bool positive = d(a) > 0.0;
    const double t = ((positive ? room.max(a) : room.min(a)) - o(a)) / d(a);
    if (t > 0.0 && t < best.t) {
      best.t = t;
      best.normal = Vec3::Zero();
      best.normal(a) = positive ? -1.0 : 1.0;
      best.material = 2 * a + (positive ? 1 : 0);
      found = true;
    }
  }
  for (std::size_t i = 0; i < obstacles.size(); ++i) {
    double t = 0.0, sign = 0.0;
    int axis = 0;
    if (slab_entry(obstacles[i], o, d, t, axis, sign) && t < best.t) {
      best.t = t;
      best.normal = Vec3::Zero();
      best.normal(axis) = sign;
      best.material = 6 + static_cast<int>(i);
      found = true;
    }
  }
  if (!found) return std::nullopt;
  best.point = o + best.t * d;
  return best;
}

double Scene::surface_distance(const Vec3& p) const {
  double best = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    best = std::min({best, std::abs(p(a) - room.min(a)), std::abs(p(a) - room.max(a))});
  }
  for (const Box& b : obstacles) {
    // Distance to the box boundary (inside or outside).
    const Vec3 outside = (b.min - p).cwiseMax(p - b.max).cwiseMax(0.0);
    double dist = outside.norm();
    if (dist == 0.0) dist = (p - b.min).cwiseMin(b.max - p).minCoeff();
    best = std::min(best, dist);
  }
  return best;
}

bool Scene::is_free(const Vec3& p, double margin) const {
  if (!((p.array() > room.min.array() + margin).all() &&
        (p.array() < room.max.array() - margin).all())) {
    return false;
  }
  return std::none_of(obstacles.begin(), obstacles.end(),
                      [&](const Box& b) { return b.contains(p, margin); });
}

Vec3 Scene::albedo(const SurfaceHit& hit) const {
  const Material& m = materials[static_cast<std::size_t>(hit.material)];
  int axis = 0;
  hit.normal.cwiseAbs().maxCoeff(&axis);
  const double u = hit.point((axis + 1) % 3);
  const double v = hit.point((axis + 2) % 3);
  const bool check = (static_cast<std::int64_t>(std::floor(u / m.checker)) +
                      static_cast<std::int64_t>(std::floor(v / m.checker))) % 2 != 0;
  const double noise = 0.65 * value_noise(u, v, m.noise_wavelength, m.noise_seed) +
                       0.35 * value_noise(u, v, 0.1, m.noise_seed ^ 0x5bd1e995ULL);
  const Vec3 colour = check ? m.accent : m.base;
  return colour * (0.55 + 0.45 * noise);
}

Mat3 camera_rotation(double yaw, double pitch, double roll) {
  Mat3 base;
  // Columns: camera x (right), y (down), z (forward) at zero yaw, looking along world +x.
  base << 0.0, 0.0, 1.0,
          -1.0, 0.0, 0.0,
          0.0, -1.0, 0.0;
  const Mat3 r = (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
                  Eigen::AngleAxisd(roll, Vec3::UnitX()))
                     .toRotationMatrix();
  return r * base;
}

Frame render(const Scene& scene, const Pose& camera_to_world, const Intrinsics& k) {
  k.validate();
  const Vec3& origin = camera_to_world.translation;
  if (!scene.is_free(origin)) {
    throw InvalidArgument("render: camera centre is inside scene geometry");
  }
  Frame frame;
  frame.intrinsics = k;
  frame.gt_pose = camera_to_world;
  frame.rgb.height = k.height;
  frame.rgb.width = k.width;
  frame.rgb.data.assign(static_cast<std::size_t>(k.height) * k.width * 3, 0.0);
  frame.depth = DepthMap::Zero(k.height, k.width);

  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const Vec3 ray_cam((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
      const Vec3 ray = camera_to_world.rotation * ray_cam;
      const auto hit = scene.raycast(origin, ray);
      if (!hit || hit->t * ray_cam.norm() > scene.max_range) continue;
      frame.depth(v, u) = to_f32(hit->t);
      const double diffuse = std::max(0.0, hit->normal.dot(scene.light));
      const Vec3 c = scene.albedo(*hit) * (scene.ambient + (1.0 - scene.ambient) * diffuse);
      for (int ch = 0; ch < 3; ++ch) frame.rgb.at(v, u, ch) = to_f32(std::clamp(c(ch), 0.0, 1.0));
    }
  }
  return frame;
}

double depth_overlap(const Frame& prev, const Frame& next, int step) {
  if (!prev.gt_pose || !next.gt_pose) throw PreconditionError("depth_overlap: frames need poses");
  const Pose next_to_prev = prev.gt_pose->inverse().compose(*next.gt_pose);
  const Intrinsics& k = next.intrinsics;
  const Intrinsics& kp = prev.intrinsics;
  int total = 0, seen = 0;
  for (int v = step / 2; v < k.height; v += step) {
    for (int u = step / 2; u < k.width; u += step) {
      const double z = next.depth(v, u);
      if (z <= 0.0) continue;
      ++total;
      const Vec3 p(z * (u - k.cx) / k.fx, z * (v - k.cy) / k.fy, z);
      const Vec3 q = next_to_prev.apply(p);
      if (q.z() <= 1e-6) continue;
      const double pu = kp.fx * q.x() / q.z() + kp.cx;
      const double pv = kp.fy * q.y() / q.z() + kp.cy;
      const int iu = static_cast<int>(std::lround(pu));
      const int iv = static_cast<int>(std::lround(pv));
      if (iu < 0 || iv < 0 || iu >= kp.width || iv >= kp.height) continue;
      const double zp = prev.depth(iv, iu);
      if (zp > 0.0 && std::abs(zp - q.z()) < 0.05 * q.z() + 0.01) ++seen;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(seen) / total;
}

std::vector<Frame> generate_sequence(const Scene& scene, const TrajectorySpec& spec,
                                     const Intrinsics& k) {
  if (spec.frames < 0) throw InvalidArgument("generate_sequence: negative frame count");
  std::mt19937_64 rng(mix64(spec.seed ^ 0xa0761d6478bd642fULL));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double yaw_step = spec.step_yaw_deg * std::numbers::pi / 180.0;
  constexpr int kMaxResamples = 100;
  constexpr int kForwardAttempts = 3;
  constexpr int kHalfPlaneAttempts = 60;

  auto median_depth = [](const Frame& f) {
    std::vector<double> d(f.depth.data(), f.depth.data() + f.depth.size());
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
    return d[d.size() / 2];
  };
  auto pose_of = [&](const Vec3& pos, double yaw, double pitch, double roll) {
    Pose p;
    p.rotation = camera_rotation(yaw, pitch, roll);
    p.translation = pos;
    return p;
  };

  std::vector<Frame> frames;
  if (spec.frames == 0) return frames;

  Vec3 pos;
  double yaw = 0.0, pitch = 0.0, roll = 0.0;
  Frame current;
  bool placed = false;
  for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
    pos = Vec3(scene.room.min.x() + unit(rng) * (scene.room.max.x() - scene.room.min.x()),
               scene.room.min.y() + unit(rng) * (scene.room.max.y() - scene.room.min.y()),
               spec.camera_height);
    yaw = sym(rng) * std::numbers::pi;
    if (!scene.is_free(pos, spec.clearance)) continue;
    current = render(scene, pose_of(pos, yaw, pitch, roll), k);
    placed = median_depth(current) >= spec.min_median_depth;
  }
  if (!placed) throw GenerationFailure("generate_sequence: no free start position found");
  frames.push_back(current);

  for (int f = 1; f < spec.frames; ++f) {
    bool accepted = false;
    for (int attempt = 0; attempt < kMaxResamples && !accepted; ++attempt) {
      const double new_yaw = yaw + sym(rng) * yaw_step;
      double new_pitch = pitch, new_roll = roll;
      if (spec.full_rotation) {
        const double limit = 15.0 * std::numbers::pi / 180.0;
        new_pitch = std::clamp(pitch + 0.5 * sym(rng) * yaw_step, -limit, limit);
        new_roll = std::clamp(roll + 0.5 * sym(rng) * yaw_step, -limit, limit);
      }
      // Forward motion first, then the forward half-plane, then any planar direction.
      double heading = new_yaw;
      if (attempt >= kForwardAttempts) heading = new_yaw + 0.5 * std::numbers::pi * sym(rng);
      if (attempt >= kHalfPlaneAttempts) heading = unit(rng) * 2.0 * std::numbers::pi;
      const Vec3 next_pos =
          pos + spec.step_translation * Vec3(std::cos(heading), std::sin(heading), 0.0);
      if (!scene.is_free(next_pos, spec.clearance)) continue;
      Frame candidate = render(scene, pose_of(next_pos, new_yaw, new_pitch, new_roll), k);
      if (median_depth(candidate) < spec.min_median_depth) continue;
      if (depth_overlap(frames.back(), candidate) < spec.min_overlap) continue;
      pos = next_pos;
      yaw = new_yaw;
      pitch = new_pitch;
      roll = new_roll;
      current = std::move(candidate);
      accepted = true;
    }
    if (!accepted) {
      throw GenerationFailure("generate_sequence: overlap constraint unsatisfiable at frame " +
                              std::to_string(f));
    }
    frames.push_back(current);
  }

  if (spec.depth_noise > 0.0) {
    std::mt19937_64 noise_rng(mix64(spec.seed ^ 0xe7037ed1a0b428dbULL));
    for (Frame& fr : frames) {
      for (Eigen::Index i = 0; i < fr.depth.size(); ++i) {
        double& z = fr.depth.data()[i];
        if (z > 0.0) z = to_f32(std::max(0.0, z * (1.0 + spec.depth_noise * gauss(noise_rng))));
      }
    }
  }
  return frames;
}

}  // namespace emp
