#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <vector>

namespace emp {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// Pinhole camera. Pixel (u, v) = (column, row); pixel centres sit at integer coordinates.
struct Intrinsics {
  double fx = 160.0;
  double fy = 160.0;
  double cx = 79.5;
  double cy = 59.5;
  int width = 160;
  int height = 120;

  Mat3 matrix() const;

  /// Throws InvalidArgument unless fx, fy > 0 and the principal point lies inside the image.
  void validate() const;

  /// Intrinsics of the same camera sampled on a width x height grid whose cell centres are
  /// aligned with the original image (cell-centre convention used by downsample_depth).
  Intrinsics rescaled(int new_width, int new_height) const;

  bool operator==(const Intrinsics&) const = default;
};

/// Rigid transform mapping points of a source frame into a target frame: x' = R x + t.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  static Pose from_yaw(double yaw_rad, const Vec3& translation = Vec3::Zero());

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Pose compose(const Pose& rhs) const;  // (*this) o rhs
  Pose inverse() const;

  /// Projects the rotation back onto SO(3) (nearest rotation in Frobenius norm).
  Pose orthonormalized() const;

  /// Orthonormality and det = +1 within tol.
  bool is_rigid(double tol = 1e-9) const;

  /// Unit quaternion (w, x, y, z) with w >= 0.
  Eigen::Quaterniond quaternion() const;
};

/// Depth image in world length units; exactly 0 marks an invalid pixel.
using DepthMap = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void validate_depth(const DepthMap& d);

struct PointCloud {
  Points3 points;
  Mask valid;

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index valid_count() const { return valid.count(); }
};

/// Bilinear resampling with cell-centre alignment. A target cell touching an invalid source
/// pixel (with non-zero interpolation weight) becomes invalid.
DepthMap downsample_depth(const DepthMap& depth, int out_height, int out_width);

/// point(v, u) = depth(v, u) * K^-1 [u, v, 1]^T, row-major order.
PointCloud backproject(const DepthMap& depth, const Intrinsics& k);

PointCloud transform(const PointCloud& cloud, const Pose& pose);
Points3 transform(const Points3& points, const Pose& pose);

/// Rotation matrix for an axis-angle vector.
Mat3 exp_so3(const Vec3& omega);

}  // namespace emp
