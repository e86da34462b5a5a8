#include "emp/geometry.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>

#include "emp/errors.hpp"

namespace emp {

Mat3 Intrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw InvalidArgument("intrinsics: focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw InvalidArgument("intrinsics: image size must be positive");
  }
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw InvalidArgument("intrinsics: principal point outside the image");
  }
}

Intrinsics Intrinsics::rescaled(int new_width, int new_height) const {
  if (new_width <= 0 || new_height <= 0) {
    throw InvalidArgument("intrinsics: rescale target must be positive");
  }
  const double sx = static_cast<double>(new_width) / width;
  const double sy = static_cast<double>(new_height) / height;
  Intrinsics out;
  out.fx = fx * sx;
  out.fy = fy * sy;
  out.cx = (cx + 0.5) * sx - 0.5;
  out.cy = (cy + 0.5) * sy - 0.5;
  out.width = new_width;
  out.height = new_height;
  return out;
}

Pose Pose::from_yaw(double yaw_rad, const Vec3& translation) {
  Pose p;
  p.rotation = Eigen::AngleAxisd(yaw_rad, Vec3::UnitZ()).toRotationMatrix();
  p.translation = translation;
  return p;
}

Pose Pose::compose(const Pose& rhs) const {
  Pose out;
  out.rotation = rotation * rhs.rotation;
  out.translation = rotation * rhs.translation + translation;
  return out;
}

Pose Pose::inverse() const {
  Pose out;
  out.rotation = rotation.transpose();
  out.translation = -(out.rotation * translation);
  return out;
}

Pose Pose::orthonormalized() const {
  Eigen::JacobiSVD<Mat3> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  Pose out = *this;
  out.rotation = u * v.transpose();
  return out;
}

bool Pose::is_rigid(double tol) const {
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol &&
         translation.allFinite();
}

Eigen::Quaterniond Pose::quaternion() const {
  Eigen::Quaterniond q(rotation);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return q;
}

void validate_depth(const DepthMap& d) {
  if (!d.allFinite()) throw InvalidArgument("depth map contains non-finite values");
  if ((d < 0.0).any()) throw InvalidArgument("depth map contains negative values");
}

DepthMap downsample_depth(const DepthMap& depth, int out_height, int out_width) {
  const int h = static_cast<int>(depth.rows());
  const int w = static_cast<int>(depth.cols());
  if (out_height <= 0 || out_width <= 0) {
    throw InvalidArgument("downsample_depth: target dimensions must be >= 1");
  }
  if (out_height > h || out_width > w) {
    throw InvalidArgument("downsample_depth: target larger than source");
  }
  const double sy = static_cast<double>(h) / out_height;
  const double sx = static_cast<double>(w) / out_width;

  DepthMap out(out_height, out_width);
  for (int r = 0; r < out_height; ++r) {
    const double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(std::floor(y));
    const int y1 = std::min(y0 + 1, h - 1);
    const double fy = y - y0;
    for (int c = 0; c < out_width; ++c) {
      const double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, w - 1.0);
      const int x0 = static_cast<int>(std::floor(x));
      const int x1 = std::min(x0 + 1, w - 1);
      const double fx = x - x0;

      const double w00 = (1.0 - fy) * (1.0 - fx);
      const double w01 = (1.0 - fy) * fx;
      const double w10 = fy * (1.0 - fx);
      const double w11 = fy * fx;
      const double d00 = depth(y0, x0), d01 = depth(y0, x1);
      const double d10 = depth(y1, x0), d11 = depth(y1, x1);

      const bool invalid = (w00 > 0.0 && d00 == 0.0) || (w01 > 0.0 && d01 == 0.0) ||
                           (w10 > 0.0 && d10 == 0.0) || (w11 > 0.0 && d11 == 0.0);
      out(r, c) = invalid ? 0.0 : w00 * d00 + w01 * d01 + w10 * d10 + w11 * d11;
    }
  }
  return out;
}

PointCloud backproject(const DepthMap& depth, const Intrinsics& k) {
  if (depth.rows() != k.height || depth.cols() != k.width) {
    throw InvalidArgument("backproject: depth is " + std::to_string(depth.rows()) + "x" +
                          std::to_string(depth.cols()) + " but intrinsics describe " +
                          std::to_string(k.height) + "x" + std::to_string(k.width));
  }
  PointCloud cloud;
  const Eigen::Index n = depth.size();
  cloud.points.setZero(n, 3);
  cloud.valid.setConstant(n, false);
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const double z = depth(v, u);
      if (!(z > 0.0)) continue;
      const Eigen::Index j = static_cast<Eigen::Index>(v) * k.width + u;
      cloud.points(j, 0) = z * (u - k.cx) / k.fx;
      cloud.points(j, 1) = z * (v - k.cy) / k.fy;
      cloud.points(j, 2) = z;
      cloud.valid(j) = true;
    }
  }
  return cloud;
}

Points3 transform(const Points3& points, const Pose& pose) {
  Points3 out = points * pose.rotation.transpose();
  out.rowwise() += pose.translation.transpose();
  return out;
}

PointCloud transform(const PointCloud& cloud, const Pose& pose) {
  PointCloud out;
  out.points = transform(cloud.points, pose);
  for (Eigen::Index i = 0; i < out.points.rows(); ++i) {
    if (!cloud.valid(i)) out.points.row(i).setZero();
  }
  out.valid = cloud.valid;
  return out;
}

Mat3 exp_so3(const Vec3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
}

}  // namespace emp
