#include "dsurf/camera.hpp"

#include <cmath>

#include "dsurf/error.hpp"

namespace dsurf {

Eigen::Matrix4d make_projection(double fx, double fy, double cx, double cy,
                                const Eigen::Matrix4d& world_to_camera) {
  Eigen::Matrix4d k = Eigen::Matrix4d::Identity();
  k(0, 0) = fx;
  k(1, 1) = fy;
  k(0, 2) = cx;
  k(1, 2) = cy;
  return k * world_to_camera;
}

Eigen::Matrix4d look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                        const Eigen::Vector3d& up) {
  const Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d x = up.cross(z);
  if (x.norm() < 1e-9) x = Eigen::Vector3d::UnitX().cross(z);
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<1, 3>(0, 0) = x.transpose();
  m.block<1, 3>(1, 0) = y.transpose();
  m.block<1, 3>(2, 0) = z.transpose();
  m.block<3, 1>(0, 3) = -m.block<3, 3>(0, 0) * eye;
  return m;
}

Eigen::Vector2d project(const Eigen::Matrix4d& p, const Eigen::Vector3d& x) {
  const Eigen::Vector4d y = p * x.homogeneous();
  return {y(0) / y(2), y(1) / y(2)};
}

Eigen::Vector3d camera_center(const Eigen::Matrix4d& p) {
  const Eigen::Vector4d c = p.inverse() * Eigen::Vector4d(0, 0, 0, 1);
  if (std::abs(c(3)) < 1e-12) throw DataError("projection matrix has no finite center");
  return c.head<3>() / c(3);
}

Eigen::Vector3d pixel_direction(const Eigen::Matrix4d& p, double u, double v) {
  const Eigen::Vector4d d = p.inverse() * Eigen::Vector4d(u, v, 1, 0);
  return d.head<3>().normalized();
}

bool intersect_sphere(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, double radius,
                      double& h0, double& h1) {
  const double b = origin.dot(dir);
  const double c = origin.squaredNorm() - radius * radius;
  const double disc = b * b - c;
  if (disc <= 0) return false;
  const double s = std::sqrt(disc);
  h0 = -b - s;
  h1 = -b + s;
  return true;
}

}  // namespace dsurf
