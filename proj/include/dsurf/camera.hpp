#pragma once

#include <Eigen/Dense>

namespace dsurf {

// Projection matrices are 4×4 maps P = [K 0; 0 1] · [R t; 0 1] from homogeneous
// world points to (u·z, v·z, z, 1); pixel coordinates are (u, v) with pixel
// (i, j) centered at (j + 0.5, i + 0.5).

/// Pinhole P from intrinsics and a world→camera rigid transform.
Eigen::Matrix4d make_projection(double fx, double fy, double cx, double cy,
                                const Eigen::Matrix4d& world_to_camera);

/// Rigid world→camera transform for a camera at `eye` looking at `target`
/// (camera +z forward, +y down).
Eigen::Matrix4d look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                        const Eigen::Vector3d& up = Eigen::Vector3d(0, -1, 0));

Eigen::Vector2d project(const Eigen::Matrix4d& p, const Eigen::Vector3d& x);
Eigen::Vector3d camera_center(const Eigen::Matrix4d& p);
/// Unit direction of the ray through pixel coordinates (u, v).
Eigen::Vector3d pixel_direction(const Eigen::Matrix4d& p, double u, double v);

/// Parameters (h0, h1) where origin + h·dir meets the sphere |x| = radius.
/// Returns false when the line misses the sphere.
bool intersect_sphere(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, double radius,
                      double& h0, double& h1);

}  // namespace dsurf
