#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "dsurf/dataset.hpp"
#include "dsurf/fields.hpp"

namespace dsurf {

struct TriMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Eigen::Vector3d> normals;  // optional, per vertex

  bool empty() const { return triangles.empty(); }
  /// Applies a 4×4 similarity to positions (normals are rotated and renormalized).
  void transform(const Eigen::Matrix4d& m);
  double area() const;
  /// Throws DataError on out-of-range indices or a triangle with repeated indices.
  void validate() const;
};

/// Scalar lattice over an axis-aligned box; x varies fastest.
struct GridField {
  int resolution = 2;
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(-1.0);
  Eigen::Vector3d hi = Eigen::Vector3d::Constant(1.0);
  std::vector<double> values;

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * resolution + j) * resolution + i;
  }
  Eigen::Vector3d point(int i, int j, int k) const;
  Eigen::Vector3d spacing() const { return (hi - lo) / (resolution - 1); }
};

/// Lattice points of an R³ grid over [lo, hi], in index order.
Eigen::MatrixXd grid_points(int resolution, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi);

GridField sample_grid(const std::function<double(const Eigen::Vector3d&)>& f, int resolution,
                      const Eigen::Vector3d& lo = Eigen::Vector3d::Constant(-1.0),
                      const Eigen::Vector3d& hi = Eigen::Vector3d::Constant(1.0));

/// Canonical ρ on the lattice, or ρ(x + Ψ_d(x, t)) when `time` is given.
template <typename T>
GridField sample_grid(const SceneFields<T>& fields, int resolution, std::optional<double> time,
                      const Eigen::Vector3d& lo = Eigen::Vector3d::Constant(-1.0),
                      const Eigen::Vector3d& hi = Eigen::Vector3d::Constant(1.0));

/// Marching cubes with linear edge interpolation. Vertices on shared lattice
/// edges are shared; triangles wind counter-clockwise seen from the side
/// where the value exceeds `iso`.
TriMesh marching_cubes(const GridField& grid, double iso = 0.0);

void write_obj(const TriMesh& mesh, const std::filesystem::path& path);
void write_ply(const TriMesh& mesh, const std::filesystem::path& path);
/// Reads `v` and `f` records (polygons are fan-triangulated, `a/b/c` refs accepted).
TriMesh read_obj(const std::filesystem::path& path);

/// `count` points uniformly distributed over the surface area.
std::vector<Eigen::Vector3d> sample_surface(const TriMesh& mesh, std::size_t count,
                                            std::mt19937_64& rng);

/// Exact nearest-neighbour distances through a uniform bucket grid.
class PointIndex {
 public:
  explicit PointIndex(std::vector<Eigen::Vector3d> points);
  double nearest_distance(const Eigen::Vector3d& q) const;

 private:
  std::vector<Eigen::Vector3d> points_;
  std::vector<std::size_t> order_;    // point ids sorted by cell
  std::vector<std::size_t> start_;    // cell → first position in order_ (size cells + 1)
  Eigen::Vector3d lo_;
  double cell_ = 1.0;
  std::array<int, 3> dims_{1, 1, 1};
};

/// Symmetric chamfer distance ½(mean_A d(a, B) + mean_B d(b, A)).
double pcd(const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& b);
/// All-pairs reference implementation.
double pcd_brute_force(const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& b);

/// Range along each pixel ray to the nearest triangle (scene units), +∞ where
/// nothing is hit. `mesh` and `projection` share units.
std::vector<double> mesh_depth_buffer(const TriMesh& mesh, const Eigen::Matrix4d& projection,
                                      int height, int width);

/// Points that a camera sees: inside the image, on a mask-active pixel, and no
/// farther than the mesh depth buffer at that pixel plus `tolerance`.
std::vector<Eigen::Vector3d> visible_points(const std::vector<Eigen::Vector3d>& points,
                                            const TriMesh& mesh, const Frame& frame,
                                            double tolerance);

/// Mask-active ground-truth depth pixels lifted to scene coordinates.
std::vector<Eigen::Vector3d> depth_point_cloud(const Frame& frame);

}  // namespace dsurf
