#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace dsurf {

/// One RGBD observation. Depth is the range along the pixel ray in scene
/// units; 0 marks an invalid pixel.
struct Frame {
  int height = 0;
  int width = 0;
  std::vector<float> color;         // H·W·3, row-major RGB in [0, 1]
  std::vector<float> depth;         // H·W
  std::vector<std::uint8_t> mask;   // H·W, 1 = usable
  Eigen::Matrix4d projection = Eigen::Matrix4d::Identity();  // scene units
  double time = 0.0;

  int pixel_count() const { return height * width; }
  int index(int row, int col) const { return row * width + col; }
  Eigen::Vector3d rgb(int row, int col) const;
  std::size_t active_pixel_count() const;
};

bool operator==(const Frame& a, const Frame& b);

/// x_normalized = (x_scene − center) / scale.
struct SceneNormalization {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double scale = 1.0;

  Eigen::Vector3d to_normalized(const Eigen::Vector3d& x) const { return (x - center) / scale; }
  Eigen::Vector3d to_scene(const Eigen::Vector3d& x) const { return x * scale + center; }
  /// Scene-space projection matrix re-expressed for normalized coordinates.
  Eigen::Matrix4d normalized_projection(const Eigen::Matrix4d& p) const;
  /// 4×4 similarity that maps normalized coordinates back to scene units.
  Eigen::Matrix4d denormalize_transform() const;
};

struct Dataset {
  std::vector<Frame> frames;
  SceneNormalization normalization;
  double depth_scale_mm = 1.0;  // millimeters per scene unit
  /// Free-form generator description carried through save/load.
  nlohmann::json provenance = nlohmann::json::object();

  int height() const { return frames.empty() ? 0 : frames.front().height; }
  int width() const { return frames.empty() ? 0 : frames.front().width; }
};

/// t_i = i / T with i = 1..T.
void assign_timestamps(std::vector<Frame>& frames);

/// Scene point on the pixel ray at the stored depth (scene units).
Eigen::Vector3d backproject_scene(const Frame& frame, int row, int col);
/// backproject_scene followed by normalization. Throws DataError on invalid depth.
Eigen::Vector3d backproject(const Frame& frame, int row, int col,
                            const SceneNormalization& norm);

/// Center = middle of the bounding box of all mask-active back-projected
/// depth points; scale puts the farthest one at `target_radius`.
SceneNormalization compute_normalization(const std::vector<Frame>& frames,
                                         double target_radius = 0.9);

/// Every 8th frame (index % 8 == 7) is held out.
bool is_test_frame(std::size_t index);
std::vector<std::size_t> split_indices(std::size_t frame_count, bool test);

/// Directory layout: color_%04d.png, depth_%04d.bin, mask_%04d.png, meta.json.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
/// Loads and validates a dataset; timestamps are reassigned as i/T and the
/// normalization is read from meta.json when present, computed otherwise.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace dsurf
