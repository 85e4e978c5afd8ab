#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsurf/checkpoint.hpp"
#include "dsurf/dataset.hpp"
#include "dsurf/fields.hpp"
#include "dsurf/geometry.hpp"
#include "dsurf/renderer.hpp"

namespace dsurf {

/// −10·log10(masked MSE) with peak 1, over every channel of the active
/// pixels. Returns +∞ when the masked MSE is exactly 0. Throws
/// DegenerateInput for an empty mask.
double psnr(std::span<const float> pred, std::span<const float> gt,
            std::span<const std::uint8_t> mask, int channels);

/// Luma SSIM, 11×11 Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03, range 1.
/// Averaged over window centres whose whole window lies on active pixels.
/// Inputs are H·W·3 RGB. Throws DegenerateInput when no window fits.
double ssim(std::span<const float> pred, std::span<const float> gt,
            std::span<const std::uint8_t> mask, int height, int width);

/// Root mean squared error over active pixels with gt > 0 (input units).
/// Throws DegenerateInput when that set is empty.
double depth_rmse(std::span<const float> pred, std::span<const float> gt,
                  std::span<const std::uint8_t> mask);

struct FrameMetrics {
  std::size_t frame = 0;
  double time = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double rmse = 0.0;     // normalized units
  double rmse_mm = 0.0;
  double pcd = -1.0;     // scene units, negative when not computed
  double pcd_mm = -1.0;
};

struct EvalOptions {
  SamplingOptions sampling;
  bool mesh_pcd = true;
  int mesh_resolution = 128;
  std::size_t surface_samples = 10000;
  /// Visibility slack behind the mesh depth buffer, in grid cells.
  double visibility_cells = 2.0;
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::vector<FrameMetrics> frames;
  FrameMetrics mean;  // `frame` holds the number of frames averaged
  double deviation = 0.0;

  nlohmann::json to_json() const;
  std::string to_csv() const;
  /// Writes metrics.json and metrics.csv into `dir`.
  void write(const std::filesystem::path& dir) const;
};

/// Image and depth metrics of a render against its ground-truth frame.
FrameMetrics image_metrics(const Frame& gt, const FrameRender& render,
                           const SceneNormalization& norm, double depth_scale_mm);

/// Chamfer distance between `count` area samples of a scene-unit mesh that
/// the frame's camera sees and the frame's ground-truth depth points.
double mesh_frame_pcd(const TriMesh& mesh, const Frame& frame, std::size_t count,
                      double visibility_tolerance, std::mt19937_64& rng);

/// Renders every test frame with deterministic sampling and scores it.
template <typename T>
EvalReport evaluate(const SceneFields<T>& fields, const Dataset& data, const EvalOptions& options);
/// Loads the fields in the checkpoint's training precision.
EvalReport evaluate(const Checkpoint& ck, const Dataset& data, const EvalOptions& options);

}  // namespace dsurf
