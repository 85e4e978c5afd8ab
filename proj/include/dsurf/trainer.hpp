#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsurf/adam.hpp"
#include "dsurf/checkpoint.hpp"
#include "dsurf/dataset.hpp"
#include "dsurf/fields.hpp"
#include "dsurf/losses.hpp"
#include "dsurf/renderer.hpp"

namespace dsurf {

struct TrainConfig {
  FieldsConfig fields;
  int rays_per_batch = 1024;
  SamplingOptions sampling;
  std::int64_t iterations = 100000;
  double lr = 5e-4;
  std::int64_t warmup_iters = 5000;
  double lr_decay_floor = 0.05;
  LossWeights weights;
  int eikonal_ball_points = 1024;
  double smooth_radius = 0.1;
  int boundary_band = 5;
  double boundary_weight = 4.0;
  std::uint64_t seed = 0;
  std::string precision = "float32";  // or "float64"
  std::int64_t checkpoint_every = 1000;

  void validate() const;
  /// Full-size networks and schedule.
  static TrainConfig full();
  /// Reduced networks, 256 rays and 5k iterations for CPU runs.
  static TrainConfig desk();
  static TrainConfig preset(const std::string& name);
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Fields absent from `j` keep their current value in `c`.
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Linear warmup from 0 to lr, then cosine decay to lr·floor at `iterations`.
double lr_at(std::int64_t iter, const TrainConfig& config);

/// Per-pixel sampling weights: 0 for inactive pixels, 1 for active ones and
/// `boost` for active pixels within `band` pixels of an inactive one.
std::vector<double> importance_map(const Frame& frame, int band, double boost);

/// Draws `count` pixel indices with probability ∝ weight (with replacement).
std::vector<int> sample_pixels(const std::vector<double>& weights, int count, std::mt19937_64& rng);

/// Optimizer state and loop for one scene.
template <typename T>
class Trainer {
 public:
  using Warn = std::function<void(const std::string&)>;

  Trainer(const Dataset& data, const TrainConfig& config, Warn warn = {});
  /// Restores fields, optimizer, iteration and RNG from a checkpoint.
  static Trainer resume(const Dataset& data, const Checkpoint& ck, Warn warn = {});

  /// One iteration on a freshly drawn batch.
  LossReport step();
  /// One Adam update at learning rate `lr` on a given batch.
  LossReport train_step(const RayBatch& batch, const Eigen::MatrixXd& depths,
                        const GeometryDraws& draws, double lr);

  RayBatch sample_batch();

  Checkpoint checkpoint() const;

  std::int64_t iteration() const { return iteration_; }
  const TrainConfig& config() const { return config_; }
  const SceneFields<T>& fields() const { return fields_; }
  SceneFields<T>& fields() { return fields_; }
  std::mt19937_64& rng() { return rng_; }
  const std::vector<std::size_t>& train_frames() const { return train_frames_; }

 private:
  void prepare(Warn warn);

  const Dataset* data_;
  TrainConfig config_;
  SceneFields<T> fields_;
  Adam<T> adam_;
  std::mt19937_64 rng_;
  std::int64_t iteration_ = 0;
  std::vector<std::size_t> train_frames_;
  std::vector<std::vector<double>> importance_;
};

/// Header of the CSV loss log.
std::string loss_log_header();
std::string loss_log_row(std::int64_t iteration, double lr, double deviation, const LossReport& r);

struct TrainRunOptions {
  std::filesystem::path out_dir;
  std::filesystem::path resume_from;  // empty = fresh run
  /// Progress line every N iterations (0 = silent).
  std::int64_t print_every = 100;
  std::function<void(const std::string&)> print;
};

/// Runs (or resumes) training to config.iterations; writes loss.csv,
/// ckpt_<iter>.ckpt every checkpoint_every iterations and final.ckpt.
/// Returns the path of the final checkpoint.
std::filesystem::path run_training(const Dataset& data, const TrainConfig& config,
                                   const TrainRunOptions& options);

}  // namespace dsurf
