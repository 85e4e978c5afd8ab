#include "dsurf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "dsurf/error.hpp"
#include "dsurf/random.hpp"

namespace dsurf {

// ---- Config -------------------------------------------------------------------

void TrainConfig::validate() const {
  fields.validate();
  sampling.validate();
  weights.validate();
  if (rays_per_batch < 1) throw ConfigError("rays_per_batch must be >= 1");
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
  if (warmup_iters < 0) throw ConfigError("warmup_iters must be >= 0");
  if (!(lr_decay_floor > 0 && lr_decay_floor <= 1)) throw ConfigError("lr_decay_floor must be in (0, 1]");
  if (eikonal_ball_points < 0) throw ConfigError("eikonal_ball_points must be >= 0");
  if (!(smooth_radius > 0)) throw ConfigError("smooth_radius must be > 0");
  if (boundary_band < 0) throw ConfigError("boundary_band must be >= 0");
  if (!(boundary_weight >= 1)) throw ConfigError("boundary_weight must be >= 1");
  if (precision != "float32" && precision != "float64") {
    throw ConfigError("precision must be float32 or float64, got '" + precision + "'");
  }
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
}

TrainConfig TrainConfig::full() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.fields = FieldsConfig::desk();
  c.rays_per_batch = 256;
  c.iterations = 5000;
  c.warmup_iters = 250;
  c.lr = 5e-3;
  c.eikonal_ball_points = 256;
  c.checkpoint_every = 1000;
  return c;
}

TrainConfig TrainConfig::preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "full") return full();
  throw ConfigError("unknown training preset '" + name + "' (expected desk or full)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"fields", c.fields},
       {"rays_per_batch", c.rays_per_batch},
       {"n_coarse", c.sampling.n_coarse},
       {"n_fine", c.sampling.n_fine},
       {"fine_steps", c.sampling.fine_steps},
       {"base_inv_s", c.sampling.base_inv_s},
       {"iterations", c.iterations},
       {"lr", c.lr},
       {"warmup_iters", c.warmup_iters},
       {"lr_decay_floor", c.lr_decay_floor},
       {"weights", c.weights},
       {"eikonal_ball_points", c.eikonal_ball_points},
       {"smooth_radius", c.smooth_radius},
       {"boundary_band", c.boundary_band},
       {"boundary_weight", c.boundary_weight},
       {"seed", c.seed},
       {"precision", c.precision},
       {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  static const std::set<std::string> known{
      "fields",         "rays_per_batch",  "n_coarse",         "n_fine",     "fine_steps",
      "base_inv_s",     "iterations",      "lr",               "warmup_iters",
      "lr_decay_floor", "weights",         "eikonal_ball_points", "smooth_radius",
      "boundary_band",  "boundary_weight", "seed",             "precision",  "checkpoint_every"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown training config key '" + key + "'");
  }
  try {
    if (j.contains("fields")) j.at("fields").get_to(c.fields);
    if (j.contains("weights")) j.at("weights").get_to(c.weights);
    c.rays_per_batch = j.value("rays_per_batch", c.rays_per_batch);
    c.sampling.n_coarse = j.value("n_coarse", c.sampling.n_coarse);
    c.sampling.n_fine = j.value("n_fine", c.sampling.n_fine);
    c.sampling.fine_steps = j.value("fine_steps", c.sampling.fine_steps);
    c.sampling.base_inv_s = j.value("base_inv_s", c.sampling.base_inv_s);
    c.iterations = j.value("iterations", c.iterations);
    c.lr = j.value("lr", c.lr);
    c.warmup_iters = j.value("warmup_iters", c.warmup_iters);
    c.lr_decay_floor = j.value("lr_decay_floor", c.lr_decay_floor);
    c.eikonal_ball_points = j.value("eikonal_ball_points", c.eikonal_ball_points);
    c.smooth_radius = j.value("smooth_radius", c.smooth_radius);
    c.boundary_band = j.value("boundary_band", c.boundary_band);
    c.boundary_weight = j.value("boundary_weight", c.boundary_weight);
    c.seed = j.value("seed", c.seed);
    c.precision = j.value("precision", c.precision);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
}

double lr_at(std::int64_t iter, const TrainConfig& c) {
  if (iter <= 0) return 0.0;
  if (iter < c.warmup_iters) return c.lr * static_cast<double>(iter) / static_cast<double>(c.warmup_iters);
  const double span = static_cast<double>(c.iterations - c.warmup_iters);
  const double progress =
      span > 0 ? std::min(1.0, static_cast<double>(iter - c.warmup_iters) / span) : 1.0;
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return c.lr * (c.lr_decay_floor + (1.0 - c.lr_decay_floor) * cosine);
}

// ---- Ray batching ---------------------------------------------------------------

std::vector<double> importance_map(const Frame& frame, int band, double boost) {
  const int h = frame.height, w = frame.width;
  std::vector<double> weight(frame.pixel_count(), 0.0);
  std::vector<std::uint8_t> near_excluded(frame.pixel_count(), 0);
  const int r2 = band * band;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      if (frame.mask[frame.index(i, j)]) continue;
      for (int di = -band; di <= band; ++di) {
        const int y = i + di;
        if (y < 0 || y >= h) continue;
        for (int dj = -band; dj <= band; ++dj) {
          const int x = j + dj;
          if (x >= 0 && x < w && di * di + dj * dj <= r2) near_excluded[frame.index(y, x)] = 1;
        }
      }
    }
  }
  for (int k = 0; k < frame.pixel_count(); ++k) {
    if (frame.mask[k]) weight[k] = near_excluded[k] ? boost : 1.0;
  }
  return weight;
}

std::vector<int> sample_pixels(const std::vector<double>& weights, int count, std::mt19937_64& rng) {
  std::vector<double> cdf(weights.size());
  double total = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) cdf[k] = total += weights[k];
  if (!(total > 0)) throw DegenerateInput("sample_pixels: all weights are zero");
  std::vector<int> out(count);
  for (int i = 0; i < count; ++i) {
    const double u = uniform01(rng) * total;
    auto k = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    if (k == cdf.size()) {  // u rounded up to the total
      k = cdf.size() - 1;
      while (weights[k] <= 0) --k;
    }
    out[i] = static_cast<int>(k);
  }
  return out;
}

// ---- Trainer ------------------------------------------------------------------------

template <typename T>
Trainer<T>::Trainer(const Dataset& data, const TrainConfig& config, Warn warn)
    : data_(&data), config_(config), fields_(config.fields), rng_(config.seed ^ 0x5eed5eed5eed5eedULL) {
  config_.validate();
  fields_.initialize(config_.seed);
  adam_ = Adam<T>(fields_.parameters());
  prepare(std::move(warn));
}

template <typename T>
void Trainer<T>::prepare(Warn warn) {
  for (std::size_t i : split_indices(data_->frames.size(), /*test=*/false)) {
    const Frame& f = data_->frames[i];
    if (f.active_pixel_count() == 0) {
      if (warn) warn("frame " + std::to_string(i) + " has an empty mask; skipped");
      continue;
    }
    train_frames_.push_back(i);
  }
  if (train_frames_.empty()) throw DataError("no training frame has a mask-active pixel");
  importance_.resize(data_->frames.size());
  for (std::size_t i : train_frames_) {
    importance_[i] = importance_map(data_->frames[i], config_.boundary_band, config_.boundary_weight);
  }
}

template <typename T>
RayBatch Trainer<T>::sample_batch() {
  const std::size_t fi = train_frames_[uniform_index(rng_, train_frames_.size())];
  const Frame& f = data_->frames[fi];
  const SceneNormalization& norm = data_->normalization;
  const int n = config_.rays_per_batch;
  RayBatch b;
  b.color.resize(n, 3);
  b.depth.resize(n);
  b.mask = Eigen::VectorXd::Ones(n);
  int attempts = 0;
  while (static_cast<int>(b.rays.size()) < n) {
    if (++attempts > 100) throw DataError("frame " + std::to_string(fi) + ": pixel rays miss the unit sphere");
    for (int k : sample_pixels(importance_[fi], n - static_cast<int>(b.rays.size()), rng_)) {
      const int row = k / f.width, col = k % f.width;
      const auto ray = make_ray(f, norm, row, col);
      if (!ray) continue;
      const Eigen::Index r = static_cast<Eigen::Index>(b.rays.size());
      b.rays.push_back(*ray);
      b.color.row(r) = f.rgb(row, col).transpose();
      b.depth(r) = f.depth[k] > 0 ? f.depth[k] / norm.scale : 0.0;
    }
  }
  return b;
}

template <typename T>
LossReport Trainer<T>::train_step(const RayBatch& batch, const Eigen::MatrixXd& depths,
                                  const GeometryDraws& draws, double lr) {
  const auto eval = evaluate_losses(fields_, batch, depths, draws, config_.weights);
  const auto params = fields_.parameters();
  const auto grads = ad::grad<T>(eval.total, params);
  std::vector<ad::Matrix<T>> values;
  values.reserve(grads.size());
  const auto names = fields_.parameter_names();
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].value().allFinite()) {
      throw TrainingFault("non-finite gradient for parameter '" + names[i] + "' at iteration " +
                          std::to_string(iteration_));
    }
    values.push_back(grads[i].value());
  }
  adam_.step(values, lr);
  ++iteration_;
  return eval.report;
}

template <typename T>
LossReport Trainer<T>::step() {
  const RayBatch batch = sample_batch();
  SamplingOptions opts = config_.sampling;
  opts.jitter = true;
  const Eigen::MatrixXd depths = sample_rays(fields_, std::span<const Ray>(batch.rays), opts, &rng_);
  const GeometryDraws draws = draw_geometry(rng_, batch.rays.size(),
                                            static_cast<std::size_t>(config_.eikonal_ball_points),
                                            config_.smooth_radius);
  try {
    return train_step(batch, depths, draws, lr_at(iteration_ + 1, config_));
  } catch (const TrainingFault& e) {
    throw TrainingFault(std::string(e.what()) + " (iteration " + std::to_string(iteration_) + ")");
  }
}

template <typename T>
Checkpoint Trainer<T>::checkpoint() const {
  Checkpoint ck;
  fields_.save_to(ck);
  const auto names = fields_.parameter_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    ck.put<T>("adam.m/" + names[i], adam_.first_moments()[i]);
    ck.put<T>("adam.v/" + names[i], adam_.second_moments()[i]);
  }
  std::ostringstream rng_state;
  rng_state << rng_;
  const auto& n = data_->normalization;
  ck.meta["kind"] = "dsurf-train-state";
  ck.meta["iteration"] = iteration_;
  ck.meta["adam_step"] = adam_.step_count();
  ck.meta["rng"] = rng_state.str();
  ck.meta["config"] = config_;
  ck.meta["normalization"] = {{"center", {n.center.x(), n.center.y(), n.center.z()}},
                              {"scale", n.scale}};
  ck.meta["depth_scale_mm"] = data_->depth_scale_mm;
  return ck;
}

template <typename T>
Trainer<T> Trainer<T>::resume(const Dataset& data, const Checkpoint& ck, Warn warn) {
  if (ck.meta.value("kind", "") != "dsurf-train-state") {
    throw DataError("checkpoint does not hold a training state");
  }
  TrainConfig config = TrainConfig::desk();
  ck.meta.at("config").get_to(config);
  Trainer t(data, config, std::move(warn));
  t.fields_ = SceneFields<T>::load_from(ck);
  t.adam_ = Adam<T>(t.fields_.parameters());
  const auto names = t.fields_.parameter_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    t.adam_.first_moments()[i] = ck.get<T>("adam.m/" + names[i]);
    t.adam_.second_moments()[i] = ck.get<T>("adam.v/" + names[i]);
  }
  t.adam_.set_step_count(ck.meta.at("adam_step").get<std::int64_t>());
  t.iteration_ = ck.meta.at("iteration").get<std::int64_t>();
  std::istringstream rng_state(ck.meta.at("rng").get<std::string>());
  rng_state >> t.rng_;
  if (!rng_state) throw DataError("checkpoint: unreadable RNG state");
  return t;
}

template class Trainer<float>;
template class Trainer<double>;

// ---- Loop -----------------------------------------------------------------------------

std::string loss_log_header() {
  std::string h = "iteration,lr,deviation";
  for (const char* name : kLossNames) h += std::string(",") + name;
  return h + ",total";
}

std::string loss_log_row(std::int64_t iteration, double lr, double deviation, const LossReport& r) {
  char buf[64];
  std::string row = std::to_string(iteration);
  auto add = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.9g", v);
    row += buf;
  };
  add(lr);
  add(deviation);
  for (double c : r.components) add(c);
  add(r.total);
  return row;
}

namespace {

template <typename T>
std::filesystem::path run_loop(Trainer<T>& trainer, const TrainRunOptions& options, bool append_log) {
  const auto& out = options.out_dir;
  std::filesystem::create_directories(out);
  std::ofstream log(out / "loss.csv", append_log ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write " + (out / "loss.csv").string());
  if (!append_log) log << loss_log_header() << "\n";
  const TrainConfig& cfg = trainer.config();
  while (trainer.iteration() < cfg.iterations) {
    const double lr = lr_at(trainer.iteration() + 1, cfg);
    const LossReport report = trainer.step();
    const std::int64_t it = trainer.iteration();
    log << loss_log_row(it, lr, trainer.fields().deviation(), report) << "\n";
    if (options.print && options.print_every > 0 && (it % options.print_every == 0 || it == 1)) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "iter %lld/%lld  loss %.5f  color %.5f  depth %.5f  s %.4f",
                    static_cast<long long>(it), static_cast<long long>(cfg.iterations), report.total,
                    report.components[kColor], report.components[kDepth], trainer.fields().deviation());
      options.print(buf);
    }
    if (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it < cfg.iterations) {
      log.flush();
      char name[32];
      std::snprintf(name, sizeof name, "ckpt_%06lld.ckpt", static_cast<long long>(it));
      trainer.checkpoint().save(out / name);
    }
  }
  log.flush();
  const auto final_path = out / "final.ckpt";
  trainer.checkpoint().save(final_path);
  return final_path;
}

template <typename T>
std::filesystem::path run_typed(const Dataset& data, const TrainConfig& config,
                                const TrainRunOptions& options) {
  typename Trainer<T>::Warn warn = options.print;
  if (!options.resume_from.empty()) {
    auto trainer = Trainer<T>::resume(data, Checkpoint::load(options.resume_from), warn);
    return run_loop(trainer, options, /*append_log=*/true);
  }
  Trainer<T> trainer(data, config, warn);
  return run_loop(trainer, options, /*append_log=*/false);
}

}  // namespace

std::filesystem::path run_training(const Dataset& data, const TrainConfig& config,
                                   const TrainRunOptions& options) {
  std::string precision = config.precision;
  if (!options.resume_from.empty()) {
    TrainConfig stored = config;
    Checkpoint::load(options.resume_from).meta.at("config").get_to(stored);
    precision = stored.precision;
  }
  return precision == "float64" ? run_typed<double>(data, config, options)
                                : run_typed<float>(data, config, options);
}

}  // namespace dsurf
