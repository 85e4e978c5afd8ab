#include "dsurf/metrics.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "dsurf/error.hpp"
#include "dsurf/trainer.hpp"

namespace dsurf {

namespace {

void check_sizes(std::size_t a, std::size_t b, std::size_t expect, const char* what) {
  if (a != expect || b != expect) {
    throw DegenerateInput(std::string(what) + ": image sizes do not match the mask");
  }
}

std::vector<double> luma(std::span<const float> rgb, std::size_t px) {
  std::vector<double> y(px);
  for (std::size_t i = 0; i < px; ++i) {
    y[i] = 0.299 * rgb[3 * i] + 0.587 * rgb[3 * i + 1] + 0.114 * rgb[3 * i + 2];
  }
  return y;
}

constexpr int kSsimRadius = 5;
constexpr double kSsimSigma = 1.5;

std::array<double, 2 * kSsimRadius + 1> gaussian_taps() {
  std::array<double, 2 * kSsimRadius + 1> g{};
  double sum = 0;
  for (int i = -kSsimRadius; i <= kSsimRadius; ++i) {
    g[i + kSsimRadius] = std::exp(-0.5 * i * i / (kSsimSigma * kSsimSigma));
    sum += g[i + kSsimRadius];
  }
  for (auto& v : g) v /= sum;
  return g;
}

nlohmann::json number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

nlohmann::json frame_json(const FrameMetrics& m) {
  nlohmann::json j = {{"frame", m.frame},  {"time", m.time},         {"psnr", number(m.psnr)},
                      {"ssim", m.ssim},    {"rmse", m.rmse},         {"rmse_mm", m.rmse_mm}};
  if (m.pcd >= 0) {
    j["pcd"] = m.pcd;
    j["pcd_mm"] = m.pcd_mm;
  }
  return j;
}

}  // namespace

double psnr(std::span<const float> pred, std::span<const float> gt,
            std::span<const std::uint8_t> mask, int channels) {
  check_sizes(pred.size(), gt.size(), mask.size() * channels, "psnr");
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    for (int c = 0; c < channels; ++c) {
      const double d = double(pred[i * channels + c]) - double(gt[i * channels + c]);
      sum += d * d;
    }
    n += channels;
  }
  if (n == 0) throw DegenerateInput("psnr: mask has no active pixel");
  if (sum == 0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(sum / double(n));
}

double ssim(std::span<const float> pred, std::span<const float> gt,
            std::span<const std::uint8_t> mask, int height, int width) {
  const std::size_t px = static_cast<std::size_t>(height) * width;
  if (mask.size() != px) throw DegenerateInput("ssim: mask size does not match the image");
  check_sizes(pred.size(), gt.size(), px * 3, "ssim");
  const auto x = luma(pred, px);
  const auto y = luma(gt, px);

  // Summed-area table of inactive pixels to test window coverage.
  const int w1 = width + 1;
  std::vector<int> holes(static_cast<std::size_t>(height + 1) * w1, 0);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      holes[(r + 1) * w1 + c + 1] = holes[r * w1 + c + 1] + holes[(r + 1) * w1 + c] -
                                    holes[r * w1 + c] + (mask[r * width + c] ? 0 : 1);
    }
  }
  const auto g = gaussian_taps();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  std::size_t windows = 0;
  for (int r = kSsimRadius; r + kSsimRadius < height; ++r) {
    for (int c = kSsimRadius; c + kSsimRadius < width; ++c) {
      const int r0 = r - kSsimRadius, r1 = r + kSsimRadius + 1;
      const int q0 = c - kSsimRadius, q1 = c + kSsimRadius + 1;
      if (holes[r1 * w1 + q1] - holes[r0 * w1 + q1] - holes[r1 * w1 + q0] + holes[r0 * w1 + q0]) {
        continue;
      }
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int i = r0; i < r1; ++i) {
        for (int j = q0; j < q1; ++j) {
          const double wt = g[i - r0] * g[j - q0];
          const double a = x[i * width + j], b = y[i * width + j];
          mx += wt * a;
          my += wt * b;
          xx += wt * a * a;
          yy += wt * b * b;
          xy += wt * a * b;
        }
      }
      const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
  }
  if (windows == 0) throw DegenerateInput("ssim: mask too small for one 11x11 window");
  return total / double(windows);
}

double depth_rmse(std::span<const float> pred, std::span<const float> gt,
                  std::span<const std::uint8_t> mask) {
  check_sizes(pred.size(), gt.size(), mask.size(), "depth_rmse");
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i] || !(gt[i] > 0)) continue;
    const double d = double(pred[i]) - double(gt[i]);
    sum += d * d;
    ++n;
  }
  if (n == 0) throw DegenerateInput("depth_rmse: no active pixel with valid depth");
  return std::sqrt(sum / double(n));
}

FrameMetrics image_metrics(const Frame& gt, const FrameRender& render,
                           const SceneNormalization& norm, double depth_scale_mm) {
  FrameMetrics m;
  m.time = gt.time;
  m.psnr = psnr(render.color, gt.color, gt.mask, 3);
  m.ssim = ssim(render.color, gt.color, gt.mask, gt.height, gt.width);
  std::vector<float> gt_depth(gt.depth.size());
  for (std::size_t i = 0; i < gt_depth.size(); ++i) {
    gt_depth[i] = static_cast<float>(gt.depth[i] / norm.scale);
  }
  m.rmse = depth_rmse(render.depth, gt_depth, gt.mask);
  m.rmse_mm = m.rmse * norm.scale * depth_scale_mm;
  return m;
}

double mesh_frame_pcd(const TriMesh& mesh, const Frame& frame, std::size_t count,
                      double visibility_tolerance, std::mt19937_64& rng) {
  if (mesh.empty()) throw DegenerateInput("pcd: extracted mesh is empty");
  const auto samples = sample_surface(mesh, count, rng);
  const auto seen = visible_points(samples, mesh, frame, visibility_tolerance);
  if (seen.empty()) throw DegenerateInput("pcd: no mesh point is visible in the frame");
  return pcd(seen, depth_point_cloud(frame));
}

template <typename T>
EvalReport evaluate(const SceneFields<T>& fields, const Dataset& data, const EvalOptions& options) {
  const auto test = split_indices(data.frames.size(), /*test=*/true);
  if (test.empty()) throw DegenerateInput("evaluate: the test split is empty");
  EvalReport report;
  report.deviation = fields.deviation();
  const SceneNormalization& norm = data.normalization;
  std::mt19937_64 rng(options.seed);
  for (std::size_t idx : test) {
    const Frame& frame = data.frames[idx];
    const FrameRender render = render_frame(fields, frame, norm, options.sampling);
    FrameMetrics m = image_metrics(frame, render, norm, data.depth_scale_mm);
    m.frame = idx;
    if (options.mesh_pcd) {
      TriMesh mesh = marching_cubes(sample_grid(fields, options.mesh_resolution, frame.time));
      mesh.transform(norm.denormalize_transform());
      const double cell = 2.0 / (options.mesh_resolution - 1) * norm.scale;
      m.pcd = mesh_frame_pcd(mesh, frame, options.surface_samples,
                             options.visibility_cells * cell, rng);
      m.pcd_mm = m.pcd * data.depth_scale_mm;
    }
    report.frames.push_back(m);
  }
  FrameMetrics& mean = report.mean;
  mean.frame = report.frames.size();
  mean.pcd = mean.pcd_mm = options.mesh_pcd ? 0.0 : -1.0;
  for (const auto& m : report.frames) {
    mean.time += m.time;
    mean.psnr += m.psnr;
    mean.ssim += m.ssim;
    mean.rmse += m.rmse;
    mean.rmse_mm += m.rmse_mm;
    if (options.mesh_pcd) {
      mean.pcd += m.pcd;
      mean.pcd_mm += m.pcd_mm;
    }
  }
  const double n = double(report.frames.size());
  for (double* v : {&mean.time, &mean.psnr, &mean.ssim, &mean.rmse, &mean.rmse_mm}) *v /= n;
  if (options.mesh_pcd) {
    mean.pcd /= n;
    mean.pcd_mm /= n;
  }
  return report;
}

template EvalReport evaluate<float>(const SceneFields<float>&, const Dataset&, const EvalOptions&);
template EvalReport evaluate<double>(const SceneFields<double>&, const Dataset&,
                                     const EvalOptions&);

EvalReport evaluate(const Checkpoint& ck, const Dataset& data, const EvalOptions& options) {
  TrainConfig config;
  if (ck.meta.contains("config")) ck.meta.at("config").get_to(config);
  EvalOptions opts = options;
  opts.sampling = config.sampling;
  if (config.precision == "float64") {
    return evaluate(SceneFields<double>::load_from(ck), data, opts);
  }
  return evaluate(SceneFields<float>::load_from(ck), data, opts);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["frames"] = nlohmann::json::array();
  for (const auto& m : frames) j["frames"].push_back(frame_json(m));
  j["mean"] = frame_json(mean);
  j["mean"].erase("time");
  j["mean"]["frames"] = mean.frame;
  j["mean"].erase("frame");
  j["deviation"] = deviation;
  return j;
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out.precision(9);
  out << "frame,time,psnr,ssim,rmse,rmse_mm,pcd,pcd_mm\n";
  auto row = [&](const std::string& name, const FrameMetrics& m) {
    out << name << ',' << m.time << ',' << m.psnr << ',' << m.ssim << ',' << m.rmse << ','
        << m.rmse_mm << ',';
    if (m.pcd >= 0) {
      out << m.pcd << ',' << m.pcd_mm;
    } else {
      out << ',';
    }
    out << '\n';
  };
  for (const auto& m : frames) row(std::to_string(m.frame), m);
  row("mean", mean);
  return out.str();
}

void EvalReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream json(dir / "metrics.json");
  json << to_json().dump(2) << '\n';
  std::ofstream csv(dir / "metrics.csv");
  csv << to_csv();
  if (!json || !csv) throw DataError("cannot write metrics to " + dir.string());
}

}  // namespace dsurf
