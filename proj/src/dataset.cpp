#include "dsurf/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "dsurf/camera.hpp"
#include "dsurf/error.hpp"
#include "dsurf/image_io.hpp"

namespace dsurf {

namespace fs = std::filesystem;
using nlohmann::json;

Eigen::Vector3d Frame::rgb(int row, int col) const {
  const std::size_t i = static_cast<std::size_t>(index(row, col)) * 3;
  return {color[i], color[i + 1], color[i + 2]};
}

std::size_t Frame::active_pixel_count() const {
  std::size_t n = 0;
  for (auto m : mask) n += m != 0;
  return n;
}

bool operator==(const Frame& a, const Frame& b) {
  return a.height == b.height && a.width == b.width && a.color == b.color &&
         a.depth == b.depth && a.mask == b.mask && a.projection == b.projection &&
         a.time == b.time;
}

Eigen::Matrix4d SceneNormalization::denormalize_transform() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() *= scale;
  m.block<3, 1>(0, 3) = center;
  return m;
}

Eigen::Matrix4d SceneNormalization::normalized_projection(const Eigen::Matrix4d& p) const {
  return p * denormalize_transform();
}

void assign_timestamps(std::vector<Frame>& frames) {
  const double total = static_cast<double>(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    frames[i].time = static_cast<double>(i + 1) / total;
  }
}

Eigen::Vector3d backproject_scene(const Frame& frame, int row, int col) {
  if (row < 0 || row >= frame.height || col < 0 || col >= frame.width) {
    throw DataError("backproject: pixel outside the image");
  }
  const float d = frame.depth[frame.index(row, col)];
  if (!(d > 0.f) || !std::isfinite(d)) {
    throw DataError("backproject: invalid depth at pixel (" + std::to_string(row) + ", " +
                    std::to_string(col) + ")");
  }
  const Eigen::Vector3d o = camera_center(frame.projection);
  const Eigen::Vector3d v = pixel_direction(frame.projection, col + 0.5, row + 0.5);
  return o + static_cast<double>(d) * v;
}

Eigen::Vector3d backproject(const Frame& frame, int row, int col,
                            const SceneNormalization& norm) {
  return norm.to_normalized(backproject_scene(frame, row, col));
}

namespace {

template <typename Fn>
void for_each_depth_point(const Frame& f, Fn&& fn) {
  const Eigen::Vector3d o = camera_center(f.projection);
  const Eigen::Matrix4d inv = f.projection.inverse();
  for (int r = 0; r < f.height; ++r) {
    for (int c = 0; c < f.width; ++c) {
      const int i = f.index(r, c);
      if (!f.mask[i] || !(f.depth[i] > 0.f)) continue;
      const Eigen::Vector3d v =
          (inv * Eigen::Vector4d(c + 0.5, r + 0.5, 1.0, 0.0)).head<3>().normalized();
      fn(Eigen::Vector3d(o + static_cast<double>(f.depth[i]) * v));
    }
  }
}

}  // namespace

SceneNormalization compute_normalization(const std::vector<Frame>& frames,
                                         double target_radius) {
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  std::size_t count = 0;
  for (const auto& f : frames) {
    for_each_depth_point(f, [&](const Eigen::Vector3d& x) {
      lo = lo.cwiseMin(x);
      hi = hi.cwiseMax(x);
      ++count;
    });
  }
  if (count == 0) throw DataError("normalization: no mask-active pixel with valid depth");
  SceneNormalization n;
  n.center = 0.5 * (lo + hi);
  double far = 0.0;
  for (const auto& f : frames) {
    for_each_depth_point(f, [&](const Eigen::Vector3d& x) {
      far = std::max(far, (x - n.center).norm());
    });
  }
  if (far <= 0.0) throw DegenerateInput("normalization: all depth points coincide");
  n.scale = far / target_radius;
  return n;
}

bool is_test_frame(std::size_t index) { return index % 8 == 7; }

std::vector<std::size_t> split_indices(std::size_t frame_count, bool test) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < frame_count; ++i) {
    if (is_test_frame(i) == test) out.push_back(i);
  }
  return out;
}

namespace {

std::string frame_file(const char* prefix, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04zu.%s", prefix, i, ext);
  return buf;
}

json matrix_to_json(const Eigen::Matrix4d& m) {
  json a = json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) a.push_back(m(r, c));
  return a;
}

Eigen::Matrix4d matrix_from_json(const json& a, const std::string& what) {
  if (!a.is_array() || a.size() != 16) throw DataError(what + ": projection needs 16 values");
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = a.at(r * 4 + c).get<double>();
  return m;
}

}  // namespace

void save_dataset(const Dataset& ds, const fs::path& dir) {
  if (ds.frames.empty()) throw DataError("save_dataset: no frames");
  fs::create_directories(dir);
  json meta;
  meta["format"] = "dsurf-dataset";
  meta["version"] = 1;
  meta["frame_count"] = ds.frames.size();
  meta["height"] = ds.height();
  meta["width"] = ds.width();
  meta["depth_scale_mm"] = ds.depth_scale_mm;
  meta["normalization"] = {
      {"center", {ds.normalization.center.x(), ds.normalization.center.y(),
                  ds.normalization.center.z()}},
      {"scale", ds.normalization.scale}};
  meta["provenance"] = ds.provenance;
  json frames = json::array();
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    const Frame& f = ds.frames[i];
    if (f.height != ds.height() || f.width != ds.width()) {
      throw DataError("save_dataset: frame " + std::to_string(i) + " has a different size");
    }
    write_png_rgb(dir / frame_file("color", i, "png"), f.height, f.width, f.color);
    write_float_map(dir / frame_file("depth", i, "bin"), f.height, f.width, f.depth);
    std::vector<std::uint8_t> m(f.mask.size());
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = f.mask[k] ? 255 : 0;
    write_png_gray(dir / frame_file("mask", i, "png"), f.height, f.width, m);
    frames.push_back({{"projection", matrix_to_json(f.projection)}, {"time", f.time}});
  }
  meta["frames"] = std::move(frames);
  std::ofstream out(dir / "meta.json");
  if (!out) throw DataError("cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << '\n';
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  std::ifstream in(meta_path);
  if (!in) throw DataError("missing " + meta_path.string());
  json meta;
  try {
    in >> meta;
  } catch (const json::exception& e) {
    throw DataError("cannot parse " + meta_path.string() + ": " + e.what());
  }
  if (!meta.contains("frames") || !meta["frames"].is_array() || meta["frames"].empty()) {
    throw DataError(meta_path.string() + ": no frames listed");
  }
  Dataset ds;
  ds.depth_scale_mm = meta.value("depth_scale_mm", 1.0);
  if (meta.contains("provenance")) ds.provenance = meta["provenance"];
  const auto& entries = meta["frames"];
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string name = "frame " + std::to_string(i);
    Frame f;
    f.projection = matrix_from_json(entries[i].at("projection"), name);
    Eigen::FullPivLU<Eigen::Matrix4d> lu(f.projection);
    if (!lu.isInvertible()) throw DataError(name + ": projection matrix is not invertible");
    int h = 0, w = 0, hd = 0, wd = 0, hm = 0, wm = 0;
    f.color = read_png_rgb(dir / frame_file("color", i, "png"), h, w);
    f.depth = read_float_map(dir / frame_file("depth", i, "bin"), hd, wd);
    const auto m = read_png_gray(dir / frame_file("mask", i, "png"), hm, wm);
    if (hd != h || wd != w || hm != h || wm != w) {
      throw DataError(name + ": color, depth and mask sizes differ");
    }
    if (!ds.frames.empty() && (h != ds.height() || w != ds.width())) {
      throw DataError(name + ": image size differs from frame 0");
    }
    f.height = h;
    f.width = w;
    f.mask.resize(m.size());
    for (std::size_t k = 0; k < m.size(); ++k) f.mask[k] = m[k] >= 128 ? 1 : 0;
    for (float& d : f.depth) {
      if (!std::isfinite(d) || d < 0.f) throw DataError(name + ": negative or non-finite depth");
    }
    ds.frames.push_back(std::move(f));
  }
  assign_timestamps(ds.frames);
  if (meta.contains("normalization")) {
    const auto& n = meta["normalization"];
    const auto& c = n.at("center");
    ds.normalization.center = {c.at(0).get<double>(), c.at(1).get<double>(),
                               c.at(2).get<double>()};
    ds.normalization.scale = n.at("scale").get<double>();
    if (!(ds.normalization.scale > 0)) throw DataError("normalization scale must be positive");
  } else {
    ds.normalization = compute_normalization(ds.frames);
  }
  return ds;
}

}  // namespace dsurf
