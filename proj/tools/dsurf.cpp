// dsurf: command-line front end for synthesis, training, rendering, mesh
// extraction and evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dsurf/checkpoint.hpp"
#include "dsurf/dataset.hpp"
#include "dsurf/error.hpp"
#include "dsurf/geometry.hpp"
#include "dsurf/image_io.hpp"
#include "dsurf/metrics.hpp"
#include "dsurf/parallel.hpp"
#include "dsurf/renderer.hpp"
#include "dsurf/synthetic.hpp"
#include "dsurf/trainer.hpp"

namespace fs = std::filesystem;
using namespace dsurf;

namespace {

constexpr int kUsageExit = 2;
constexpr int kFailureExit = 1;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  int threads = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file (flags override its values)");
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_flag("--deterministic", c.deterministic,
                "Fixed reduction order (always on; accepted for scripts)");
  cmd->add_option("--threads", c.threads, "Worker threads for rendering and grid sampling")
      ->check(CLI::NonNegativeNumber);
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw DataError("cannot write " + path.string());
}

/// `run/final` → run/final.ckpt; a directory → its final.ckpt.
fs::path resolve_checkpoint(const std::string& arg) {
  const fs::path p(arg);
  if (fs::is_regular_file(p)) return p;
  if (fs::is_directory(p) && fs::is_regular_file(p / "final.ckpt")) return p / "final.ckpt";
  fs::path with_ext = p;
  with_ext += ".ckpt";
  if (fs::is_regular_file(with_ext)) return with_ext;
  throw DataError("checkpoint not found: " + arg);
}

SceneNormalization checkpoint_normalization(const Checkpoint& ck) {
  SceneNormalization n;
  if (ck.meta.contains("normalization")) {
    const auto& j = ck.meta.at("normalization");
    const auto c = j.at("center").get<std::vector<double>>();
    n.center = Eigen::Vector3d(c.at(0), c.at(1), c.at(2));
    n.scale = j.at("scale").get<double>();
  }
  return n;
}

bool is_float64(const Checkpoint& ck) {
  return ck.meta.contains("config") && ck.meta.at("config").value("precision", "") == "float64";
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  Common common;
  std::optional<std::string> preset;
  std::optional<int> frames, res;
  bool tool_holes = false;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  nlohmann::json j = a.common.config.empty() ? nlohmann::json::object() : read_json(a.common.config);
  if (a.preset) j["preset"] = *a.preset;
  if (a.frames) j["frames"] = *a.frames;
  if (a.res) j["resolution"] = *a.res;
  if (a.tool_holes) j["tool_holes"] = true;
  if (a.common.seed) j["seed"] = *a.common.seed;
  SyntheticConfig cfg;
  try {
    cfg = SyntheticConfig::from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic config: ") + e.what());
  }
  const Dataset ds = generate_synthetic(cfg);
  save_dataset(ds, a.out);
  write_json(fs::path(a.out) / "synth_config.json", cfg.to_json());
  std::printf("wrote %zu frames (%dx%d) to %s\n", ds.frames.size(), ds.height(), ds.width(),
              a.out.c_str());
  return 0;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string data, out, resume;
  std::string preset = "desk";
  std::optional<std::int64_t> iters, checkpoint_every, warmup;
  std::optional<double> lr;
  std::optional<int> rays;
  std::optional<std::string> precision;
  std::int64_t print_every = 100;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg = TrainConfig::preset(a.preset);
  if (!a.common.config.empty()) {
    try {
      read_json(a.common.config).get_to(cfg);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file '" + a.common.config + "': " + e.what());
    }
  }
  if (a.iters) {
    // Scale the warmup with the run length unless it is given explicitly.
    if (!a.warmup) {
      cfg.warmup_iters = std::max<std::int64_t>(1, cfg.warmup_iters * *a.iters / cfg.iterations);
    }
    cfg.iterations = *a.iters;
  }
  if (a.warmup) cfg.warmup_iters = *a.warmup;
  if (a.checkpoint_every) cfg.checkpoint_every = *a.checkpoint_every;
  if (a.lr) cfg.lr = *a.lr;
  if (a.rays) cfg.rays_per_batch = *a.rays;
  if (a.precision) cfg.precision = *a.precision;
  if (a.common.seed) cfg.seed = *a.common.seed;
  cfg.validate();

  const Dataset ds = load_dataset(a.data);
  write_json(fs::path(a.out) / "config.json", cfg);
  TrainRunOptions opts;
  opts.out_dir = a.out;
  opts.print_every = a.print_every;
  opts.print = [](const std::string& line) { std::cout << line << std::endl; };
  if (!a.resume.empty()) opts.resume_from = resolve_checkpoint(a.resume);
  const fs::path final_ckpt = run_training(ds, cfg, opts);
  std::cout << "checkpoint " << final_ckpt.string() << std::endl;
  return 0;
}

// ---- render ---------------------------------------------------------------

struct RenderArgs {
  Common common;
  std::string ckpt, data, out;
  std::vector<int> frames;
  bool all_pixels = false;
  bool canonical = false;
};

template <typename T>
void render_frames(const Checkpoint& ck, const Dataset& ds, const RenderArgs& a) {
  SceneFields<T> fields = SceneFields<T>::load_from(ck);
  if (a.canonical) fields.deformation.zero_output();
  TrainConfig cfg;
  if (ck.meta.contains("config")) ck.meta.at("config").get_to(cfg);
  std::vector<std::size_t> which;
  if (a.frames.empty()) {
    which = split_indices(ds.frames.size(), /*test=*/true);
  } else {
    for (int f : a.frames) {
      if (f < 0 || static_cast<std::size_t>(f) >= ds.frames.size()) {
        throw ConfigError("frame index " + std::to_string(f) + " out of range");
      }
      which.push_back(static_cast<std::size_t>(f));
    }
  }
  fs::create_directories(a.out);
  for (std::size_t i : which) {
    const Frame& frame = ds.frames[i];
    const FrameRender r = render_frame(fields, frame, ds.normalization, cfg.sampling, a.all_pixels);
    char name[32];
    std::snprintf(name, sizeof(name), "%03zu", i);
    write_png_rgb(fs::path(a.out) / ("color_" + std::string(name) + ".png"), r.height, r.width,
                  r.color);
    std::vector<float> normal_rgb(r.normal.size());
    for (std::size_t k = 0; k < normal_rgb.size(); ++k) {
      normal_rgb[k] = r.rendered[k / 3] ? 0.5f * r.normal[k] + 0.5f : 0.f;
    }
    write_png_rgb(fs::path(a.out) / ("normal_" + std::string(name) + ".png"), r.height, r.width,
                  normal_rgb);
    std::vector<float> depth(r.depth.size());
    for (std::size_t k = 0; k < depth.size(); ++k) {
      depth[k] = static_cast<float>(r.depth[k] * ds.normalization.scale);
    }
    write_float_map(fs::path(a.out) / ("depth_" + std::string(name) + ".bin"), r.height, r.width,
                    depth);
    std::printf("rendered frame %zu (t = %.4f)\n", i, frame.time);
  }
}

int run_render(const RenderArgs& a) {
  const Checkpoint ck = Checkpoint::load(resolve_checkpoint(a.ckpt));
  const Dataset ds = load_dataset(a.data);
  if (is_float64(ck)) {
    render_frames<double>(ck, ds, a);
  } else {
    render_frames<float>(ck, ds, a);
  }
  return 0;
}

// ---- extract-mesh -----------------------------------------------------------

struct MeshArgs {
  Common common;
  std::string ckpt, out;
  std::optional<double> time;
  int res = 128;
};

template <typename T>
TriMesh extract(const Checkpoint& ck, const MeshArgs& a) {
  const SceneFields<T> fields = SceneFields<T>::load_from(ck);
  TriMesh mesh = marching_cubes(sample_grid(fields, a.res, a.time));
  mesh.transform(checkpoint_normalization(ck).denormalize_transform());
  return mesh;
}

int run_extract(const MeshArgs& a) {
  const std::string ext = fs::path(a.out).extension().string();
  if (ext != ".obj" && ext != ".ply") throw ConfigError("--out must end in .obj or .ply");
  const Checkpoint ck = Checkpoint::load(resolve_checkpoint(a.ckpt));
  const TriMesh mesh = is_float64(ck) ? extract<double>(ck, a) : extract<float>(ck, a);
  if (!fs::path(a.out).parent_path().empty()) fs::create_directories(fs::path(a.out).parent_path());
  if (ext == ".obj") {
    write_obj(mesh, a.out);
  } else {
    write_ply(mesh, a.out);
  }
  std::printf("wrote %zu vertices, %zu triangles to %s\n", mesh.vertices.size(),
              mesh.triangles.size(), a.out.c_str());
  return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string ckpt, data, out;
  int res = 128;
  std::size_t samples = 10000;
  bool no_pcd = false;
};

int run_eval(const EvalArgs& a) {
  const fs::path ckpt_path = resolve_checkpoint(a.ckpt);
  const Checkpoint ck = Checkpoint::load(ckpt_path);
  const Dataset ds = load_dataset(a.data);
  EvalOptions opts;
  opts.mesh_pcd = !a.no_pcd;
  opts.mesh_resolution = a.res;
  opts.surface_samples = a.samples;
  if (a.common.seed) opts.seed = *a.common.seed;
  const EvalReport report = evaluate(ck, ds, opts);
  const fs::path out = a.out.empty() ? ckpt_path.parent_path() / "eval" : fs::path(a.out);
  report.write(out);
  std::cout << report.to_csv();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deformable neural SDF reconstruction from RGBD frames"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic RGBD dataset");
  add_common(s, synth.common);
  s->add_option("--preset", synth.preset, "static-sphere | translating-sphere | bulging-plane");
  s->add_option("--frames", synth.frames, "Number of frames");
  s->add_option("--res", synth.res, "Image width and height in pixels");
  s->add_flag("--tool-holes", synth.tool_holes, "Cut tool-shaped holes into the masks");
  s->add_option("--out", synth.out, "Output dataset directory")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Optimize the fields on a dataset");
  add_common(t, train.common);
  t->add_option("--data", train.data, "Dataset directory")->required();
  t->add_option("--out", train.out, "Run directory")->required();
  t->add_option("--preset", train.preset, "Base configuration: desk | full")
      ->check(CLI::IsMember({"desk", "full"}));
  t->add_option("--iters", train.iters, "Iterations (warmup scales along unless --warmup)");
  t->add_option("--warmup", train.warmup, "Warmup iterations");
  t->add_option("--lr", train.lr, "Peak learning rate");
  t->add_option("--rays", train.rays, "Rays per batch");
  t->add_option("--precision", train.precision, "float32 | float64");
  t->add_option("--checkpoint-every", train.checkpoint_every, "Checkpoint interval");
  t->add_option("--resume", train.resume, "Checkpoint to resume from");
  t->add_option("--print-every", train.print_every, "Progress interval (0 = quiet)");

  RenderArgs render;
  auto* r = app.add_subcommand("render", "Render frames from a checkpoint");
  add_common(r, render.common);
  r->add_option("--ckpt", render.ckpt, "Checkpoint (run/final, a .ckpt file or a run dir)")
      ->required();
  r->add_option("--data", render.data, "Dataset directory (cameras and timestamps)")->required();
  r->add_option("--out", render.out, "Output directory")->required();
  r->add_option("--frame", render.frames, "Frame indices (default: test split)");
  r->add_flag("--all-pixels", render.all_pixels, "Render masked-out pixels too");
  r->add_flag("--canonical", render.canonical, "Render with the deformation switched off");

  MeshArgs mesh;
  auto* m = app.add_subcommand("extract-mesh", "Marching-cubes mesh of the zero level set");
  add_common(m, mesh.common);
  m->add_option("--ckpt", mesh.ckpt, "Checkpoint")->required();
  m->add_option("--time", mesh.time, "Observed-space time (default: canonical space)");
  m->add_option("--res", mesh.res, "Grid resolution per axis")->check(CLI::Range(2, 1024));
  m->add_option("--out", mesh.out, "Output .obj or .ply")->required();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score the test split");
  add_common(e, eval.common);
  e->add_option("--ckpt", eval.ckpt, "Checkpoint")->required();
  e->add_option("--data", eval.data, "Dataset directory")->required();
  e->add_option("--out", eval.out, "Report directory (default: <ckpt dir>/eval)");
  e->add_option("--res", eval.res, "Mesh grid resolution")->check(CLI::Range(2, 1024));
  e->add_option("--samples", eval.samples, "Surface samples for the point cloud distance");
  e->add_flag("--no-pcd", eval.no_pcd, "Skip mesh extraction and PCD");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::cerr << "dsurf: error: usage: " << ex.what() << std::endl;
    return kUsageExit;
  }

  try {
    for (const Common* c : {&synth.common, &train.common, &render.common, &mesh.common,
                            &eval.common}) {
      if (c->threads > 0) set_thread_count(c->threads);
    }
    if (app.got_subcommand(s)) return run_synth(synth);
    if (app.got_subcommand(t)) return run_train(train);
    if (app.got_subcommand(r)) return run_render(render);
    if (app.got_subcommand(m)) return run_extract(mesh);
    if (app.got_subcommand(e)) return run_eval(eval);
  } catch (const ConfigError& ex) {
    std::cerr << "dsurf: error: config: " << ex.what() << std::endl;
    return kUsageExit;
  } catch (const Error& ex) {
    std::cerr << "dsurf: error: " << ex.kind() << ": " << ex.what() << std::endl;
    return kFailureExit;
  } catch (const std::exception& ex) {
    std::cerr << "dsurf: error: internal: " << ex.what() << std::endl;
    return kFailureExit;
  }
  return kFailureExit;
}
