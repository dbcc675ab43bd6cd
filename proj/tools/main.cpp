// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0
//
// pointblend: fit, render, compose, verify and benchmark transparency-aware
// point-cloud scenes.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "pointblend/bench.hpp"
#include "pointblend/fitter.hpp"
#include "pointblend/gradcheck.hpp"
#include "pointblend/parallel.hpp"
#include "pointblend/scene_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pointblend;

namespace {

// Exit contract: 0 success, 1 usage, 2 data, 3 numerical failure.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

void emit_event(bool enabled, const json& j) {
  if (enabled) std::cout << j.dump() << "\n" << std::flush;
}

struct FitCli {
  std::string cloud;
  std::string data_dir;
  std::string config_path;
  std::string out_dir;
  std::string descriptors;
  std::string background;
  int val_split = 0;
  int descriptor_dim = DescriptorSet::kDefaultDim;
  bool progress = false;
  int threads = 0;
};

FitDataset load_dataset(const fs::path& dir, std::vector<io::NamedCamera>* heldout_cams,
                        std::vector<Image>* heldout_targets, std::vector<std::string>* heldout_ids,
                        int val_split) {
  const auto cameras = io::load_cameras(dir / "cameras.txt");
  FitDataset data;
  bool first = true;
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    const auto& cam = cameras[i];
    Image target = io::load_image(dir / (cam.id + ".png"));
    const TargetKind kind = target.channels() == 4 ? TargetKind::RGBA : TargetKind::RGB;
    if (first) {
      data.kind = kind;
      first = false;
    } else if (kind != data.kind) {
      throw io::Error(io::ErrorKind::SizeMismatch,
                      "dataset mixes RGB and RGBA targets (view " + cam.id + ")");
    }
    const bool held_out = val_split > 0 && i % static_cast<std::size_t>(val_split) == 0;
    if (held_out) {
      if (heldout_cams) heldout_cams->push_back(cam);
      if (heldout_targets) heldout_targets->push_back(std::move(target));
      if (heldout_ids) heldout_ids->push_back(cam.id);
    } else {
      data.views.push_back({cam.id, cam.camera, std::move(target)});
    }
  }
  return data;
}

int run_fit(const FitCli& cli, FitConfig cfg) {
  set_thread_count(cli.threads);
  const fs::path out_dir = cli.out_dir;
  fs::create_directories(out_dir);

  PointCloud cloud = io::load_point_cloud(cli.cloud);
  std::vector<io::NamedCamera> heldout_cams;
  std::vector<Image> heldout_targets;
  std::vector<std::string> heldout_ids;
  FitDataset data = load_dataset(cli.data_dir, &heldout_cams, &heldout_targets, &heldout_ids,
                                 cli.val_split);
  if (data.views.empty())
    throw io::Error(io::ErrorKind::SizeMismatch, "validation split leaves no training views");

  Scene scene;
  scene.cloud = std::move(cloud);
  scene.descriptors = cli.descriptors.empty()
                          ? DescriptorSet::random_init(scene.cloud.size(), cli.descriptor_dim,
                                                       cfg.seed)
                          : io::load_descriptors(cli.descriptors);
  scene.label = fs::path(cli.cloud).stem().string();

  std::optional<Image> background;
  if (!cli.background.empty()) background = io::load_image(cli.background);

  const int report_every = std::max(1, cfg.iterations / 100);
  const int render_every = std::max(1, cfg.iterations / 4);
  emit_event(cli.progress, {{"event", "start"},
                            {"command", "fit"},
                            {"points", scene.cloud.size()},
                            {"views", data.views.size()},
                            {"iterations", cfg.iterations}});

  auto progress = [&](int iter, double loss, const Scene& live, const HeadConfig& head) {
    if ((iter + 1) % report_every == 0)
      emit_event(cli.progress, {{"event", "iteration"}, {"iteration", iter}, {"loss", loss}});
    if (!heldout_cams.empty() && (iter + 1) % render_every == 0 && iter + 1 < cfg.iterations) {
      const fs::path snap_dir = out_dir / "holdout" / ("iter_" + std::to_string(iter + 1));
      fs::create_directories(snap_dir);
      for (const auto& cam : heldout_cams) {
        Image rgba = render_view(live, cam.camera, head, cfg.pyramid_levels, cfg.max_ray_len);
        if (background) {
          io::save_image(blend_background(rgba, *background), snap_dir / (cam.id + ".png"));
        } else {
          io::save_image(rgba, snap_dir / (cam.id + ".png"));
        }
      }
    }
  };

  FitResult result = fit(std::move(scene), data, cfg, background ? &*background : nullptr, progress);

  io::save_descriptors(result.scene.descriptors, out_dir / "descriptors.bin");
  io::save_scene_bundle(out_dir / "scene.json", result.scene, result.head,
                        fs::absolute(cli.cloud), "descriptors.bin");
  cfg.save_kv_file(out_dir / "config.txt");

  json report = json::parse(result.report.to_json());
  if (!heldout_cams.empty() && !result.report.diverged) {
    const fs::path final_dir = out_dir / "holdout" / "final";
    fs::create_directories(final_dir);
    json holdout = json::array();
    for (std::size_t i = 0; i < heldout_cams.size(); ++i) {
      const auto& cam = heldout_cams[i];
      Image rgba = render_view(result.scene, cam.camera, result.head, cfg.pyramid_levels,
                               cfg.max_ray_len);
      if (background)
        io::save_image(blend_background(rgba, *background), final_dir / (cam.id + ".png"));
      else
        io::save_image(rgba, final_dir / (cam.id + ".png"));
      FitDataset::View view{cam.id, cam.camera, std::move(heldout_targets[i])};
      const ViewMetrics m = evaluate_view(result.scene, result.head, view, data.kind,
                                          background ? &*background : nullptr,
                                          cfg.pyramid_levels, cfg.max_ray_len);
      holdout.push_back({{"id", m.id}, {"l1", m.l1}, {"psnr", m.psnr}});
    }
    report["holdout"] = holdout;
  }
  {
    std::ofstream out(out_dir / "report.json");
    out << report.dump(2) << "\n";
  }

  if (result.report.diverged) {
    std::cerr << "fit: loss became non-finite at iteration " << result.report.diverged_iteration
              << "; partial report saved to " << (out_dir / "report.json").string() << "\n";
    return kExitNumeric;
  }
  emit_event(cli.progress, {{"event", "done"},
                            {"loss", result.report.loss_curve.empty()
                                         ? 0.0
                                         : result.report.loss_curve.back()}});
  double mean_l1 = 0.0;
  for (const auto& m : result.report.view_metrics) mean_l1 += m.l1;
  if (!result.report.view_metrics.empty()) mean_l1 /= result.report.view_metrics.size();
  std::cout << "fit: " << cfg.iterations << " iterations, final loss "
            << (result.report.loss_curve.empty() ? 0.0 : result.report.loss_curve.back())
            << ", mean train L1 " << mean_l1 << "\n";
  std::cout << "fit: wrote " << (out_dir / "descriptors.bin").string() << ", scene.json, report.json"
            << "\n";
  return kExitOk;
}

struct RenderCli {
  std::string scene;
  std::string manifest;
  std::string cameras;
  std::string out_dir;
  std::string background;
  std::string head;
  double alpha_scale = 1.0;
  int max_ray_len = kDefaultMaxRayLen;
  int levels = kDefaultPyramidLevels;
  int descriptor_dim = DescriptorSet::kDefaultDim;
  bool force_opaque = false;
  bool progress = false;
  int threads = 0;
  std::uint64_t seed = 0;
};

int run_render(const RenderCli& cli, const char* stage) {
  set_thread_count(cli.threads);
  fs::create_directories(cli.out_dir);

  Scene scene;
  HeadConfig head;
  std::string input = !cli.manifest.empty() ? cli.manifest : cli.scene;
  if (input.empty()) throw std::invalid_argument("a scene or manifest path is required");
  if (!cli.manifest.empty() || io::is_manifest_file(input)) {
    const io::SceneManifest manifest = io::SceneManifest::load(input);
    scene = io::compose_scenes(manifest, cli.descriptor_dim, cli.seed);
    head = HeadConfig::passthrough(scene.descriptors.dim());
  } else {
    io::SceneBundle bundle = io::load_scene_bundle(input);
    scene = std::move(bundle.scene);
    head = std::move(bundle.head);
  }
  if (!cli.head.empty()) head = io::load_head(cli.head);

  std::optional<Image> background;
  if (!cli.background.empty()) background = io::load_image(cli.background);

  const auto cameras = io::load_cameras(cli.cameras);
  for (const auto& cam : cameras) {
    Image rgba = render_view(scene, cam.camera, head, cli.levels, cli.max_ray_len,
                             cli.alpha_scale, cli.force_opaque);
    const fs::path out_path = fs::path(cli.out_dir) / (cam.id + ".png");
    if (background) {
      if (background->width() != cam.camera.width || background->height() != cam.camera.height)
        throw io::Error(io::ErrorKind::SizeMismatch,
                        "background does not match canvas of view " + cam.id);
      io::save_image(blend_background(rgba, *background), out_path);
    } else {
      io::save_image(rgba, out_path);
    }
    emit_event(cli.progress, {{"event", "render"}, {"view", cam.id}});
  }
  std::cout << stage << ": wrote " << cameras.size() << " image(s) to " << cli.out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pointblend: differentiable transparency-aware point-cloud renderer"};
  app.require_subcommand(1);

  // --- fit ---
  FitCli fit_cli;
  FitConfig fit_cfg;
  auto* fit_cmd = app.add_subcommand("fit", "optimize scene descriptors against target views");
  fit_cmd->add_option("--cloud", fit_cli.cloud, "point cloud (.ply)")->required();
  fit_cmd->add_option("--data", fit_cli.data_dir, "dataset dir (cameras.txt + <view>.png)")
      ->required();
  fit_cmd->add_option("--config", fit_cli.config_path, "fit config file")->required();
  fit_cmd->add_option("--out", fit_cli.out_dir, "output directory")->required();
  fit_cmd->add_option("--descriptors", fit_cli.descriptors, "initial descriptors (.bin)");
  fit_cmd->add_option("--background", fit_cli.background, "background image for RGB supervision");
  fit_cmd->add_option("--val-split", fit_cli.val_split, "hold out every k-th view");
  fit_cmd->add_option("--descriptor-dim", fit_cli.descriptor_dim, "M when initializing");
  fit_cmd->add_flag("--progress", fit_cli.progress, "emit JSON-lines progress");
  fit_cmd->add_option("--threads", fit_cli.threads, "worker threads (0 = hardware)");
  // Config mirrors; flags win over the config file.
  int f_iterations = -1, f_crop = -1, f_ray = -1, f_levels = -1;
  double f_lr = -1, f_beta = -1, f_zmin = -1, f_zmax = -1;
  std::string f_opt, f_loss, f_head;
  std::int64_t f_seed = -1;
  bool f_jitter = false, f_overlay = false;
  fit_cmd->add_option("--iterations", f_iterations, "override config iterations");
  fit_cmd->add_option("--learning-rate", f_lr, "override config learning_rate");
  fit_cmd->add_option("--optimizer", f_opt, "plain-gradient | adaptive-moment");
  fit_cmd->add_option("--beta", f_beta, "override config beta");
  fit_cmd->add_option("--loss", f_loss, "l1 | l2");
  fit_cmd->add_option("--crop-size", f_crop, "override config crop_size");
  fit_cmd->add_option("--zoom-min", f_zmin, "override config zoom_min");
  fit_cmd->add_option("--zoom-max", f_zmax, "override config zoom_max");
  fit_cmd->add_flag("--jitter", f_jitter, "enable alpha jitter");
  fit_cmd->add_flag("--overlay", f_overlay, "enable overlay augmentation");
  fit_cmd->add_option("--ray-len", f_ray, "override config max_ray_len");
  fit_cmd->add_option("--levels", f_levels, "override config pyramid_levels");
  fit_cmd->add_option("--head-mode", f_head, "passthrough | linear");
  fit_cmd->add_option("--seed", f_seed, "override config seed");

  // --- render / compose ---
  RenderCli render_cli;
  auto* render_cmd = app.add_subcommand("render", "render a fitted scene or manifest");
  render_cmd->add_option("--scene", render_cli.scene, "scene bundle or manifest (.json)");
  render_cmd->add_option("--manifest", render_cli.manifest, "composition manifest (.json)");
  render_cmd->add_option("--cameras", render_cli.cameras, "camera list")->required();
  render_cmd->add_option("--out", render_cli.out_dir, "output directory")->required();
  render_cmd->add_option("--background", render_cli.background, "background image (emits RGB)");
  render_cmd->add_option("--alpha-scale", render_cli.alpha_scale, "transparency factor p");
  render_cmd->add_option("--ray-len", render_cli.max_ray_len, "maximum ray length L");
  render_cmd->add_option("--levels", render_cli.levels, "pyramid levels T");
  render_cmd->add_option("--head", render_cli.head, "head config override (.json)");
  render_cmd->add_option("--descriptor-dim", render_cli.descriptor_dim,
                         "M for manifest entries without descriptors");
  render_cmd->add_flag("--force-opaque", render_cli.force_opaque,
                       "debug: force every activated alpha to 1");
  render_cmd->add_flag("--progress", render_cli.progress, "emit JSON-lines progress");
  render_cmd->add_option("--threads", render_cli.threads, "worker threads (0 = hardware)");
  render_cmd->add_option("--seed", render_cli.seed, "seed for uninitialized descriptors");

  RenderCli compose_cli;
  auto* compose_cmd = app.add_subcommand("compose", "compose scenes per manifest and render");
  compose_cmd->add_option("--manifest", compose_cli.manifest, "composition manifest (.json)")
      ->required();
  compose_cmd->add_option("--cameras", compose_cli.cameras, "camera list")->required();
  compose_cmd->add_option("--out", compose_cli.out_dir, "output directory")->required();
  compose_cmd->add_option("--background", compose_cli.background, "background image (emits RGB)");
  compose_cmd->add_option("--alpha-scale", compose_cli.alpha_scale, "transparency factor p");
  compose_cmd->add_option("--ray-len", compose_cli.max_ray_len, "maximum ray length L");
  compose_cmd->add_option("--levels", compose_cli.levels, "pyramid levels T");
  compose_cmd->add_option("--head", compose_cli.head, "head config override (.json)");
  compose_cmd->add_option("--descriptor-dim", compose_cli.descriptor_dim,
                          "M for manifest entries without descriptors");
  compose_cmd->add_flag("--force-opaque", compose_cli.force_opaque,
                        "debug: force every activated alpha to 1");
  compose_cmd->add_flag("--progress", compose_cli.progress, "emit JSON-lines progress");
  compose_cmd->add_option("--threads", compose_cli.threads, "worker threads (0 = hardware)");
  compose_cmd->add_option("--seed", compose_cli.seed, "seed for uninitialized descriptors");

  // --- gradcheck ---
  GradCheckOptions gc;
  bool gc_json = false;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient validation");
  gc_cmd->add_option("--seed", gc.seed, "rng seed");
  gc_cmd->add_option("--configs", gc.configs, "number of random configurations");
  gc_cmd->add_option("--max-points", gc.max_points, "max scene points per configuration");
  gc_cmd->add_option("--max-canvas", gc.max_canvas, "max canvas extent");
  gc_cmd->add_option("--max-ray-len", gc.max_ray_len, "max ray length");
  gc_cmd->add_flag("--tamper", gc.tamper, "debug: corrupt one analytic gradient");
  gc_cmd->add_flag("--json", gc_json, "emit the result as JSON");

  // --- bench ---
  BenchConfig bench_cfg;
  bool bench_json = false;
  std::string bench_canvas;
  int bench_threads = 0;
  auto* bench_cmd = app.add_subcommand("bench", "rasterization timing");
  bench_cmd->add_option("--points", bench_cfg.points, "point count");
  bench_cmd->add_option("--canvas", bench_canvas, "canvas as WxH (default 512x512)");
  bench_cmd->add_option("--ray-len", bench_cfg.max_ray_len, "maximum ray length L");
  bench_cmd->add_option("--levels", bench_cfg.levels, "pyramid levels T");
  bench_cmd->add_option("--repeats", bench_cfg.repeats, "timing repeats");
  bench_cmd->add_option("--seed", bench_cfg.seed, "rng seed");
  bench_cmd->add_option("--threads", bench_threads, "worker threads (0 = hardware)");
  bench_cmd->add_flag("--json", bench_json, "emit the result as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (fit_cmd->parsed()) {
      FitConfig cfg = FitConfig::from_kv_file(fit_cli.config_path);
      if (f_iterations >= 0) cfg.iterations = f_iterations;
      if (f_lr > 0) cfg.learning_rate = f_lr;
      if (!f_opt.empty())
        cfg.optimizer = f_opt == "plain-gradient" ? Optimizer::PlainGradient
                        : f_opt == "adaptive-moment"
                            ? Optimizer::AdaptiveMoment
                            : throw std::invalid_argument("unknown optimizer '" + f_opt + "'");
      if (f_beta >= 0) cfg.beta = f_beta;
      if (!f_loss.empty())
        cfg.loss_rgb = f_loss == "l1"   ? RgbLoss::L1
                       : f_loss == "l2" ? RgbLoss::L2
                                        : throw std::invalid_argument("unknown loss '" + f_loss + "'");
      if (f_crop >= 0) cfg.crop_size = f_crop;
      if (f_zmin > 0) cfg.zoom_min = f_zmin;
      if (f_zmax > 0) cfg.zoom_max = f_zmax;
      if (f_jitter) cfg.use_jitter = true;
      if (f_overlay) cfg.use_overlay = true;
      if (f_ray > 0) cfg.max_ray_len = f_ray;
      if (f_levels >= 0) cfg.pyramid_levels = f_levels;
      if (!f_head.empty())
        cfg.head_mode = f_head == "passthrough" ? HeadMode::Passthrough
                        : f_head == "linear"
                            ? HeadMode::Linear
                            : throw std::invalid_argument("unknown head mode '" + f_head + "'");
      if (f_seed >= 0) cfg.seed = static_cast<std::uint64_t>(f_seed);
      cfg.validate();
      return run_fit(fit_cli, cfg);
    }
    if (render_cmd->parsed()) return run_render(render_cli, "render");
    if (compose_cmd->parsed()) return run_render(compose_cli, "compose");
    if (gc_cmd->parsed()) {
      const GradCheckResult result = run_gradient_check(gc);
      if (gc_json) {
        json j{{"max_error", result.max_error},
               {"parameters_checked", result.parameters_checked},
               {"configs", result.configs_run},
               {"passed", result.passed()}};
        std::cout << j.dump() << "\n";
      }
      std::cout << "gradcheck: max relative error " << result.max_error << " over "
                << result.parameters_checked << " parameters in " << result.configs_run
                << " configurations\n";
      if (!result.passed()) {
        std::cerr << "gradcheck: FAILED (threshold " << GradCheckResult::kThreshold << "): "
                  << result.worst_case << "\n";
        return kExitNumeric;
      }
      return kExitOk;
    }
    if (bench_cmd->parsed()) {
      set_thread_count(bench_threads);
      if (!bench_canvas.empty()) {
        const auto x = bench_canvas.find('x');
        if (x == std::string::npos)
          throw std::invalid_argument("--canvas expects WxH, e.g. 512x512");
        bench_cfg.width = std::stoi(bench_canvas.substr(0, x));
        bench_cfg.height = std::stoi(bench_canvas.substr(x + 1));
      }
      const BenchResult result = run_bench(bench_cfg);
      if (bench_json) std::cout << result.to_json() << "\n";
      std::cout << result.to_text();
      return kExitOk;
    }
  } catch (const io::Error& e) {
    std::cerr << app.get_subcommands().front()->get_name() << ": data error ("
              << io::error_kind_name(e.kind()) << "): " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << app.get_subcommands().front()->get_name() << ": invalid input: " << e.what()
              << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << app.get_subcommands().front()->get_name() << ": error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
