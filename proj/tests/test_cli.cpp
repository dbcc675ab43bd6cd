// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>

#include <json.hpp>

#include "oracles.hpp"
#include "pointblend/fitter.hpp"
#include "pointblend/scene_io.hpp"

using namespace pointblend;
namespace fs = std::filesystem;
using pbtest::run_cli;

namespace {

struct CliFixture {
  fs::path root;
  fs::path cloud;
  fs::path cameras;
  fs::path data_dir;
  fs::path config;
  Scene gt;
  std::vector<io::NamedCamera> cams;
};

/// Three-point scene, two views, RGBA targets rendered by the pipeline.
const CliFixture& fixture() {
  static CliFixture fx = [] {
    CliFixture f;
    f.root = pbtest::make_temp_dir("cli");
    f.data_dir = f.root / "data";
    fs::create_directories(f.data_dir);

    f.gt.cloud.positions = {{0.0, 0.0, 1.0}, {0.15, 0.1, 1.4}, {-0.2, -0.1, 1.8}};
    f.gt.descriptors = DescriptorSet(3, 8);
    for (int i = 0; i < 3; ++i) {
      f.gt.descriptors.row(i)[0] = 0.2 + 0.3 * i;
      f.gt.descriptors.row(i)[1] = 0.9 - 0.3 * i;
      f.gt.descriptors.row(i)[2] = 0.5;
      f.gt.descriptors.row(i)[7] = 1.2;
    }
    f.cloud = f.root / "cloud.ply";
    io::save_point_cloud(f.gt.cloud, f.cloud);

    for (int v = 0; v < 2; ++v) {
      Camera cam;
      cam.fx = cam.fy = 16.0;
      cam.cx = cam.cy = 8.0;
      cam.width = cam.height = 16;
      cam.translation = {0.05 * v, 0.0, 0.0};
      f.cams.push_back({"v" + std::to_string(v), cam});
    }
    f.cameras = f.data_dir / "cameras.txt";
    io::save_cameras(f.cams, f.cameras);

    const HeadConfig head = HeadConfig::passthrough(8);
    for (const auto& cam : f.cams)
      io::save_image(render_view(f.gt, cam.camera, head, 1, 8),
                     f.data_dir / (cam.id + ".png"));

    FitConfig cfg;
    cfg.iterations = 60;
    cfg.learning_rate = 0.02;
    cfg.loss_rgb = RgbLoss::L2;
    cfg.pyramid_levels = 1;
    cfg.max_ray_len = 8;
    cfg.seed = 5;
    f.config = f.root / "config.txt";
    cfg.save_kv_file(f.config);
    return f;
  }();
  return fx;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("cli: missing required flag is a usage error") {
  const auto& fx = fixture();
  const auto r = run_cli("fit --cloud " + q(fx.cloud) + " --data " + q(fx.data_dir) +
                         " --out " + q(fx.root / "nowhere"));
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("--config") != std::string::npos);
}

TEST_CASE("cli: fit writes descriptors, scene bundle and report") {
  const auto& fx = fixture();
  const fs::path out = fx.root / "fit_out";
  const auto r = run_cli("fit --cloud " + q(fx.cloud) + " --data " + q(fx.data_dir) +
                         " --config " + q(fx.config) + " --out " + q(out) + " --threads 1");
  CAPTURE(r.output);
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(out / "descriptors.bin"));
  CHECK(fs::exists(out / "scene.json"));
  CHECK(fs::exists(out / "report.json"));

  const auto report = nlohmann::json::parse(std::ifstream(out / "report.json"));
  CHECK(report.at("loss_curve").size() == 60);
  CHECK_FALSE(report.at("diverged").get<bool>());
  // Loss should drop over the run.
  CHECK(report.at("loss_curve").back().get<double>() <
        report.at("loss_curve").front().get<double>());

  SUBCASE("progress mode emits JSON lines") {
    const fs::path out2 = fx.root / "fit_out_progress";
    const auto r2 = run_cli("fit --cloud " + q(fx.cloud) + " --data " + q(fx.data_dir) +
                            " --config " + q(fx.config) + " --out " + q(out2) + " --progress");
    CHECK(r2.exit_code == 0);
    bool saw_event = false;
    std::istringstream lines(r2.output);
    std::string line;
    while (std::getline(lines, line)) {
      if (line.empty() || line[0] != '{') continue;
      const auto j = nlohmann::json::parse(line);
      if (j.value("event", "") == "iteration") saw_event = true;
    }
    CHECK(saw_event);
  }
}

TEST_CASE("cli: divergence exits 3 and keeps the partial report") {
  const auto& fx = fixture();
  const fs::path out = fx.root / "fit_diverge";
  const auto r = run_cli("fit --cloud " + q(fx.cloud) + " --data " + q(fx.data_dir) +
                         " --config " + q(fx.config) + " --out " + q(out) +
                         " --learning-rate 1e12 --optimizer plain-gradient --loss l2");
  CHECK(r.exit_code == 3);
  CHECK(fs::exists(out / "report.json"));
  const auto report = nlohmann::json::parse(std::ifstream(out / "report.json"));
  CHECK(report.at("diverged").get<bool>());
}

TEST_CASE("cli: render honors the alpha-scale flag") {
  const auto& fx = fixture();
  const fs::path out = fx.root / "fit_out";
  if (!fs::exists(out / "scene.json")) {
    REQUIRE(run_cli("fit --cloud " + q(fx.cloud) + " --data " + q(fx.data_dir) + " --config " +
                    q(fx.config) + " --out " + q(out))
                .exit_code == 0);
  }

  const fs::path render_default = fx.root / "render_default";
  const fs::path render_one = fx.root / "render_one";
  const fs::path render_scaled = fx.root / "render_scaled";
  CHECK(run_cli("render --scene " + q(out / "scene.json") + " --cameras " + q(fx.cameras) +
                " --out " + q(render_default) + " --levels 1 --ray-len 8")
            .exit_code == 0);
  CHECK(run_cli("render --scene " + q(out / "scene.json") + " --cameras " + q(fx.cameras) +
                " --out " + q(render_one) + " --levels 1 --ray-len 8 --alpha-scale 1.0")
            .exit_code == 0);
  CHECK(run_cli("render --scene " + q(out / "scene.json") + " --cameras " + q(fx.cameras) +
                " --out " + q(render_scaled) + " --levels 1 --ray-len 8 --alpha-scale 0.6")
            .exit_code == 0);

  for (const auto& cam : fx.cams) {
    const std::string name = cam.id + ".png";
    CHECK(read_bytes(render_default / name) == read_bytes(render_one / name));  // bit-identical
    const Image full = io::load_image(render_default / name);
    const Image scaled = io::load_image(render_scaled / name);
    for (int y = 0; y < full.height(); ++y)
      for (int x = 0; x < full.width(); ++x)
        CHECK(scaled.at(y, x, 3) <= full.at(y, x, 3));
  }
}

TEST_CASE("cli: force-opaque rendering matches the z-buffer oracle") {
  const auto& fx = fixture();
  const fs::path out = fx.root / "scene_for_opaque";
  fs::create_directories(out);
  io::save_descriptors(fx.gt.descriptors, out / "descriptors.bin");
  io::save_scene_bundle(out / "scene.json", fx.gt, HeadConfig::passthrough(8), fx.cloud,
                        "descriptors.bin");

  const fs::path render_dir = fx.root / "render_opaque";
  CHECK(run_cli("render --scene " + q(out / "scene.json") + " --cameras " + q(fx.cameras) +
                " --out " + q(render_dir) + " --levels 0 --ray-len 8 --force-opaque")
            .exit_code == 0);

  // The CLI reads the float32 descriptor file; feed the oracle the same values.
  const DescriptorSet desc_as_loaded = io::load_descriptors(out / "descriptors.bin");
  for (const auto& cam : fx.cams) {
    const ProjectedPoints proj = project(fx.gt.cloud, cam.camera);
    const auto oracle =
        pbtest::zbuffer_oracle(proj, desc_as_loaded, cam.camera.width, cam.camera.height);
    const Image rendered = io::load_image(render_dir / (cam.id + ".png"));
    for (int y = 0; y < rendered.height(); ++y)
      for (int x = 0; x < rendered.width(); ++x) {
        for (int c = 0; c < 3; ++c) {
          const double expected =
              std::lround(std::clamp(oracle.features.at(y, x, c), 0.0, 1.0) * 255.0) / 255.0;
          CHECK(rendered.at(y, x, c) == doctest::Approx(expected).epsilon(1e-12));
        }
        CHECK(rendered.at(y, x, 3) == oracle.alpha.at(y, x, 0));
      }
  }
}

TEST_CASE("cli: compose matches render for a single-entry manifest") {
  const auto& fx = fixture();
  const fs::path out = fx.root / "scene_for_opaque";
  if (!fs::exists(out / "descriptors.bin")) {
    fs::create_directories(out);
    io::save_descriptors(fx.gt.descriptors, out / "descriptors.bin");
    io::save_scene_bundle(out / "scene.json", fx.gt, HeadConfig::passthrough(8), fx.cloud,
                          "descriptors.bin");
  }

  io::SceneManifest manifest;
  manifest.entries.push_back({fx.cloud, out / "descriptors.bin", Eigen::Matrix4d::Identity(), 1.0,
                              1.0, "solo"});
  const fs::path mpath = fx.root / "solo_manifest.json";
  manifest.save(mpath);

  const fs::path render_dir = fx.root / "render_solo";
  const fs::path compose_dir = fx.root / "compose_solo";
  CHECK(run_cli("render --scene " + q(out / "scene.json") + " --cameras " + q(fx.cameras) +
                " --out " + q(render_dir) + " --levels 1 --ray-len 8")
            .exit_code == 0);
  CHECK(run_cli("compose --manifest " + q(mpath) + " --cameras " + q(fx.cameras) + " --out " +
                q(compose_dir) + " --levels 1 --ray-len 8")
            .exit_code == 0);
  for (const auto& cam : fx.cams)
    CHECK(read_bytes(render_dir / (cam.id + ".png")) ==
          read_bytes(compose_dir / (cam.id + ".png")));
}

TEST_CASE("cli: composing disjoint clouds unions their silhouettes") {
  const auto& fx = fixture();
  const fs::path dir = fx.root / "disjoint";
  fs::create_directories(dir);

  auto make_entry = [&](const std::string& name, double x_offset, double raw_alpha) {
    Scene s;
    s.cloud.positions = {{x_offset, 0.0, 1.0}};
    s.descriptors = DescriptorSet(1, 8);
    s.descriptors.row(0)[0] = 0.7;
    s.descriptors.row(0)[7] = raw_alpha;
    io::save_point_cloud(s.cloud, dir / (name + ".ply"));
    io::save_descriptors(s.descriptors, dir / (name + ".bin"));
    return s;
  };
  make_entry("left", -0.25, 1.0);
  make_entry("right", 0.25, 1.0);

  io::SceneManifest both;
  both.entries.push_back({dir / "left.ply", dir / "left.bin", Eigen::Matrix4d::Identity(), 1.0, 1.0, "l"});
  both.entries.push_back({dir / "right.ply", dir / "right.bin", Eigen::Matrix4d::Identity(), 1.0, 1.0, "r"});
  const fs::path mpath = dir / "both.json";
  both.save(mpath);

  io::SceneManifest left_only;
  left_only.entries.push_back(both.entries[0]);
  const fs::path lpath = dir / "left.json";
  left_only.save(lpath);
  io::SceneManifest right_only;
  right_only.entries.push_back(both.entries[1]);
  const fs::path rpath = dir / "right.json";
  right_only.save(rpath);

  const fs::path out_both = dir / "out_both";
  const fs::path out_left = dir / "out_left";
  const fs::path out_right = dir / "out_right";
  for (const auto& [m, o] : {std::pair{mpath, out_both}, {lpath, out_left}, {rpath, out_right}})
    CHECK(run_cli("compose --manifest " + q(m) + " --cameras " + q(fx.cameras) + " --out " + q(o) +
                  " --levels 0 --ray-len 8")
              .exit_code == 0);

  for (const auto& cam : fx.cams) {
    const Image composed = io::load_image(out_both / (cam.id + ".png"));
    const Image left = io::load_image(out_left / (cam.id + ".png"));
    const Image right = io::load_image(out_right / (cam.id + ".png"));
    for (int y = 0; y < composed.height(); ++y)
      for (int x = 0; x < composed.width(); ++x) {
        const double expected = std::max(left.at(y, x, 3), right.at(y, x, 3));
        CHECK(composed.at(y, x, 3) == expected);  // disjoint: union of silhouettes
      }
  }
}

TEST_CASE("cli: composing overlapping clouds blends front to back") {
  const auto& fx = fixture();
  const fs::path dir = fx.root / "overlap";
  fs::create_directories(dir);

  // Two points on the same camera ray at different depths.
  auto save_one = [&](const std::string& name, double z, double color, double raw_alpha) {
    Scene s;
    s.cloud.positions = {{0.0, 0.0, z}};
    s.descriptors = DescriptorSet(1, 8);
    s.descriptors.row(0)[0] = color;
    s.descriptors.row(0)[7] = raw_alpha;
    io::save_point_cloud(s.cloud, dir / (name + ".ply"));
    io::save_descriptors(s.descriptors, dir / (name + ".bin"));
  };
  const double front_raw = 0.6, back_raw = 2.0;
  save_one("near", 1.0, 0.9, front_raw);
  save_one("far", 2.0, 0.4, back_raw);

  io::SceneManifest manifest;
  manifest.entries.push_back({dir / "near.ply", dir / "near.bin", Eigen::Matrix4d::Identity(), 1.0, 1.0, ""});
  manifest.entries.push_back({dir / "far.ply", dir / "far.bin", Eigen::Matrix4d::Identity(), 1.0, 1.0, ""});
  const fs::path mpath = dir / "overlap.json";
  manifest.save(mpath);

  const fs::path out = dir / "out";
  CHECK(run_cli("compose --manifest " + q(mpath) + " --cameras " + q(fx.cameras) + " --out " +
                q(out) + " --levels 0 --ray-len 8")
            .exit_code == 0);

  // Hand oracle at the shared pixel of view v0 (identity pose).
  const double a_near = std::tanh(front_raw);
  const double a_far = std::tanh(back_raw);
  const double color = a_near * 0.9 + a_far * (1.0 - a_near) * 0.4;
  const double alpha = 1.0 - (1.0 - a_near) * (1.0 - a_far);

  // Descriptors pass through a float32 file; quantize the oracle identically.
  const double a_near_f = std::tanh(static_cast<double>(static_cast<float>(front_raw)));
  const double a_far_f = std::tanh(static_cast<double>(static_cast<float>(back_raw)));
  const double color_f =
      a_near_f * static_cast<float>(0.9) + a_far_f * (1.0 - a_near_f) * static_cast<float>(0.4);
  const double alpha_f = 1.0 - (1.0 - a_near_f) * (1.0 - a_far_f);
  CHECK(color_f == doctest::Approx(color).epsilon(1e-6));

  const Image img = io::load_image(out / "v0.png");
  const int px = 8;  // principal point
  CHECK(img.at(px, px, 0) ==
        doctest::Approx(std::lround(std::clamp(color_f, 0.0, 1.0) * 255.0) / 255.0).epsilon(1e-12));
  CHECK(img.at(px, px, 3) ==
        doctest::Approx(std::lround(std::clamp(alpha_f, 0.0, 1.0) * 255.0) / 255.0).epsilon(1e-12));
  (void)alpha;
}

TEST_CASE("cli: gradcheck passes and the tamper hook trips it") {
  const auto ok = run_cli("gradcheck --configs 8 --seed 3");
  CAPTURE(ok.output);
  CHECK(ok.exit_code == 0);
  CHECK(ok.output.find("max relative error") != std::string::npos);

  const auto bad = run_cli("gradcheck --configs 8 --seed 3 --tamper");
  CHECK(bad.exit_code == 3);
}

TEST_CASE("cli: bench reports stable JSON and loose monotonicity") {
  const auto small = run_cli("bench --points 1000 --canvas 64x64 --repeats 1 --json");
  CHECK(small.exit_code == 0);
  const auto line_end = small.output.find('\n');
  const auto j = nlohmann::json::parse(small.output.substr(0, line_end));
  CHECK(j.contains("points"));
  CHECK(j.contains("phases_ms"));
  CHECK(j.at("phases_ms").contains("project"));
  CHECK(j.at("phases_ms").contains("group"));
  CHECK(j.at("phases_ms").contains("sort"));
  CHECK(j.at("phases_ms").contains("blend"));
  CHECK(j.contains("total_ms"));

  const auto big = run_cli("bench --points 1000000 --canvas 512x512 --repeats 1 --json");
  CHECK(big.exit_code == 0);
  const auto jb = nlohmann::json::parse(big.output.substr(0, big.output.find('\n')));
  CHECK(jb.at("total_ms").get<double>() > j.at("total_ms").get<double>());
}

TEST_CASE("cli: data errors exit 2 with a diagnostic") {
  const auto& fx = fixture();
  const auto r = run_cli("render --scene " + q(fx.root / "missing.json") + " --cameras " +
                         q(fx.cameras) + " --out " + q(fx.root / "unused"));
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("render") != std::string::npos);
}
