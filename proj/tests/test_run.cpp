#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "evoart/image.hpp"
#include "evoart/run.hpp"

using namespace evoart;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("evoart_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::vector<std::string> log_lines(const fs::path& p) {
  std::vector<std::string> lines;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

Scene hidden_scene() {
  Scene s;
  s.triangles.push_back({{0.1, 0.1, 0.5}, {0.9, 0.2, 0.5}, {0.5, 0.9, 0.5}, {0.9, 0.3, 0.2}, 1.0});
  s.triangles.push_back({{0.2, 0.7, 0.6}, {0.6, 0.1, 0.4}, {0.8, 0.8, 0.7}, {0.1, 0.4, 0.9}, 0.6});
  return s;
}

RunConfig tiny_config(const fs::path& out) {
  RunConfig c;
  c.genome = {3, LearnableTransparency{}};
  c.render.samples_per_pixel = 2;
  c.render.max_depth = 3;
  c.render.seed = 4;
  ViewSpec view{"front", orbit_camera(0, 0, 16, 16), TextPrompt{"unused"}};
  view.target = ReferenceImage{render_view(hidden_scene(), view, c.render)};
  c.views.push_back(view);
  c.scorer.kind = ScorerKind::TargetImage;
  c.cma = {6, 6, 1.0, 11};
  c.output_dir = out;
  c.checkpoint_every = 2;
  c.workers = 1;
  return c;
}

// Fails every call after the first `budget` ones.
class FlakyScorer final : public Scorer {
 public:
  explicit FlakyScorer(int budget) : remaining_(budget) {}
  double distance(const ViewSpec& view, const Film& film) const override {
    if (remaining_.fetch_sub(1) <= 0) throw EvaluationError("service went away");
    return inner_.distance(view, film);
  }

 private:
  mutable std::atomic<int> remaining_;
  TargetImageScorer inner_;
};

const char* kValidConfig = R"({
  "genome": {"triangles": 4, "transparency": {"fixed": 0.5}},
  "render": {"spp": 2, "max_depth": 3, "environment": [0.5, 0.5, 1.0], "seed": 3},
  "scorer": {"type": "embedding", "url": "http://127.0.0.1:9"},
  "cma": {"population_size": 10, "generations": 20, "sigma0": 0.5, "seed": 8},
  "views": [
    {"name": "a", "camera": "+x", "prompt": "a vivid, colorful bird"},
    {"name": "b", "camera": {"preset": "-z", "width": 32, "height": 24}, "prompt": "an annoyed cat"}
  ],
  "output_dir": "runs/x",
  "checkpoint_every": 5,
  "workers": 2,
  "export": {"film_pngs": false, "turntable_frames": 3}
})";

}  // namespace

TEST_SUITE("run") {
  TEST_CASE("config parsing") {
    const RunConfig c = parse_run_config(kValidConfig, "/base");
    CHECK(c.genome.triangle_count == 4);
    CHECK_FALSE(c.genome.learnable_alpha());
    CHECK(c.render.samples_per_pixel == 2);
    CHECK(c.render.environment_radiance == Vec3{0.5, 0.5, 1.0});
    CHECK(c.scorer.kind == ScorerKind::Embedding);
    CHECK(c.scorer.service_url == "http://127.0.0.1:9");
    CHECK(c.cma.population_size == 10);
    CHECK(c.cma.sigma0 == 0.5);
    REQUIRE(c.views.size() == 2);
    CHECK(c.views[0].camera.position.x == doctest::Approx(0.5 + kCameraDistance));
    CHECK(c.views[1].camera.width == 32);
    CHECK(c.views[1].camera.height == 24);
    CHECK(c.views[1].camera.position.z == doctest::Approx(0.5 - kCameraDistance));
    CHECK(std::get<TextPrompt>(c.views[1].target).text == "an annoyed cat");
    CHECK(c.output_dir == fs::path("/base/runs/x"));
    CHECK(c.checkpoint_every == 5);
    CHECK(c.workers == 2);
    CHECK_FALSE(c.exports.film_pngs);
    CHECK(c.exports.turntable_frames == 3);
  }

  TEST_CASE("config errors name the offending field") {
    auto error_of = [](const std::string& text) -> std::string {
      try {
        parse_run_config(text, ".");
      } catch (const ConfigError& e) {
        return e.what();
      }
      return "";
    };
    CHECK(error_of("{").find("valid JSON") != std::string::npos);
    CHECK(error_of("[]").find("object") != std::string::npos);
    CHECK(error_of("{}").find("views") != std::string::npos);
    CHECK(error_of(R"({"views": [{"prompt": "x", "reference_png": "y.png"}]})").find("views[0]") !=
          std::string::npos);
    CHECK(error_of(R"({"views": [{"camera": "+y", "prompt": "x"}]})").find("views[0].camera") != std::string::npos);
    CHECK(error_of(R"({"views": [{"prompt": ""}]})").find("views[0].prompt") != std::string::npos);
    CHECK(error_of(R"({"views": [{"reference_png": "missing.png"}]})").find("views[0].reference_png") !=
          std::string::npos);
    CHECK(error_of(R"({"views": [{"reference_scene": "missing.json"}]})").find("views[0].reference_scene") !=
          std::string::npos);
    CHECK(error_of(R"({"genome": {"triangles": 0}, "views": [{"prompt": "x"}]})").find("genome") !=
          std::string::npos);
    CHECK(error_of(R"({"genome": {"transparency": "opaque"}, "views": [{"prompt": "x"}]})")
              .find("genome.transparency") != std::string::npos);
    CHECK(error_of(R"({"render": {"spp": -1}, "views": [{"prompt": "x"}]})").find("render.spp") !=
          std::string::npos);
    CHECK(error_of(R"({"cma": {"sigma0": "big"}, "views": [{"prompt": "x"}]})").find("cma.sigma0") !=
          std::string::npos);
    CHECK(error_of(R"({"scorer": {"type": "target_image"}, "views": [{"prompt": "x"}]})")
              .find("reference image") != std::string::npos);
    CHECK(error_of(R"({"views": [{"name": "a", "prompt": "x"}, {"name": "a", "prompt": "y"}]})")
              .find("duplicate") != std::string::npos);
    CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
  }

  TEST_CASE("reference targets load relative to the config file") {
    TempDir dir("refs");
    save_scene(hidden_scene(), (dir / "hidden.json").string());
    RenderSettings rs;
    rs.samples_per_pixel = 2;
    const ViewSpec probe{"v", orbit_camera(0, 0, 8, 8), TextPrompt{"x"}};
    write_png(tonemap(render_view(hidden_scene(), probe, rs)), (dir / "ref.png").string());
    spit(dir / "cfg.json", R"({
      "render": {"spp": 2},
      "scorer": {"type": "target_image"},
      "views": [
        {"name": "v", "camera": {"preset": "+z", "width": 8, "height": 8}, "reference_scene": "hidden.json"},
        {"name": "w", "camera": {"preset": "+z", "width": 8, "height": 8}, "reference_png": "ref.png"}
      ]
    })");
    const RunConfig c = load_run_config(dir / "cfg.json");
    const Film& from_scene = std::get<ReferenceImage>(c.views[0].target).film;
    CHECK(from_scene == render_view(hidden_scene(), probe, rs));
    const Film& from_png = std::get<ReferenceImage>(c.views[1].target).film;
    CHECK(tonemap(from_png) == tonemap(from_scene));
    CHECK(c.output_dir == fs::path("out"));
  }

  TEST_CASE("default configuration") {
    const RunConfig c = default_run_config("a bird");
    CHECK(genome_dim(c.genome) == 650);
    CHECK(c.cma.population_size == 128);
    CHECK(c.cma.generations == 1200);
    REQUIRE(c.views.size() == 4);
    CHECK(c.views[0].name == "camera1");
    CHECK(c.views[0].camera.width == 224);
    CHECK_NOTHROW(c.validate());
    const auto cams = side_cameras(8, 8);
    CHECK(cams[0].position.z > 2.0);
    CHECK(cams[1].position.x > 2.0);
    CHECK(cams[2].position.z < -1.0);
    CHECK(cams[3].position.x < -1.0);
  }

  TEST_CASE("trajectory line format") {
    CHECK(trajectory_line(3, 0.5, 0.75, 0.1, 1e-3, 2.0) ==
          "3, 0.5, 0.75, 0.10000000000000001, 0.001, 2");
  }

  TEST_CASE("smoke run writes every artifact") {
    TempDir dir("smoke");
    RunConfig c = tiny_config(dir.path());
    c.cma.generations = 3;
    c.exports.turntable_frames = 2;
    const RunSummary s = run(c);
    CHECK(s.completed);
    CHECK(s.generations == 3);
    CHECK(std::isfinite(s.best_fitness));
    CHECK(s.best_scene.triangles.size() == 3);
    for (const char* name : {"trajectory.log", "checkpoint_2.json", "checkpoint_3.json", "scene_2.json",
                             "scene_3.json", "view0_2.png", "view0_3.png", "turntable_0.png", "turntable_1.png",
                             "summary.json"}) {
      CHECK_MESSAGE(fs::exists(dir / name), name);
    }
    CHECK_FALSE(fs::exists(dir / "checkpoint_1.json"));
    const auto lines = log_lines(dir / "trajectory.log");
    REQUIRE(lines.size() == 4);
    CHECK(lines[0][0] == '#');
    CHECK(lines[1].starts_with("1, "));
    CHECK(lines[3].starts_with("3, "));
    CHECK(slurp(dir / "summary.json").find("best_fitness") != std::string::npos);
  }

  TEST_CASE("runs are reproducible and independent of worker count") {
    TempDir a("repro_a"), b("repro_b"), c("repro_c");
    RunConfig ca = tiny_config(a.path());
    RunConfig cb = tiny_config(b.path());
    cb.workers = 3;
    RunConfig cc = tiny_config(c.path());
    cc.cma.seed = 12;
    run(ca);
    run(cb);
    run(cc);
    CHECK(slurp(a / "trajectory.log") == slurp(b / "trajectory.log"));
    CHECK(slurp(a / "checkpoint_6.json") == slurp(b / "checkpoint_6.json"));
    CHECK(slurp(a / "trajectory.log") != slurp(c / "trajectory.log"));
  }

  TEST_CASE("trajectory invariants") {
    TempDir dir("traj");
    RunConfig c = tiny_config(dir.path());
    c.cma.generations = 12;
    run(c);
    double prev_best = INFINITY;
    std::size_t g = 0;
    for (const auto& line : log_lines(dir / "trajectory.log")) {
      if (line[0] == '#') continue;
      std::istringstream in(line);
      std::size_t gen;
      double best, median, sigma, lo, hi;
      char comma;
      in >> gen >> comma >> best >> comma >> median >> comma >> sigma >> comma >> lo >> comma >> hi;
      REQUIRE(in);
      CHECK(gen == ++g);
      CHECK(best <= prev_best);
      CHECK(median >= best);
      CHECK(sigma > 0.0);
      CHECK(lo > 0.0);
      CHECK(lo <= hi);
      prev_best = best;
    }
    CHECK(g == 12);
  }

  TEST_CASE("resuming reproduces the uninterrupted run") {
    TempDir full("resume_full"), part("resume_part");
    run(tiny_config(full.path()));

    RunOptions stop;
    stop.stop_after = 3;
    const RunSummary first = run(tiny_config(part.path()), stop);
    CHECK_FALSE(first.completed);
    CHECK(first.generations == 3);
    REQUIRE(fs::exists(part / "checkpoint_3.json"));

    RunOptions resume;
    resume.resume = part / "checkpoint_3.json";
    const RunSummary second = run(tiny_config(part.path()), resume);
    CHECK(second.completed);
    CHECK(slurp(full / "trajectory.log") == slurp(part / "trajectory.log"));
    CHECK(slurp(full / "checkpoint_6.json") == slurp(part / "checkpoint_6.json"));
  }

  TEST_CASE("resume rejects mismatched or malformed checkpoints") {
    TempDir dir("resume_bad");
    run(tiny_config(dir.path()));
    RunConfig other = tiny_config(dir.path());
    other.genome.triangle_count = 4;
    RunOptions opts;
    opts.resume = dir / "checkpoint_2.json";
    CHECK_THROWS_AS(run(other, opts), ConfigError);

    spit(dir / "broken.json", "{\"format\": 1}");
    opts.resume = dir / "broken.json";
    CHECK_THROWS_AS(run(tiny_config(dir.path()), opts), ConfigError);
    opts.resume = dir / "absent.json";
    CHECK_THROWS_AS(run(tiny_config(dir.path()), opts), IoError);
  }

  TEST_CASE("exported views re-render bit-identically from the saved scene") {
    TempDir dir("rerender");
    const RunConfig c = tiny_config(dir.path());
    run(c);
    const Scene scene = load_scene((dir / "scene_4.json").string());
    const auto films = rerender(scene, c.views, c.render);
    CHECK(tonemap(films[0]) == read_png((dir / "view0_4.png").string()));
  }

  TEST_CASE("scorer failure checkpoints the last completed generation") {
    TempDir full("fail_full"), dir("fail");
    run(tiny_config(full.path()));

    RunOptions opts;
    // Six candidates, one view: generations 1 and 2 succeed, 3 fails.
    opts.scorer = std::make_shared<FlakyScorer>(14);
    CHECK_THROWS_AS(run(tiny_config(dir.path()), opts), ScorerFailure);
    REQUIRE(fs::exists(dir / "checkpoint_2.json"));
    CHECK_FALSE(fs::exists(dir / "checkpoint_3.json"));

    RunOptions resume;
    resume.resume = dir / "checkpoint_2.json";
    run(tiny_config(dir.path()), resume);
    CHECK(slurp(full / "trajectory.log") == slurp(dir / "trajectory.log"));
  }

  TEST_CASE("unreachable embedding service is a scorer failure") {
    TempDir dir("noservice");
    RunConfig c = tiny_config(dir.path());
    c.scorer = {ScorerKind::Embedding, "http://127.0.0.1:1"};
    c.views[0].target = TextPrompt{"a bird"};
    CHECK_THROWS_AS(run(c), ScorerFailure);
  }

  TEST_CASE("unwritable output directory is an I/O error") {
    TempDir dir("io");
    spit(dir / "file", "x");
    CHECK_THROWS_AS(run(tiny_config(dir / "file")), IoError);
  }

  TEST_CASE("rerender: more samples reduce per-pixel variance") {
    const ViewSpec view{"v", orbit_camera(0, 0, 16, 16), TextPrompt{"x"}};
    auto pixel_variance = [&](int spp) {
      constexpr int kSeeds = 24;
      std::vector<Film> films;
      for (int s = 0; s < kSeeds; ++s) {
        RenderSettings rs;
        rs.samples_per_pixel = spp;
        rs.max_depth = 4;
        rs.seed = static_cast<std::uint64_t>(s);
        films.push_back(rerender(hidden_scene(), std::span(&view, 1), rs)[0]);
      }
      double total = 0.0;
      const std::size_t n = films[0].pixels.size();
      for (std::size_t p = 0; p < n; ++p) {
        double mean = 0.0, sq = 0.0;
        for (const Film& f : films) mean += f.pixels[p].x;
        mean /= kSeeds;
        for (const Film& f : films) sq += (f.pixels[p].x - mean) * (f.pixels[p].x - mean);
        total += sq / (kSeeds - 1);
      }
      return total / static_cast<double>(n);
    };
    const double ratio = pixel_variance(4) / pixel_variance(16);
    CHECK(ratio > 3.0);
    CHECK(ratio < 5.3);
  }

  TEST_CASE("rerender: empty scene is pure environment") {
    RenderSettings rs;
    rs.environment_radiance = {0.25, 0.5, 1.0};
    const ViewSpec view{"v", orbit_camera(0, 0, 8, 8), TextPrompt{"x"}};
    const auto films = rerender(Scene{}, std::span(&view, 1), rs);
    for (const Rgb& p : films[0].pixels) CHECK(p == rs.environment_radiance);
  }
}

TEST_SUITE("run") {
  TEST_CASE("shipped presets parse") {
    const fs::path dir = EVOART_CONFIG_DIR;
    const RunConfig full = load_run_config(dir / "full_default.json");
    CHECK(genome_dim(full.genome) == 650);
    CHECK(full.cma.population_size == 128);
    CHECK(full.views.size() == 4);

    const RunConfig bird = load_run_config(dir / "desk_bird.json");
    CHECK(bird.genome.triangle_count == 25);
    CHECK(bird.cma.population_size == 16);
    CHECK(bird.cma.generations == 150);
    CHECK(bird.views[0].camera.width == 128);

    const RunConfig two = load_run_config(dir / "two_prompts.json");
    CHECK(std::get<TextPrompt>(two.views[0].target).text == "Walt Disney World");
    CHECK(std::get<TextPrompt>(two.views[1].target).text == "an annoyed cat");
    CHECK(std::get<TextPrompt>(two.views[2].target).text == "Walt Disney World");
    CHECK(std::get<TextPrompt>(two.views[3].target).text == "an annoyed cat");

    const RunConfig offline = load_run_config(dir / "offline_target.json");
    CHECK(offline.scorer.kind == ScorerKind::TargetImage);
    CHECK(std::holds_alternative<ReferenceImage>(offline.views[0].target));
  }
}
