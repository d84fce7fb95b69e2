#include "evoart/run.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "evoart/cmaes.hpp"
#include "evoart/image.hpp"
#include "evoart/parallel.hpp"

namespace evoart {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointFormat = "evoart-checkpoint/1";
constexpr const char* kTrajectoryHeader =
    "# generation, best_fitness, median_fitness, sigma, min_eigenvalue, max_eigenvalue";

const Vec3 kCubeCenter{0.5, 0.5, 0.5};

// ---- config parsing -------------------------------------------------------

[[noreturn]] void config_fail(const std::string& field, const std::string& message) {
  throw ConfigError(field + ": " + message);
}

const json* find(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

template <class T>
T read(const json& obj, const char* key, const std::string& where, T fallback) {
  const json* j = find(obj, key);
  if (!j) return fallback;
  try {
    return j->get<T>();
  } catch (const json::exception&) {
    config_fail(where + "." + key, "has the wrong type");
  }
}

double read_number(const json& obj, const char* key, const std::string& where, double fallback) {
  const json* j = find(obj, key);
  if (!j) return fallback;
  if (!j->is_number()) config_fail(where + "." + key, "expected a number");
  return j->get<double>();
}

std::uint64_t read_count(const json& obj, const char* key, const std::string& where, std::uint64_t fallback) {
  const json* j = find(obj, key);
  if (!j) return fallback;
  if (!j->is_number_unsigned()) config_fail(where + "." + key, "expected a non-negative integer");
  return j->get<std::uint64_t>();
}

Vec3 read_vec3(const json& obj, const char* key, const std::string& where, Vec3 fallback) {
  const json* j = find(obj, key);
  if (!j) return fallback;
  if (!j->is_array() || j->size() != 3 || !(*j)[0].is_number() || !(*j)[1].is_number() || !(*j)[2].is_number())
    config_fail(where + "." + key, "expected an array of 3 numbers");
  return {(*j)[0].get<double>(), (*j)[1].get<double>(), (*j)[2].get<double>()};
}

Camera preset_camera(const std::string& name, const std::string& where) {
  if (name == "+z") return orbit_camera(0.0, 0.0, 224, 224);
  if (name == "+x") return orbit_camera(90.0, 0.0, 224, 224);
  if (name == "-z") return orbit_camera(180.0, 0.0, 224, 224);
  if (name == "-x") return orbit_camera(270.0, 0.0, 224, 224);
  config_fail(where, "unknown camera preset '" + name + "' (expected +z, +x, -z or -x)");
}

Camera parse_camera(const json& j, const std::string& where) {
  if (j.is_string()) return preset_camera(j.get<std::string>(), where);
  if (!j.is_object()) config_fail(where, "expected a preset name or an object");
  Camera cam = find(j, "preset") ? preset_camera(read<std::string>(j, "preset", where, ""), where + ".preset")
                                 : Camera{};
  cam.position = read_vec3(j, "position", where, cam.position);
  cam.look_at = read_vec3(j, "look_at", where, cam.look_at);
  cam.up = read_vec3(j, "up", where, cam.up);
  cam.vertical_fov = read_number(j, "vertical_fov", where, cam.vertical_fov);
  cam.width = static_cast<int>(read_count(j, "width", where, static_cast<std::uint64_t>(cam.width)));
  cam.height = static_cast<int>(read_count(j, "height", where, static_cast<std::uint64_t>(cam.height)));
  try {
    cam.validate();
  } catch (const std::invalid_argument& e) {
    config_fail(where, e.what());
  }
  return cam;
}

GenomeConfig parse_genome(const json& j) {
  const std::string where = "genome";
  if (!j.is_object()) config_fail(where, "expected an object");
  GenomeConfig g;
  g.triangle_count = read_count(j, "triangles", where, 50);
  if (const json* t = find(j, "transparency")) {
    if (t->is_string() && t->get<std::string>() == "learnable") {
      g.transparency = LearnableTransparency{};
    } else if (t->is_object() && t->contains("fixed") && (*t)["fixed"].is_number()) {
      g.transparency = FixedTransparency{(*t)["fixed"].get<double>()};
    } else {
      config_fail(where + ".transparency", "expected \"learnable\" or {\"fixed\": alpha}");
    }
  }
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    config_fail(where, e.what());
  }
  return g;
}

RenderSettings parse_render(const json& j) {
  const std::string where = "render";
  if (!j.is_object()) config_fail(where, "expected an object");
  RenderSettings r;
  r.samples_per_pixel = static_cast<int>(read_count(j, "spp", where, static_cast<std::uint64_t>(r.samples_per_pixel)));
  r.max_depth = static_cast<int>(read_count(j, "max_depth", where, static_cast<std::uint64_t>(r.max_depth)));
  r.environment_radiance = read_vec3(j, "environment", where, r.environment_radiance);
  r.seed = read_count(j, "seed", where, r.seed);
  try {
    r.validate();
  } catch (const std::invalid_argument& e) {
    config_fail(where, e.what());
  }
  return r;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

ViewSpec parse_view(const json& j, std::size_t index, const RenderSettings& render_settings, const fs::path& base) {
  const std::string where = "views[" + std::to_string(index) + "]";
  if (!j.is_object()) config_fail(where, "expected an object");
  ViewSpec view;
  view.name = read<std::string>(j, "name", where, "view" + std::to_string(index));
  if (view.name.empty()) config_fail(where + ".name", "must not be empty");
  view.camera = find(j, "camera") ? parse_camera(j["camera"], where + ".camera") : Camera{};

  const int targets = (find(j, "prompt") ? 1 : 0) + (find(j, "reference_png") ? 1 : 0) +
                      (find(j, "reference_scene") ? 1 : 0);
  if (targets != 1) config_fail(where, "needs exactly one of prompt, reference_png, reference_scene");

  if (find(j, "prompt")) {
    const auto text = read<std::string>(j, "prompt", where, "");
    if (text.empty()) config_fail(where + ".prompt", "must not be empty");
    view.target = TextPrompt{text};
  } else if (find(j, "reference_png")) {
    const fs::path path = resolve(base, read<std::string>(j, "reference_png", where, ""));
    try {
      view.target = ReferenceImage{film_from_image(read_png(path.string()))};
    } catch (const ImageError& e) {
      config_fail(where + ".reference_png", e.what());
    }
  } else {
    const fs::path path = resolve(base, read<std::string>(j, "reference_scene", where, ""));
    Scene hidden;
    try {
      hidden = load_scene(path.string());
    } catch (const std::exception& e) {
      config_fail(where + ".reference_scene", e.what());
    }
    view.target = ReferenceImage{render_view(hidden, view, render_settings)};
  }
  try {
    view.validate();
  } catch (const std::invalid_argument& e) {
    config_fail(where, e.what());
  }
  return view;
}

// ---- run helpers ----------------------------------------------------------

double median_of(std::vector<double> values) {
  for (double& v : values) {
    if (!std::isfinite(v)) v = std::numeric_limits<double>::infinity();
  }
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& text) {
  std::mt19937_64 rng;
  std::istringstream is(text);
  is >> rng;
  if (!is) throw ConfigError("checkpoint rng state is malformed");
  return rng;
}

Genome to_genome(const Eigen::VectorXd& x) { return Genome{std::vector<double>(x.data(), x.data() + x.size())}; }

class RunDirectory {
 public:
  explicit RunDirectory(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }
  fs::path file(const std::string& name) const { return root_ / name; }
  fs::path checkpoint(std::size_t g) const { return file("checkpoint_" + std::to_string(g) + ".json"); }
  fs::path scene(std::size_t g) const { return file("scene_" + std::to_string(g) + ".json"); }
  fs::path view(std::size_t i, std::size_t g) const {
    return file("view" + std::to_string(i) + "_" + std::to_string(g) + ".png");
  }

  void prepare() const {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec) throw IoError("cannot create output directory " + root_.string() + ": " + ec.message());
    const fs::path probe = file(".write_probe");
    {
      std::ofstream out(probe);
      if (!out) throw IoError("output directory " + root_.string() + " is not writable");
    }
    fs::remove(probe, ec);
  }

 private:
  fs::path root_;
};

class TrajectoryLog {
 public:
  // Keeps lines up to `keep_through` when resuming into an existing log.
  TrajectoryLog(const fs::path& path, std::optional<std::size_t> keep_through) {
    std::vector<std::string> kept;
    if (keep_through) {
      std::ifstream in(path);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (std::stoull(line) <= *keep_through) kept.push_back(line);
      }
    }
    out_.open(path, std::ios::trunc);
    if (!out_) throw IoError("cannot write " + path.string());
    out_ << kTrajectoryHeader << '\n';
    for (const auto& line : kept) out_ << line << '\n';
    out_.flush();
  }

  void append(const std::string& line) {
    out_ << line << '\n';
    out_.flush();
    if (!out_) throw IoError("failed writing trajectory log");
  }

 private:
  std::ofstream out_;
};

void export_best(const RunDirectory& dir, const RunConfig& config, const Scene& scene, std::size_t g) {
  if (config.exports.scene_json) {
    try {
      save_scene(scene, dir.scene(g).string());
    } catch (const std::runtime_error& e) {
      throw IoError(e.what());
    }
  }
  if (config.exports.film_pngs) {
    const auto films = rerender(scene, config.views, config.render);
    for (std::size_t i = 0; i < films.size(); ++i) {
      try {
        write_png(tonemap(films[i]), dir.view(i, g).string());
      } catch (const ImageError& e) {
        throw IoError(e.what());
      }
    }
  }
}

void write_checkpoint(const RunDirectory& dir, const CmaEs& es, const std::mt19937_64& rng, std::size_t g) {
  const json doc = {{"format", kCheckpointFormat},
                    {"generation", g},
                    {"rng", rng_to_string(rng)},
                    {"cma", es.to_json()}};
  write_text_atomic(dir.checkpoint(g), doc.dump());
}

void export_turntable(const RunDirectory& dir, const RunConfig& config, const Scene& scene) {
  const int frames = config.exports.turntable_frames;
  if (frames <= 0) return;
  const Camera& ref = config.views.front().camera;
  for (int k = 0; k < frames; ++k) {
    ViewSpec spin{"turntable" + std::to_string(k),
                  orbit_camera(360.0 * k / frames, config.exports.turntable_elevation_deg, ref.width, ref.height),
                  TextPrompt{"turntable"}};
    RenderSettings settings = config.render;
    settings.seed = view_seed(config.render.seed, spin.name);
    const Film film = render(scene, spin.camera, settings, config.workers);
    try {
      write_png(tonemap(film), dir.file("turntable_" + std::to_string(k) + ".png").string());
    } catch (const ImageError& e) {
      throw IoError(e.what());
    }
  }
}

}  // namespace

// ---- public API -----------------------------------------------------------

void RunConfig::validate() const {
  try {
    genome.validate();
    render.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (views.empty()) throw ConfigError("views: at least one view is required");
  for (std::size_t i = 0; i < views.size(); ++i) {
    try {
      views[i].validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("views[" + std::to_string(i) + "]: " + e.what());
    }
    for (std::size_t k = 0; k < i; ++k) {
      if (views[k].name == views[i].name) throw ConfigError("views: duplicate view name " + views[i].name);
    }
    if (scorer.kind == ScorerKind::TargetImage && !std::holds_alternative<ReferenceImage>(views[i].target))
      throw ConfigError("views[" + std::to_string(i) + "]: the target_image scorer needs a reference image");
  }
  if (cma.generations < 1) throw ConfigError("cma.generations must be at least 1");
  if (cma.population_size < 2) throw ConfigError("cma.population_size must be at least 2");
  if (!(cma.sigma0 > 0.0) || !std::isfinite(cma.sigma0)) throw ConfigError("cma.sigma0 must be positive");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be at least 1");
  if (exports.turntable_frames < 0) throw ConfigError("export.turntable_frames must be non-negative");
}

Camera orbit_camera(double azimuth_deg, double elevation_deg, int width, int height, double distance) {
  const double az = azimuth_deg * std::numbers::pi / 180.0;
  const double el = elevation_deg * std::numbers::pi / 180.0;
  Camera cam;
  cam.position = kCubeCenter + Vec3{std::sin(az) * std::cos(el), std::sin(el), std::cos(az) * std::cos(el)} * distance;
  cam.look_at = kCubeCenter;
  cam.up = {0.0, 1.0, 0.0};
  cam.vertical_fov = kCameraFov;
  cam.width = width;
  cam.height = height;
  return cam;
}

std::vector<Camera> side_cameras(int width, int height) {
  return {orbit_camera(0.0, 0.0, width, height), orbit_camera(90.0, 0.0, width, height),
          orbit_camera(180.0, 0.0, width, height), orbit_camera(270.0, 0.0, width, height)};
}

RunConfig default_run_config(const std::string& prompt) {
  RunConfig config;
  config.genome.triangle_count = 50;
  const auto cams = side_cameras(224, 224);
  for (std::size_t i = 0; i < cams.size(); ++i) {
    config.views.push_back({"camera" + std::to_string(i + 1), cams[i], TextPrompt{prompt}});
  }
  return config;
}

RunConfig parse_run_config(const std::string& json_text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");

  RunConfig config;
  if (const json* g = find(doc, "genome")) config.genome = parse_genome(*g);
  if (const json* r = find(doc, "render")) config.render = parse_render(*r);

  if (const json* s = find(doc, "scorer")) {
    const std::string type = read<std::string>(*s, "type", "scorer", "embedding");
    if (type == "embedding") {
      config.scorer.kind = ScorerKind::Embedding;
      config.scorer.service_url = read<std::string>(*s, "url", "scorer", config.scorer.service_url);
    } else if (type == "target_image") {
      config.scorer.kind = ScorerKind::TargetImage;
    } else {
      config_fail("scorer.type", "expected \"embedding\" or \"target_image\"");
    }
  }

  if (const json* c = find(doc, "cma")) {
    config.cma.population_size = read_count(*c, "population_size", "cma", config.cma.population_size);
    config.cma.generations = read_count(*c, "generations", "cma", config.cma.generations);
    config.cma.sigma0 = read_number(*c, "sigma0", "cma", config.cma.sigma0);
    config.cma.seed = read_count(*c, "seed", "cma", config.cma.seed);
  }

  const json* views = find(doc, "views");
  if (!views || !views->is_array()) config_fail("views", "expected an array of views");
  for (std::size_t i = 0; i < views->size(); ++i) {
    config.views.push_back(parse_view((*views)[i], i, config.render, base_dir));
  }

  if (const json* out = find(doc, "output_dir")) {
    if (!out->is_string()) config_fail("output_dir", "expected a string");
    config.output_dir = resolve(base_dir, out->get<std::string>());
  }
  config.checkpoint_every = read_count(doc, "checkpoint_every", "config", config.checkpoint_every);
  config.workers = static_cast<unsigned>(read_count(doc, "workers", "config", config.workers));

  if (const json* e = find(doc, "export")) {
    config.exports.film_pngs = read<bool>(*e, "film_pngs", "export", config.exports.film_pngs);
    config.exports.scene_json = read<bool>(*e, "scene_json", "export", config.exports.scene_json);
    config.exports.turntable_frames =
        static_cast<int>(read_count(*e, "turntable_frames", "export", config.exports.turntable_frames));
    config.exports.turntable_elevation_deg =
        read_number(*e, "turntable_elevation", "export", config.exports.turntable_elevation_deg);
  }

  config.validate();
  return config;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(buffer.str(), path.parent_path());
}

std::unique_ptr<Scorer> make_scorer(const ScorerConfig& config) {
  if (config.kind == ScorerKind::TargetImage) return std::make_unique<TargetImageScorer>();
  auto client = std::make_shared<EmbeddingClient>(EmbeddingClientOptions{config.service_url});
  client->health();  // fail at startup rather than mid-run
  return std::make_unique<EmbeddingScorer>(std::move(client));
}

std::vector<Film> rerender(const Scene& scene, std::span<const ViewSpec> views, const RenderSettings& settings) {
  std::vector<Film> films;
  films.reserve(views.size());
  for (const ViewSpec& view : views) films.push_back(render_view(scene, view, settings));
  return films;
}

std::string trajectory_line(std::size_t generation, double best, double median, double sigma, double min_eig,
                            double max_eig) {
  char buffer[256];
  std::snprintf(buffer, sizeof buffer, "%zu, %.17g, %.17g, %.17g, %.17g, %.17g", generation, best, median, sigma,
                min_eig, max_eig);
  return buffer;
}

RunSummary run(const RunConfig& config, const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  const RunDirectory dir(config.output_dir);
  dir.prepare();

  std::shared_ptr<const Scorer> scorer = options.scorer;
  if (!scorer) {
    try {
      scorer = make_scorer(config.scorer);
    } catch (const EvaluationError& e) {
      throw ScorerFailure(std::string("embedding service unavailable: ") + e.what());
    }
  }

  const std::size_t dim = genome_dim(config.genome);
  std::mt19937_64 rng(config.cma.seed);
  std::optional<CmaEs> es;
  std::size_t generation = 0;

  if (options.resume) {
    std::ifstream in(*options.resume);
    if (!in) throw IoError("cannot open checkpoint " + options.resume->string());
    json doc;
    try {
      doc = json::parse(in);
      if (doc.at("format").get<std::string>() != kCheckpointFormat) throw ConfigError("unknown checkpoint format");
      es.emplace(CmaEs::from_json(doc.at("cma")));
      rng = rng_from_string(doc.at("rng").get<std::string>());
      generation = doc.at("generation").get<std::size_t>();
    } catch (const json::exception& e) {
      throw ConfigError("malformed checkpoint " + options.resume->string() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError("malformed checkpoint " + options.resume->string() + ": " + e.what());
    }
    if (es->config().dimension != dim || es->config().population_size != config.cma.population_size)
      throw ConfigError("checkpoint does not match the configured genome size or population");
  } else {
    es.emplace(CmaConfig::standard(dim, config.cma.population_size, config.cma.sigma0), Eigen::VectorXd::Zero(dim));
  }

  TrajectoryLog log(dir.file("trajectory.log"), options.resume ? std::optional<std::size_t>(generation) : std::nullopt);

  RunSummary summary;
  auto finish = [&](bool completed) {
    summary.generations = generation;
    summary.completed = completed;
    if (es->best()) {
      summary.best_fitness = es->best()->fitness;
      summary.best_scene = decode(to_genome(es->best()->x), config.genome);
    }
    summary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return summary;
  };

  const std::size_t lambda = config.cma.population_size;
  while (generation < config.cma.generations) {
    const std::mt19937_64 rng_before = rng;
    const auto candidates = es->ask(rng);
    std::vector<double> fitness(lambda);
    try {
      parallel_for(lambda, config.workers, [&](std::size_t k) {
        fitness[k] = evaluate(to_genome(candidates[k]), config.genome, config.views, *scorer, config.render).total;
      });
    } catch (const EvaluationError& e) {
      write_checkpoint(dir, *es, rng_before, generation);
      throw ScorerFailure("scorer failed in generation " + std::to_string(generation + 1) + ": " + e.what() +
                          " (checkpoint_" + std::to_string(generation) + ".json written)");
    }

    es->tell(candidates, fitness);
    ++generation;

    const CmaState& s = es->state();
    const double best = es->best() ? es->best()->fitness : std::numeric_limits<double>::infinity();
    log.append(trajectory_line(generation, best, median_of(fitness), s.sigma, s.min_eigenvalue(), s.max_eigenvalue()));
    if (options.verbose) {
      std::cerr << "generation " << generation << "/" << config.cma.generations << "  best " << best << "  sigma "
                << s.sigma << '\n';
    }

    const bool stopping =
        options.stop_after && generation >= *options.stop_after && generation < config.cma.generations;
    if (stopping || generation % config.checkpoint_every == 0 || generation == config.cma.generations) {
      write_checkpoint(dir, *es, rng, generation);
      if (es->best()) export_best(dir, config, decode(to_genome(es->best()->x), config.genome), generation);
    }
    if (stopping) return finish(false);
  }

  finish(true);
  export_turntable(dir, config, summary.best_scene);
  const json report = {{"best_fitness", summary.best_fitness}, {"generations", summary.generations}};
  write_text_atomic(dir.file("summary.json"), report.dump(2) + "\n");
  return summary;
}

}  // namespace evoart
