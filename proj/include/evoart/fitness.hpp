#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "evoart/genome.hpp"
#include "evoart/render.hpp"

namespace evoart {

// A scorer could not produce a distance (service down, bad target, ...).
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The embedding service answered with something that breaks the wire contract.
class ProtocolError : public EvaluationError {
 public:
  using EvaluationError::EvaluationError;
};

struct TextPrompt {
  std::string text;
};

struct ReferenceImage {
  Film film;
};

using ViewTarget = std::variant<TextPrompt, ReferenceImage>;

struct ViewSpec {
  // Stable identifier; keys the per-view render seed.
  std::string name;
  Camera camera;
  ViewTarget target;

  void validate() const;
};

class EmbeddingVector {
 public:
  EmbeddingVector() = default;

  // Scales `values` to unit length. Throws ProtocolError for empty,
  // non-finite, or zero vectors.
  static EmbeddingVector normalized(std::vector<double> values);

  std::span<const double> values() const { return values_; }
  std::size_t dim() const { return values_.size(); }

  bool operator==(const EmbeddingVector&) const = default;

 private:
  std::vector<double> values_;
};

// 1 - <a, b>. Throws std::invalid_argument on a dimension mismatch.
double cosine_distance(const EmbeddingVector& a, const EmbeddingVector& b);

struct FitnessReport {
  double total = 0.0;
  std::vector<std::pair<std::size_t, double>> per_view;  // (view index, distance)
};

class Scorer {
 public:
  virtual ~Scorer() = default;
  // Distance in [0, 2] between a rendered film and the view's target; lower
  // is better. Must be safe to call from several threads at once.
  virtual double distance(const ViewSpec& view, const Film& film) const = 0;
};

// Mean squared error over tonemapped channels, each scaled to [0,1].
// Throws std::invalid_argument when the films differ in size.
double target_image_score(const Film& film, const Film& reference);

// Offline scorer: every view must carry a ReferenceImage target.
class TargetImageScorer final : public Scorer {
 public:
  double distance(const ViewSpec& view, const Film& film) const override;
};

struct ServiceInfo {
  std::string model;
  std::size_t dim = 0;
};

struct EmbeddingClientOptions {
  std::string base_url = "http://127.0.0.1:8000";
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::seconds timeout{60};
};

// HTTP/JSON client for the embedding service:
//   POST /embed_image {"png_base64": "..."} -> {"embedding": [...], "dim": D}
//   POST /embed_text  {"text": "..."}       -> {"embedding": [...], "dim": D}
//   GET  /health                            -> {"model": "...", "dim": D}
// Transport failures and 503 are retried with exponential backoff. Each
// call opens its own connection, so one client serves many threads.
class EmbeddingClient {
 public:
  explicit EmbeddingClient(EmbeddingClientOptions options);

  ServiceInfo health() const;
  EmbeddingVector embed_png(std::span<const std::uint8_t> png) const;
  EmbeddingVector embed_text(const std::string& prompt) const;

  const EmbeddingClientOptions& options() const { return options_; }

 private:
  std::string request(const std::string& method, const std::string& path, const std::string& body) const;
  EmbeddingVector parse_embedding(const std::string& body) const;

  EmbeddingClientOptions options_;
};

EmbeddingVector embed_image(const Film& film, const EmbeddingClient& client);

// Embedding scorer. Text embeddings are fetched once per distinct prompt and
// kept for the scorer's lifetime; reference images are embedded once per view.
class EmbeddingScorer final : public Scorer {
 public:
  explicit EmbeddingScorer(std::shared_ptr<const EmbeddingClient> client);

  double distance(const ViewSpec& view, const Film& film) const override;

  EmbeddingVector text_embedding(const std::string& prompt) const;
  std::size_t cached_text_count() const;

 private:
  EmbeddingVector cached(const std::string& key, const std::function<EmbeddingVector()>& fetch) const;

  std::shared_ptr<const EmbeddingClient> client_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, std::shared_future<EmbeddingVector>> cache_;
};

std::uint64_t view_seed(std::uint64_t run_seed, const std::string& view_name);

// Renders one view exactly as evaluate() does.
Film render_view(const Scene& scene, const ViewSpec& view, const RenderSettings& settings);

// Decodes the genome, renders every view with its own seed and averages the
// per-view distances.
FitnessReport evaluate(const Genome& genome, const GenomeConfig& config, std::span<const ViewSpec> views,
                       const Scorer& scorer, const RenderSettings& settings);

FitnessReport evaluate_scene(const Scene& scene, std::span<const ViewSpec> views, const Scorer& scorer,
                             const RenderSettings& settings);

}  // namespace evoart
