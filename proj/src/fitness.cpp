#include "evoart/fitness.hpp"

#include <cmath>

#include "evoart/image.hpp"
#include "evoart/rng.hpp"

namespace evoart {

void ViewSpec::validate() const {
  if (name.empty()) throw std::invalid_argument("view name must not be empty");
  camera.validate();
  if (const auto* prompt = std::get_if<TextPrompt>(&target)) {
    if (prompt->text.empty()) throw std::invalid_argument("view " + name + ": prompt must not be empty");
  } else {
    const Film& ref = std::get<ReferenceImage>(target).film;
    if (ref.width != camera.width || ref.height != camera.height)
      throw std::invalid_argument("view " + name + ": reference image size differs from the camera resolution");
  }
}

EmbeddingVector EmbeddingVector::normalized(std::vector<double> values) {
  if (values.empty()) throw ProtocolError("embedding is empty");
  double sum_sq = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) throw ProtocolError("embedding contains a non-finite value");
    sum_sq += v * v;
  }
  if (!(sum_sq > 0.0)) throw ProtocolError("embedding has zero norm");
  const double inv = 1.0 / std::sqrt(sum_sq);
  for (double& v : values) v *= inv;
  EmbeddingVector e;
  e.values_ = std::move(values);
  return e;
}

double cosine_distance(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("embedding dimensions differ");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) dot += a.values()[i] * b.values()[i];
  return 1.0 - dot;
}

double target_image_score(const Film& film, const Film& reference) {
  if (film.width != reference.width || film.height != reference.height)
    throw std::invalid_argument("target_image_score: film sizes differ");
  const Image8 a = tonemap(film);
  const Image8 b = tonemap(reference);
  if (a.rgb.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = (static_cast<double>(a.rgb[i]) - static_cast<double>(b.rgb[i])) / 255.0;
    sum += d * d;
  }
  return sum / static_cast<double>(a.rgb.size());
}

double TargetImageScorer::distance(const ViewSpec& view, const Film& film) const {
  const auto* ref = std::get_if<ReferenceImage>(&view.target);
  if (!ref) throw EvaluationError("view " + view.name + " has no reference image for the target-image scorer");
  return target_image_score(film, ref->film);
}

EmbeddingVector embed_image(const Film& film, const EmbeddingClient& client) {
  return client.embed_png(encode_png(tonemap(film)));
}

EmbeddingScorer::EmbeddingScorer(std::shared_ptr<const EmbeddingClient> client) : client_(std::move(client)) {}

EmbeddingVector EmbeddingScorer::cached(const std::string& key,
                                        const std::function<EmbeddingVector()>& fetch) const {
  std::promise<EmbeddingVector> promise;
  std::shared_future<EmbeddingVector> future;
  bool owner = false;
  {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      future = promise.get_future().share();
      cache_.emplace(key, future);
      owner = true;
    } else {
      future = it->second;
    }
  }
  if (owner) {
    try {
      promise.set_value(fetch());
    } catch (...) {
      {
        // Forget failures so a later call can try again.
        std::lock_guard lock(mutex_);
        cache_.erase(key);
      }
      promise.set_exception(std::current_exception());
    }
  }
  return future.get();
}

EmbeddingVector EmbeddingScorer::text_embedding(const std::string& prompt) const {
  return cached("text:" + prompt, [&] { return client_->embed_text(prompt); });
}

std::size_t EmbeddingScorer::cached_text_count() const {
  std::lock_guard lock(mutex_);
  std::size_t count = 0;
  for (const auto& [key, value] : cache_) count += key.starts_with("text:");
  return count;
}

double EmbeddingScorer::distance(const ViewSpec& view, const Film& film) const {
  EmbeddingVector target;
  if (const auto* prompt = std::get_if<TextPrompt>(&view.target)) {
    target = text_embedding(prompt->text);
  } else {
    const Film& ref = std::get<ReferenceImage>(view.target).film;
    target = cached("image:" + view.name, [&] { return embed_image(ref, *client_); });
  }
  return cosine_distance(embed_image(film, *client_), target);
}

std::uint64_t view_seed(std::uint64_t run_seed, const std::string& view_name) {
  return mix_seed(run_seed, hash_name(view_name));
}

Film render_view(const Scene& scene, const ViewSpec& view, const RenderSettings& settings) {
  RenderSettings per_view = settings;
  per_view.seed = view_seed(settings.seed, view.name);
  return render(scene, view.camera, per_view, 1);
}

FitnessReport evaluate_scene(const Scene& scene, std::span<const ViewSpec> views, const Scorer& scorer,
                             const RenderSettings& settings) {
  if (views.empty()) throw std::invalid_argument("evaluate needs at least one view");
  FitnessReport report;
  report.per_view.reserve(views.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const double d = scorer.distance(views[i], render_view(scene, views[i], settings));
    report.per_view.emplace_back(i, d);
    sum += d;
  }
  report.total = sum / static_cast<double>(views.size());
  return report;
}

FitnessReport evaluate(const Genome& genome, const GenomeConfig& config, std::span<const ViewSpec> views,
                       const Scorer& scorer, const RenderSettings& settings) {
  return evaluate_scene(decode(genome, config), views, scorer, settings);
}

}  // namespace evoart
