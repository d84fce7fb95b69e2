#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "evoart/fitness.hpp"
#include "evoart/image.hpp"

namespace evoart {

namespace {

using nlohmann::json;

json parse_body(const std::string& body) {
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("embedding service returned invalid JSON: ") + e.what());
  }
}

}  // namespace

EmbeddingClient::EmbeddingClient(EmbeddingClientOptions options) : options_(std::move(options)) {
  if (options_.max_retries < 0) throw std::invalid_argument("max_retries must be non-negative");
}

std::string EmbeddingClient::request(const std::string& method, const std::string& path,
                                     const std::string& body) const {
  std::string last_error;
  auto backoff = options_.initial_backoff;
  for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    httplib::Client client(options_.base_url);
    client.set_connection_timeout(options_.timeout);
    client.set_read_timeout(options_.timeout);
    client.set_write_timeout(options_.timeout);
    const auto res = method == "GET" ? client.Get(path) : client.Post(path, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 200) return res->body;
    if (res->status == 503) {
      last_error = "service saturated (503)";
      continue;
    }
    if (res->status == 400) throw ProtocolError("embedding service rejected " + path + " (400): " + res->body);
    throw EvaluationError("embedding service failed on " + path + " (" + std::to_string(res->status) +
                          "): " + res->body);
  }
  throw EvaluationError("embedding service at " + options_.base_url + " unreachable after " +
                        std::to_string(options_.max_retries + 1) + " attempts (" + last_error + ")");
}

EmbeddingVector EmbeddingClient::parse_embedding(const std::string& body) const {
  const json doc = parse_body(body);
  if (!doc.is_object() || !doc.contains("embedding") || !doc["embedding"].is_array())
    throw ProtocolError("response lacks an embedding array");
  std::vector<double> values;
  values.reserve(doc["embedding"].size());
  for (const json& v : doc["embedding"]) {
    if (!v.is_number()) throw ProtocolError("embedding entries must be numbers");
    values.push_back(v.get<double>());
  }
  if (doc.contains("dim")) {
    if (!doc["dim"].is_number_integer() || doc["dim"].get<std::size_t>() != values.size())
      throw ProtocolError("declared dim does not match the embedding length");
  }
  return EmbeddingVector::normalized(std::move(values));
}

ServiceInfo EmbeddingClient::health() const {
  const json doc = parse_body(request("GET", "/health", ""));
  if (!doc.is_object() || !doc.contains("dim") || !doc["dim"].is_number_integer())
    throw ProtocolError("health response lacks an integer dim");
  ServiceInfo info;
  info.dim = doc["dim"].get<std::size_t>();
  if (doc.contains("model") && doc["model"].is_string()) info.model = doc["model"].get<std::string>();
  return info;
}

EmbeddingVector EmbeddingClient::embed_png(std::span<const std::uint8_t> png) const {
  const std::string raw(reinterpret_cast<const char*>(png.data()), png.size());
  const json body = {{"png_base64", httplib::detail::base64_encode(raw)}};
  return parse_embedding(request("POST", "/embed_image", body.dump()));
}

EmbeddingVector EmbeddingClient::embed_text(const std::string& prompt) const {
  if (prompt.empty()) throw std::invalid_argument("prompt must not be empty");
  const json body = {{"text", prompt}};
  return parse_embedding(request("POST", "/embed_text", body.dump()));
}

}  // namespace evoart
