#include "evoart/cmaes.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

namespace evoart {

CmaConfig CmaConfig::standard(std::size_t dimension, std::size_t population_size, double initial_step_size) {
  CmaConfig c;
  c.dimension = dimension;
  c.population_size = population_size;
  c.parent_count = population_size / 2;
  c.initial_step_size = initial_step_size;

  const double n = static_cast<double>(dimension);
  const double half = (static_cast<double>(population_size) + 1.0) / 2.0;
  c.weights.resize(c.parent_count);
  for (std::size_t i = 0; i < c.parent_count; ++i) c.weights[i] = std::log(half) - std::log(i + 1.0);
  const double sum = std::accumulate(c.weights.begin(), c.weights.end(), 0.0);
  double sum_sq = 0.0;
  for (double& w : c.weights) {
    w /= sum;
    sum_sq += w * w;
  }
  c.mu_eff = 1.0 / sum_sq;

  c.c_sigma = (c.mu_eff + 2.0) / (n + c.mu_eff + 5.0);
  c.d_sigma = 1.0 + 2.0 * std::max(0.0, std::sqrt((c.mu_eff - 1.0) / (n + 1.0)) - 1.0) + c.c_sigma;
  c.c_c = (4.0 + c.mu_eff / n) / (n + 4.0 + 2.0 * c.mu_eff / n);
  c.c_1 = 2.0 / ((n + 1.3) * (n + 1.3) + c.mu_eff);
  c.c_mu = std::min(1.0 - c.c_1, 2.0 * (c.mu_eff - 2.0 + 1.0 / c.mu_eff) / ((n + 2.0) * (n + 2.0) + c.mu_eff));
  c.chi_n = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
  return c;
}

std::size_t CmaConfig::default_population_size(std::size_t dimension) {
  return 4 + static_cast<std::size_t>(std::floor(3.0 * std::log(static_cast<double>(dimension))));
}

std::size_t CmaConfig::eigen_interval() const {
  const double raw = 1.0 / (10.0 * static_cast<double>(dimension) * (c_1 + c_mu));
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(raw)));
}

void CmaConfig::validate() const {
  if (dimension == 0) throw std::invalid_argument("CMA-ES dimension must be positive");
  if (population_size < 2) throw std::invalid_argument("population size must be at least 2");
  if (parent_count == 0 || parent_count >= population_size)
    throw std::invalid_argument("parent count must lie in [1, population size)");
  if (!(initial_step_size > 0.0) || !std::isfinite(initial_step_size))
    throw std::invalid_argument("initial step size must be positive and finite");
  if (weights.size() != parent_count) throw std::invalid_argument("need one weight per parent");
  double sum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] > 0.0)) throw std::invalid_argument("recombination weights must be positive");
    if (i > 0 && weights[i] > weights[i - 1]) throw std::invalid_argument("recombination weights must decrease");
    sum += weights[i];
  }
  if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("recombination weights must sum to 1");
  if (c_1 + c_mu > 1.0) throw std::invalid_argument("c_1 + c_mu must not exceed 1");
  if (!(c_sigma > 0.0 && c_sigma <= 1.0) || !(c_c > 0.0 && c_c <= 1.0))
    throw std::invalid_argument("c_sigma and c_c must lie in (0,1]");
}

CmaEs::CmaEs(const CmaConfig& config, Eigen::VectorXd initial_mean) : config_(config) {
  config_.validate();
  if (static_cast<std::size_t>(initial_mean.size()) != config_.dimension)
    throw std::invalid_argument("initial mean has the wrong dimension");
  if (!initial_mean.allFinite()) throw std::invalid_argument("initial mean must be finite");

  const auto n = static_cast<Eigen::Index>(config_.dimension);
  state_.mean = std::move(initial_mean);
  state_.sigma = config_.initial_step_size;
  state_.covariance = Eigen::MatrixXd::Identity(n, n);
  state_.path_sigma = Eigen::VectorXd::Zero(n);
  state_.path_c = Eigen::VectorXd::Zero(n);
  state_.basis = Eigen::MatrixXd::Identity(n, n);
  state_.axis_lengths = Eigen::VectorXd::Ones(n);
}

std::vector<Eigen::VectorXd> CmaEs::ask(std::mt19937_64& rng) const {
  if (!state_.basis.allFinite() || !state_.axis_lengths.allFinite() || !std::isfinite(state_.sigma))
    throw CmaStateError("CMA-ES state is not finite");
  const auto n = static_cast<Eigen::Index>(config_.dimension);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::VectorXd> out;
  out.reserve(config_.population_size);
  Eigen::VectorXd z(n);
  for (std::size_t k = 0; k < config_.population_size; ++k) {
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
    out.push_back(state_.mean + state_.sigma * (state_.basis * state_.axis_lengths.cwiseProduct(z)));
  }
  return out;
}

bool CmaEs::tell(std::span<const Eigen::VectorXd> candidates, std::span<const double> fitness) {
  const std::size_t lambda = config_.population_size;
  if (candidates.size() != lambda || fitness.size() != lambda)
    throw std::invalid_argument("tell() needs exactly lambda candidates and fitness values");
  const auto n = static_cast<Eigen::Index>(config_.dimension);
  for (const auto& x : candidates) {
    if (x.size() != n) throw std::invalid_argument("candidate has the wrong dimension");
  }

  std::vector<double> f(fitness.begin(), fitness.end());
  bool any_finite = false;
  for (double& v : f) {
    if (std::isfinite(v)) {
      any_finite = true;
    } else {
      v = std::numeric_limits<double>::infinity();
    }
  }
  if (!any_finite) {
    std::cerr << "warning: CMA-ES generation " << state_.generation + 1
              << " has no finite fitness; update skipped\n";
    return false;
  }

  std::vector<std::size_t> order(lambda);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&f](std::size_t a, std::size_t b) { return f[a] < f[b]; });

  if (!state_.best || f[order[0]] < state_.best->fitness) state_.best = ScoredPoint{candidates[order[0]], f[order[0]]};

  const CmaConfig& c = config_;
  const std::size_t mu = c.parent_count;
  const Eigen::VectorXd old_mean = state_.mean;
  const double sigma = state_.sigma;

  Eigen::MatrixXd steps(n, static_cast<Eigen::Index>(mu));
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
  for (std::size_t i = 0; i < mu; ++i) {
    const Eigen::VectorXd& x = candidates[order[i]];
    mean += c.weights[i] * x;
    steps.col(static_cast<Eigen::Index>(i)) = (x - old_mean) / sigma;
  }
  state_.mean = mean;
  const Eigen::VectorXd y_w = (mean - old_mean) / sigma;

  // C^{-1/2} y_w via the cached eigensystem.
  const Eigen::VectorXd whitened =
      state_.basis * (state_.basis.transpose() * y_w).cwiseQuotient(state_.axis_lengths);
  state_.path_sigma = (1.0 - c.c_sigma) * state_.path_sigma +
                      std::sqrt(c.c_sigma * (2.0 - c.c_sigma) * c.mu_eff) * whitened;

  const double gen = static_cast<double>(state_.generation + 1);
  const double ps_norm = state_.path_sigma.norm();
  const double h_sigma =
      ps_norm / std::sqrt(1.0 - std::pow(1.0 - c.c_sigma, 2.0 * gen)) / c.chi_n <
              1.4 + 2.0 / (static_cast<double>(n) + 1.0)
          ? 1.0
          : 0.0;

  state_.path_c = (1.0 - c.c_c) * state_.path_c + h_sigma * std::sqrt(c.c_c * (2.0 - c.c_c) * c.mu_eff) * y_w;

  const Eigen::Map<const Eigen::VectorXd> w(c.weights.data(), static_cast<Eigen::Index>(mu));
  const double lost_variance = (1.0 - h_sigma) * c.c_c * (2.0 - c.c_c);
  Eigen::MatrixXd& cov = state_.covariance;
  cov *= 1.0 - c.c_1 - c.c_mu + c.c_1 * lost_variance;
  cov.noalias() += c.c_1 * state_.path_c * state_.path_c.transpose();
  cov.noalias() += c.c_mu * steps * w.asDiagonal() * steps.transpose();
  cov.triangularView<Eigen::StrictlyLower>() = cov.transpose();

  state_.sigma = sigma * std::exp(std::min(1.0, (c.c_sigma / c.d_sigma) * (ps_norm / c.chi_n - 1.0)));
  if (!(state_.sigma > 0.0) || !std::isfinite(state_.sigma)) throw CmaStateError("step size left (0, inf)");

  ++state_.generation;
  if (state_.generation - state_.eigen_generation >= c.eigen_interval()) update_eigensystem();
  return true;
}

void CmaEs::update_eigensystem() {
  if (!state_.covariance.allFinite()) throw CmaStateError("covariance matrix is not finite");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(state_.covariance);
  if (solver.info() != Eigen::Success) throw CmaStateError("eigendecomposition of C failed");
  Eigen::VectorXd values = solver.eigenvalues();
  const double floor = values.maxCoeff() * 1e-14;
  if (values.minCoeff() <= 0.0) {
    // Numerical loss of definiteness: lift the spectrum back above zero.
    const double shift = floor - values.minCoeff();
    state_.covariance.diagonal().array() += shift;
    values.array() += shift;
  }
  state_.basis = solver.eigenvectors();
  state_.axis_lengths = values.cwiseSqrt();
  state_.eigen_generation = state_.generation;
}

namespace {

using nlohmann::json;

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from(const json& j, Eigen::Index n) {
  const auto values = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(values.size()) != n) throw std::invalid_argument("vector has the wrong length");
  return Eigen::Map<const Eigen::VectorXd>(values.data(), n);
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vector_json(m.row(r).transpose()));
  return rows;
}

Eigen::MatrixXd matrix_from(const json& j, Eigen::Index n) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n) throw std::invalid_argument("matrix has wrong shape");
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index r = 0; r < n; ++r) m.row(r) = vector_from(j[static_cast<std::size_t>(r)], n).transpose();
  return m;
}

}  // namespace

nlohmann::json CmaEs::to_json() const {
  json j;
  j["dimension"] = config_.dimension;
  j["population_size"] = config_.population_size;
  j["initial_step_size"] = config_.initial_step_size;
  j["mean"] = vector_json(state_.mean);
  j["sigma"] = state_.sigma;
  j["covariance"] = matrix_json(state_.covariance);
  j["path_sigma"] = vector_json(state_.path_sigma);
  j["path_c"] = vector_json(state_.path_c);
  j["generation"] = state_.generation;
  j["basis"] = matrix_json(state_.basis);
  j["axis_lengths"] = vector_json(state_.axis_lengths);
  j["eigen_generation"] = state_.eigen_generation;
  if (state_.best) {
    j["best"] = {{"x", vector_json(state_.best->x)}, {"fitness", state_.best->fitness}};
  } else {
    j["best"] = nullptr;
  }
  return j;
}

CmaEs CmaEs::from_json(const nlohmann::json& j) {
  CmaEs es;
  es.config_ = CmaConfig::standard(j.at("dimension").get<std::size_t>(), j.at("population_size").get<std::size_t>(),
                                   j.at("initial_step_size").get<double>());
  es.config_.validate();
  const auto n = static_cast<Eigen::Index>(es.config_.dimension);
  CmaState& s = es.state_;
  s.mean = vector_from(j.at("mean"), n);
  s.sigma = j.at("sigma").get<double>();
  s.covariance = matrix_from(j.at("covariance"), n);
  s.path_sigma = vector_from(j.at("path_sigma"), n);
  s.path_c = vector_from(j.at("path_c"), n);
  s.generation = j.at("generation").get<std::uint64_t>();
  s.basis = matrix_from(j.at("basis"), n);
  s.axis_lengths = vector_from(j.at("axis_lengths"), n);
  s.eigen_generation = j.at("eigen_generation").get<std::uint64_t>();
  if (const json& best = j.at("best"); !best.is_null()) {
    s.best = ScoredPoint{vector_from(best.at("x"), n), best.at("fitness").get<double>()};
  }
  if (!(s.sigma > 0.0)) throw std::invalid_argument("checkpoint sigma must be positive");
  return es;
}

}  // namespace evoart
