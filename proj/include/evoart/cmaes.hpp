#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace evoart {

class CmaStateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Strategy parameters. `standard()` fills in Hansen's defaults for a given
// dimension and population size; the parent count is floor(lambda/2).
struct CmaConfig {
  std::size_t dimension = 0;
  std::size_t population_size = 0;
  std::size_t parent_count = 0;
  double initial_step_size = 1.0;
  std::vector<double> weights;  // length parent_count, decreasing, sum 1
  double mu_eff = 0.0;
  double c_sigma = 0.0;
  double d_sigma = 0.0;
  double c_c = 0.0;
  double c_1 = 0.0;
  double c_mu = 0.0;
  double chi_n = 0.0;  // E||N(0,I)||

  static CmaConfig standard(std::size_t dimension, std::size_t population_size, double initial_step_size);
  static std::size_t default_population_size(std::size_t dimension);

  // Generations between eigendecompositions of C.
  std::size_t eigen_interval() const;

  void validate() const;
};

struct ScoredPoint {
  Eigen::VectorXd x;
  double fitness = 0.0;
};

struct CmaState {
  Eigen::VectorXd mean;
  double sigma = 1.0;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd path_sigma;
  Eigen::VectorXd path_c;
  std::uint64_t generation = 0;

  // C = B diag(D^2) B^T as of `eigen_generation`.
  Eigen::MatrixXd basis;
  Eigen::VectorXd axis_lengths;
  std::uint64_t eigen_generation = 0;

  std::optional<ScoredPoint> best;

  double min_eigenvalue() const { return axis_lengths.minCoeff() * axis_lengths.minCoeff(); }
  double max_eigenvalue() const { return axis_lengths.maxCoeff() * axis_lengths.maxCoeff(); }
};

// Minimizing CMA-ES with an ask/tell interface. ask() is const; all state
// changes happen in tell(). Neither is meant to be called concurrently.
class CmaEs {
 public:
  // Throws std::invalid_argument on a bad config or a mean of the wrong size.
  CmaEs(const CmaConfig& config, Eigen::VectorXd initial_mean);

  // lambda samples m + sigma * B * D * z, z ~ N(0, I).
  std::vector<Eigen::VectorXd> ask(std::mt19937_64& rng) const;

  // Ranks candidates ascending (stable on submission order; non-finite
  // fitness counts as +inf) and applies the standard update. Returns false
  // without touching the state when every fitness is non-finite.
  bool tell(std::span<const Eigen::VectorXd> candidates, std::span<const double> fitness);

  const std::optional<ScoredPoint>& best() const { return state_.best; }

  const CmaConfig& config() const { return config_; }
  const CmaState& state() const { return state_; }

  nlohmann::json to_json() const;
  static CmaEs from_json(const nlohmann::json& j);

 private:
  CmaEs() = default;
  void update_eigensystem();

  CmaConfig config_;
  CmaState state_;
};

}  // namespace evoart
