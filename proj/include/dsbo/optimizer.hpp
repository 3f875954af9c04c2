#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dsbo/oracle.hpp"
#include "dsbo/topology.hpp"

namespace dsbo {

enum class UpdateMode { kSimultaneous, kAlternating };

std::string to_string(UpdateMode mode);
UpdateMode parse_update_mode(const std::string& text);

struct RunConfig {
  UpdateMode mode = UpdateMode::kAlternating;
  double eta = 0.1;
  // STORM weights; the estimator uses a_i = alpha_i * eta^2.
  double alpha1 = 100.0;
  double alpha2 = 100.0;
  double alpha3 = 100.0;
  double beta1 = 1.0;  // x step; 0 freezes x
  double beta2 = 1.0;  // y step
  double beta3 = 1.0;  // z step
  long iterations = 100;
  std::size_t batch0 = 100;
  std::size_t batch = 100;
  // z-ball radius. Unset: the oracle's c_fy / mu. Infinity disables projection.
  std::optional<double> radius;
  std::uint64_t seed = 0;
  // Worker-level parallelism. Results do not depend on it.
  int threads = 1;
  // Test accuracy cadence (problems that report it).
  int eval_every = 10;
  // Common initial point for every worker.
  double x_init = 0.0;
  double y_init = 0.0;
  double z_init = 0.0;

  double a1() const { return alpha1 * eta * eta; }
  double a2() const { return alpha2 * eta * eta; }
  double a3() const { return alpha3 * eta * eta; }

  // Throws InvalidArgument unless eta in (0, 1], alpha_i eta^2 in (0, 1],
  // beta_i >= 0, T >= 0 and B0 >= B >= 1.
  void validate() const;

  // Order-of-magnitude scalings with unit constants:
  //   alpha_i = 1/K, beta_1 = beta_3 = (1-lambda)^4, beta_2 = (1-lambda)^2,
  //   eta = K sqrt(eps) (capped at 1), B0 = ceil(1/sqrt(eps)).
  static RunConfig scaled_defaults(int workers, double lambda, double epsilon);

  // Sets every alpha_i to 1/eta^2 so the estimators reduce to plain
  // minibatch gradients.
  void make_plain_sgd();
};

// Snapshot of one worker's columns.
struct WorkerState {
  Vec x, y, z;
  Vec u, v, w;
  Vec p, q, r;
  Vec prev_x, prev_y, prev_z;
};

// All workers' variables, one column per worker.
struct SwarmState {
  Eigen::MatrixXd x, y, z;
  Eigen::MatrixXd u, v, w;  // variance-reduced estimators of G_F, grad_y g, G_h
  Eigen::MatrixXd p, q, r;  // gradient trackers for u, v, w
  // Iterate at the start of the previous iteration (STORM old points).
  Eigen::MatrixXd prev_x, prev_y, prev_z;
  long t = 0;
  std::vector<std::mt19937_64> streams;
  CommCounter comm;
  std::uint64_t projections = 0;

  int workers() const { return static_cast<int>(x.cols()); }
  WorkerState worker(int k) const;
};

SwarmState initialize_swarm(const BilevelOracle& oracle, const RunConfig& config);

// (1 - a)(prev - grad_old) + grad_new
Vec storm_update(const VecRef& prev_estimate, const VecRef& grad_new, const VecRef& grad_old, double a);

// tracker_prev * E + est_new - est_old
Eigen::MatrixXd tracking_step(const Eigen::MatrixXd& tracker_prev, const MixingMatrix& mixing,
                              const Eigen::MatrixXd& est_new, const Eigen::MatrixXd& est_old,
                              CommCounter* counter = nullptr, int threads = 1);

// half = vars * E - beta * tracker, optionally projected onto the ball of
// `radius`; returns vars + eta (half - vars).
Eigen::MatrixXd variable_step(const Eigen::MatrixXd& vars, const MixingMatrix& mixing, const Eigen::MatrixXd& tracker,
                              double beta, double eta, std::optional<double> radius = std::nullopt,
                              CommCounter* counter = nullptr, std::uint64_t* projections = nullptr,
                              int threads = 1);

// Euclidean projection onto {v : ||v|| <= radius}. Returns true if v moved.
bool project_to_ball(Eigen::Ref<Eigen::VectorXd> v, double radius);

void iterate_simultaneous(SwarmState& state, const BilevelOracle& oracle, const MixingMatrix& mixing,
                          const RunConfig& config);
void iterate_alternating(SwarmState& state, const BilevelOracle& oracle, const MixingMatrix& mixing,
                         const RunConfig& config);
void iterate(SwarmState& state, const BilevelOracle& oracle, const MixingMatrix& mixing, const RunConfig& config);

// Throws DivergenceError naming the first non-finite variable and worker.
void check_finite(const SwarmState& state, long iteration);

// Effective projection radius for a run, or nullopt for none.
std::optional<double> resolve_radius(const RunConfig& config, const BilevelOracle& oracle);

// Runs `fn(k)` for every worker, spread over up to `threads` threads.
void for_each_worker(int workers, int threads, const std::function<void(int)>& fn);

}  // namespace dsbo
