#include "dsbo/optimizer.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <mutex>

#include <tbb/global_control.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include "dsbo/errors.hpp"
#include "dsbo/random.hpp"

namespace dsbo {

std::string to_string(UpdateMode mode) {
  return mode == UpdateMode::kSimultaneous ? "simultaneous" : "alternating";
}

UpdateMode parse_update_mode(const std::string& text) {
  if (text == "simultaneous" || text == "S") return UpdateMode::kSimultaneous;
  if (text == "alternating" || text == "A") return UpdateMode::kAlternating;
  throw InvalidArgument("unknown update mode '" + text + "'");
}

void RunConfig::validate() const {
  if (!(eta > 0.0 && eta <= 1.0)) throw InvalidArgument("eta must lie in (0, 1]");
  for (double a : {a1(), a2(), a3()}) {
    // small slack so alpha = 1/eta^2 round-trips
    if (!(a > 0.0 && a <= 1.0 + 1e-12)) throw InvalidArgument("alpha_i * eta^2 must lie in (0, 1]");
  }
  for (double b : {beta1, beta2, beta3}) {
    if (!(b >= 0.0) || !std::isfinite(b)) throw InvalidArgument("beta_i must be finite and >= 0");
  }
  if (iterations < 0) throw InvalidArgument("iteration count must be >= 0");
  if (batch < 1 || batch0 < batch) throw InvalidArgument("need B0 >= B >= 1");
  if (radius && !(*radius > 0.0)) throw InvalidArgument("radius must be positive");
  if (threads < 1) throw InvalidArgument("threads must be >= 1");
  if (eval_every < 1) throw InvalidArgument("eval_every must be >= 1");
}

RunConfig RunConfig::scaled_defaults(int workers, double lambda, double epsilon) {
  if (workers < 1 || !(epsilon > 0.0) || !(lambda >= 0.0 && lambda < 1.0)) {
    throw InvalidArgument("scaled_defaults: need K >= 1, 0 <= lambda < 1, eps > 0");
  }
  RunConfig c;
  const double gap = 1.0 - lambda;
  c.eta = std::min(1.0, workers * std::sqrt(epsilon));
  c.alpha1 = c.alpha2 = c.alpha3 = 1.0 / workers;
  c.beta1 = std::pow(gap, 4);
  c.beta2 = gap * gap;
  c.beta3 = std::pow(gap, 4);
  c.batch0 = static_cast<std::size_t>(std::ceil(1.0 / std::sqrt(epsilon)));
  c.batch = 1;
  return c;
}

void RunConfig::make_plain_sgd() {
  alpha1 = alpha2 = alpha3 = 1.0 / (eta * eta);
}

WorkerState SwarmState::worker(int k) const {
  return {x.col(k), y.col(k), z.col(k), u.col(k), v.col(k), w.col(k),
          p.col(k), q.col(k), r.col(k), prev_x.col(k), prev_y.col(k), prev_z.col(k)};
}

SwarmState initialize_swarm(const BilevelOracle& oracle, const RunConfig& config) {
  const int k = oracle.workers();
  const int dx = oracle.dim_x();
  const int dy = oracle.dim_y();
  SwarmState s;
  s.x = Eigen::MatrixXd::Constant(dx, k, config.x_init);
  s.y = Eigen::MatrixXd::Constant(dy, k, config.y_init);
  s.z = Eigen::MatrixXd::Constant(dy, k, config.z_init);
  for (int w = 0; w < k; ++w) oracle.constrain_upper(s.x.col(w));
  if (const auto radius = resolve_radius(config, oracle)) {
    for (int w = 0; w < k; ++w) project_to_ball(s.z.col(w), *radius);
  }
  s.u = s.p = Eigen::MatrixXd::Zero(dx, k);
  s.v = s.w = s.q = s.r = Eigen::MatrixXd::Zero(dy, k);
  s.prev_x = s.x;
  s.prev_y = s.y;
  s.prev_z = s.z;
  for (int w = 0; w < k; ++w) {
    s.streams.push_back(derived_stream(config.seed, stream_purpose::kWorkerSampling, w));
  }
  return s;
}

std::optional<double> resolve_radius(const RunConfig& config, const BilevelOracle& oracle) {
  const double r = config.radius ? *config.radius : oracle.constants().radius();
  if (!std::isfinite(r)) return std::nullopt;
  return r;
}

void for_each_worker(int workers, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || workers <= 1) {
    for (int k = 0; k < workers; ++k) fn(k);
    return;
  }
  // Let the requested worker count through even on machines with fewer cores.
  static std::mutex control_mutex;
  static std::unique_ptr<tbb::global_control> control;
  static int control_limit = 0;
  {
    std::lock_guard lock(control_mutex);
    if (threads > control_limit) {
      control.reset();
      control = std::make_unique<tbb::global_control>(tbb::global_control::max_allowed_parallelism, threads);
      control_limit = threads;
    }
  }
  // One arena per calling thread and concurrency level; arenas are costly to build.
  thread_local std::vector<std::unique_ptr<tbb::task_arena>> arenas;
  if (arenas.size() <= static_cast<std::size_t>(threads)) arenas.resize(threads + 1);
  auto& arena = arenas[threads];
  if (!arena) arena = std::make_unique<tbb::task_arena>(threads);
  arena->execute([&] {
    tbb::parallel_for(0, workers, [&](int k) { fn(k); });
  });
}

Vec storm_update(const VecRef& prev_estimate, const VecRef& grad_new, const VecRef& grad_old, double a) {
  if (prev_estimate.size() != grad_new.size() || grad_new.size() != grad_old.size()) {
    throw InvalidArgument("storm_update: dimension mismatch");
  }
  return (1.0 - a) * (prev_estimate - grad_old) + grad_new;
}

namespace {

// Mixes every column in parallel, then folds the per-column message counts
// in worker order.
Eigen::MatrixXd mix_all(const Eigen::MatrixXd& cols, const MixingMatrix& mixing, CommCounter* counter, int threads) {
  if (cols.cols() != mixing.size()) throw InvalidArgument("mixing: column count does not match worker count");
  Eigen::MatrixXd out(cols.rows(), cols.cols());
  std::vector<CommCounter> local(mixing.size());
  for_each_worker(mixing.size(), threads, [&](int k) { out.col(k) = mixing.mix_column(cols, k, &local[k]); });
  if (counter != nullptr) {
    for (const auto& c : local) {
      counter->floats += c.floats;
      counter->messages += c.messages;
    }
  }
  return out;
}

}  // namespace

Eigen::MatrixXd tracking_step(const Eigen::MatrixXd& tracker_prev, const MixingMatrix& mixing,
                              const Eigen::MatrixXd& est_new, const Eigen::MatrixXd& est_old, CommCounter* counter,
                              int threads) {
  if (tracker_prev.rows() != est_new.rows() || tracker_prev.cols() != est_new.cols() ||
      est_new.rows() != est_old.rows() || est_new.cols() != est_old.cols()) {
    throw InvalidArgument("tracking_step: dimension mismatch");
  }
  Eigen::MatrixXd out = mix_all(tracker_prev, mixing, counter, threads);
  out += est_new - est_old;
  return out;
}

bool project_to_ball(Eigen::Ref<Eigen::VectorXd> v, double radius) {
  const double n = v.norm();
  if (n <= radius) return false;
  v *= radius / n;
  return true;
}

Eigen::MatrixXd variable_step(const Eigen::MatrixXd& vars, const MixingMatrix& mixing, const Eigen::MatrixXd& tracker,
                              double beta, double eta, std::optional<double> radius, CommCounter* counter,
                              std::uint64_t* projections, int threads) {
  if (vars.rows() != tracker.rows() || vars.cols() != tracker.cols()) {
    throw InvalidArgument("variable_step: dimension mismatch");
  }
  Eigen::MatrixXd half = mix_all(vars, mixing, counter, threads);
  half -= beta * tracker;
  if (radius) {
    for (Eigen::Index k = 0; k < half.cols(); ++k) {
      if (project_to_ball(half.col(k), *radius) && projections != nullptr) ++*projections;
    }
  }
  return vars + eta * (half - vars);
}

namespace {

struct Batches {
  std::vector<SampleBatch> zeta;
  std::vector<SampleBatch> xi;
};

// One lower-level and one upper-level batch per worker, drawn in that order
// from the worker's stream, so both modes see identical samples.
Batches draw_batches(SwarmState& s, const BilevelOracle& oracle, const RunConfig& config) {
  const std::size_t size = s.t == 0 ? config.batch0 : config.batch;
  Batches b;
  b.zeta.resize(s.workers());
  b.xi.resize(s.workers());
  for (int k = 0; k < s.workers(); ++k) {
    b.zeta[k] = sample_batch(k, oracle.lower_samples(k), size, s.streams[k]);
    b.xi[k] = sample_batch(k, oracle.upper_samples(k), size, s.streams[k]);
  }
  return b;
}

// Column-wise STORM update of `estimate` given new/old evaluation callbacks.
template <typename NewFn, typename OldFn>
Eigen::MatrixXd estimate_update(const SwarmState& s, const Eigen::MatrixXd& estimate, double a, int threads,
                                NewFn&& at_new, OldFn&& at_old) {
  Eigen::MatrixXd out(estimate.rows(), estimate.cols());
  for_each_worker(s.workers(), threads, [&](int k) {
    const Vec g_new = at_new(k);
    if (s.t == 0) {
      out.col(k) = g_new;
    } else {
      out.col(k) = storm_update(estimate.col(k), g_new, at_old(k), a);
    }
  });
  return out;
}

void constrain_all(const BilevelOracle& oracle, Eigen::MatrixXd& x) {
  for (Eigen::Index k = 0; k < x.cols(); ++k) oracle.constrain_upper(x.col(k));
}

}  // namespace

void iterate_simultaneous(SwarmState& s, const BilevelOracle& oracle, const MixingMatrix& mixing,
                          const RunConfig& config) {
  const Batches b = draw_batches(s, oracle, config);
  const int th = config.threads;
  const auto radius = resolve_radius(config, oracle);

  const Eigen::MatrixXd v_new = estimate_update(
      s, s.v, config.a2(), th,
      [&](int k) { return oracle.lower_grad_y(s.x.col(k), s.y.col(k), b.zeta[k]); },
      [&](int k) { return oracle.lower_grad_y(s.prev_x.col(k), s.prev_y.col(k), b.zeta[k]); });
  const Eigen::MatrixXd w_new = estimate_update(
      s, s.w, config.a3(), th,
      [&](int k) { return z_gradient_estimate(oracle, s.x.col(k), s.y.col(k), s.z.col(k), b.xi[k], b.zeta[k]); },
      [&](int k) {
        return z_gradient_estimate(oracle, s.prev_x.col(k), s.prev_y.col(k), s.prev_z.col(k), b.xi[k], b.zeta[k]);
      });
  const Eigen::MatrixXd u_new = estimate_update(
      s, s.u, config.a1(), th,
      [&](int k) { return hypergradient_estimate(oracle, s.x.col(k), s.y.col(k), s.z.col(k), b.xi[k], b.zeta[k]); },
      [&](int k) {
        return hypergradient_estimate(oracle, s.prev_x.col(k), s.prev_y.col(k), s.prev_z.col(k), b.xi[k],
                                      b.zeta[k]);
      });

  s.q = tracking_step(s.q, mixing, v_new, s.v, &s.comm, th);
  s.r = tracking_step(s.r, mixing, w_new, s.w, &s.comm, th);
  s.p = tracking_step(s.p, mixing, u_new, s.u, &s.comm, th);
  s.v = v_new;
  s.w = w_new;
  s.u = u_new;

  Eigen::MatrixXd y_next = variable_step(s.y, mixing, s.q, config.beta2, config.eta, std::nullopt, &s.comm, nullptr, th);
  Eigen::MatrixXd z_next = variable_step(s.z, mixing, s.r, config.beta3, config.eta, radius, &s.comm, &s.projections, th);
  Eigen::MatrixXd x_next = variable_step(s.x, mixing, s.p, config.beta1, config.eta, std::nullopt, &s.comm, nullptr, th);
  constrain_all(oracle, x_next);

  s.prev_x = std::move(s.x);
  s.prev_y = std::move(s.y);
  s.prev_z = std::move(s.z);
  s.x = std::move(x_next);
  s.y = std::move(y_next);
  s.z = std::move(z_next);
  ++s.t;
}

void iterate_alternating(SwarmState& s, const BilevelOracle& oracle, const MixingMatrix& mixing,
                         const RunConfig& config) {
  const Batches b = draw_batches(s, oracle, config);
  const int th = config.threads;
  const auto radius = resolve_radius(config, oracle);

  // (1) V at (x_t, y_t) vs (x_{t-1}, y_{t-1}); y_t -> y_{t+1}
  const Eigen::MatrixXd v_new = estimate_update(
      s, s.v, config.a2(), th,
      [&](int k) { return oracle.lower_grad_y(s.x.col(k), s.y.col(k), b.zeta[k]); },
      [&](int k) { return oracle.lower_grad_y(s.prev_x.col(k), s.prev_y.col(k), b.zeta[k]); });
  s.q = tracking_step(s.q, mixing, v_new, s.v, &s.comm, th);
  s.v = v_new;
  const Eigen::MatrixXd y_t = s.y;
  s.y = variable_step(y_t, mixing, s.q, config.beta2, config.eta, std::nullopt, &s.comm, nullptr, th);

  // (2) W at (x_t, y_{t+1}, z_t) vs (x_{t-1}, y_t, z_{t-1}); z_t -> z_{t+1}
  const Eigen::MatrixXd w_new = estimate_update(
      s, s.w, config.a3(), th,
      [&](int k) { return z_gradient_estimate(oracle, s.x.col(k), s.y.col(k), s.z.col(k), b.xi[k], b.zeta[k]); },
      [&](int k) {
        return z_gradient_estimate(oracle, s.prev_x.col(k), y_t.col(k), s.prev_z.col(k), b.xi[k], b.zeta[k]);
      });
  s.r = tracking_step(s.r, mixing, w_new, s.w, &s.comm, th);
  s.w = w_new;
  const Eigen::MatrixXd z_t = s.z;
  s.z = variable_step(z_t, mixing, s.r, config.beta3, config.eta, radius, &s.comm, &s.projections, th);

  // (3) U at (x_t, y_{t+1}, z_{t+1}) vs (x_{t-1}, y_t, z_t); x_t -> x_{t+1}
  const Eigen::MatrixXd u_new = estimate_update(
      s, s.u, config.a1(), th,
      [&](int k) { return hypergradient_estimate(oracle, s.x.col(k), s.y.col(k), s.z.col(k), b.xi[k], b.zeta[k]); },
      [&](int k) {
        return hypergradient_estimate(oracle, s.prev_x.col(k), y_t.col(k), z_t.col(k), b.xi[k], b.zeta[k]);
      });
  s.p = tracking_step(s.p, mixing, u_new, s.u, &s.comm, th);
  s.u = u_new;
  Eigen::MatrixXd x_next = variable_step(s.x, mixing, s.p, config.beta1, config.eta, std::nullopt, &s.comm, nullptr, th);
  constrain_all(oracle, x_next);

  s.prev_x = std::move(s.x);
  s.prev_y = y_t;
  s.prev_z = z_t;
  s.x = std::move(x_next);
  ++s.t;
}

void iterate(SwarmState& state, const BilevelOracle& oracle, const MixingMatrix& mixing, const RunConfig& config) {
  if (mixing.size() != oracle.workers() || state.workers() != oracle.workers()) {
    throw InvalidArgument("worker count differs between topology, oracle and state");
  }
  if (config.mode == UpdateMode::kSimultaneous) {
    iterate_simultaneous(state, oracle, mixing, config);
  } else {
    iterate_alternating(state, oracle, mixing, config);
  }
}

void check_finite(const SwarmState& s, long iteration) {
  const std::pair<const char*, const Eigen::MatrixXd*> vars[] = {
      {"x", &s.x}, {"y", &s.y}, {"z", &s.z}, {"u", &s.u}, {"v", &s.v},
      {"w", &s.w}, {"p", &s.p}, {"q", &s.q}, {"r", &s.r}};
  for (int k = 0; k < s.workers(); ++k) {
    for (const auto& [name, m] : vars) {
      if (!m->col(k).allFinite()) throw DivergenceError(iteration, k, name);
    }
  }
}

}  // namespace dsbo
