#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "dsbo/errors.hpp"
#include "dsbo/optimizer.hpp"
#include "dsbo/quadratic.hpp"
#include "dsbo/telemetry.hpp"
#include "oracles.hpp"

using namespace dsbo;

namespace {

QuadraticBilevelProblem quad(int workers, double noise = 0.0, bool heterogeneous = true, std::uint64_t seed = 0) {
  QuadraticOptions o;
  o.workers = workers;
  o.dim_x = 4;
  o.dim_y = 5;
  o.noise_sigma = noise;
  o.heterogeneous = heterogeneous;
  o.seed = seed;
  return QuadraticBilevelProblem(generate_quadratic(o));
}

RunConfig small_config(UpdateMode mode) {
  RunConfig c;
  c.mode = mode;
  c.iterations = 30;
  c.batch0 = 8;
  c.batch = 2;
  c.alpha1 = c.alpha2 = c.alpha3 = 20;  // a = 0.2
  return c;
}

}  // namespace

TEST_CASE("storm update collapses") {
  const Vec prev = Vec::Constant(3, 2.0), g_new = Vec::Constant(3, 5.0), g_old = Vec::Constant(3, 1.5);
  CHECK(storm_update(prev, g_new, g_old, 1.0) == g_new);
  CHECK((storm_update(prev, g_new, g_old, 0.0) - (prev + g_new - g_old)).norm() == 0.0);
  CHECK((storm_update(g_old, g_new, g_old, 0.3) - g_new).norm() == 0.0);
  CHECK_THROWS_AS(storm_update(prev, Vec::Zero(2), g_old, 0.5), InvalidArgument);
}

TEST_CASE("tracking step") {
  const MixingMatrix ring = build_ring(5);
  const Eigen::MatrixXd est = Eigen::MatrixXd::Random(3, 5);
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(3, 5);
  CHECK(tracking_step(zero, ring, est, zero) == est);

  Eigen::MatrixXd tracker = est;
  Eigen::MatrixXd old = est;
  for (int t = 0; t < 20; ++t) {
    const Eigen::MatrixXd fresh = Eigen::MatrixXd::Random(3, 5);
    tracker = tracking_step(tracker, ring, fresh, old);
    old = fresh;
    CHECK((tracker.rowwise().mean() - fresh.rowwise().mean()).cwiseAbs().maxCoeff() <= 1e-12);
  }

  const MixingMatrix complete = build_complete(4);
  const Eigen::MatrixXd constant = Vec::LinSpaced(3, 1, 3).replicate(1, 4);
  Eigen::MatrixXd tr = tracking_step(Eigen::MatrixXd::Zero(3, 4), complete, constant, Eigen::MatrixXd::Zero(3, 4));
  tr = tracking_step(tr, complete, constant, constant);
  CHECK((tr - constant).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK_THROWS_AS(tracking_step(zero, ring, Eigen::MatrixXd::Zero(2, 5), zero), InvalidArgument);
}

TEST_CASE("variable step") {
  const MixingMatrix one("single", Eigen::MatrixXd::Ones(1, 1));
  const Eigen::MatrixXd v = Vec::LinSpaced(3, 1, 3);
  const Eigen::MatrixXd tr = Vec::LinSpaced(3, -1, 1);
  CHECK((variable_step(v, one, tr, 2.0, 0.25) - (v - 0.25 * 2.0 * tr)).norm() <= 1e-15);

  // half-step of norm 2r is pulled back to r; the convex combination stays inside
  const double r = 1.0;
  Eigen::MatrixXd inside(2, 1);
  inside << 0.6, 0.0;
  Eigen::MatrixXd push(2, 1);
  push << -1.4, 0.0;  // half = inside - push = (2, 0)
  std::uint64_t projections = 0;
  const Eigen::MatrixXd out = variable_step(inside, one, push, 1.0, 0.5, r, nullptr, &projections);
  CHECK(projections == 1);
  CHECK(out(0, 0) == doctest::Approx(0.8));
  CHECK(out.col(0).norm() <= r);

  const MixingMatrix ring = build_ring(4);
  const Eigen::MatrixXd same = Vec::LinSpaced(3, 1, 3).replicate(1, 4);
  CHECK((variable_step(same, ring, Eigen::MatrixXd::Zero(3, 4), 1.0, 0.3) - same).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("first iteration uses the B0 batch and copies estimators into trackers") {
  const QuadraticBilevelProblem p = quad(3, 1.0);
  const MixingMatrix e = build_ring(3);
  for (auto mode : {UpdateMode::kSimultaneous, UpdateMode::kAlternating}) {
    RunConfig c = small_config(mode);
    c.x_init = 0.3;
    c.y_init = -0.2;
    c.z_init = 0.1;
    SwarmState s = initialize_swarm(p, c);
    const SwarmState before = s;
    auto streams = s.streams;
    iterate(s, p, e, c);
    CHECK(s.p == s.u);
    CHECK(s.q == s.v);
    CHECK(s.r == s.w);
    for (int k = 0; k < 3; ++k) {
      const SampleBatch zeta = sample_batch(k, p.lower_samples(k), c.batch0, streams[k]);
      const SampleBatch xi = sample_batch(k, p.upper_samples(k), c.batch0, streams[k]);
      CHECK(zeta.size() == 8);
      const Vec x0 = before.x.col(k), y0 = before.y.col(k), z0 = before.z.col(k);
      CHECK((s.v.col(k) - p.lower_grad_y(x0, y0, zeta)).norm() == 0.0);
      if (mode == UpdateMode::kSimultaneous) {
        CHECK((s.w.col(k) - z_gradient_estimate(p, x0, y0, z0, xi, zeta)).norm() == 0.0);
        CHECK((s.u.col(k) - hypergradient_estimate(p, x0, y0, z0, xi, zeta)).norm() == 0.0);
      } else {
        // W at (x0, y1, z0); U at (x0, y1, z1)
        CHECK((s.w.col(k) - z_gradient_estimate(p, x0, s.y.col(k), z0, xi, zeta)).norm() == 0.0);
        CHECK((s.u.col(k) - hypergradient_estimate(p, x0, s.y.col(k), s.z.col(k), xi, zeta)).norm() == 0.0);
      }
    }
  }
}

TEST_CASE("single worker matches the straight-line reference") {
  QuadraticOptions o;
  o.workers = 1;
  o.dim_x = 3;
  o.dim_y = 4;
  const QuadraticInstance inst = generate_quadratic(o);
  const QuadraticBilevelProblem p(inst);
  const MixingMatrix one("single", Eigen::MatrixXd::Ones(1, 1));
  for (bool alternating : {false, true}) {
    for (double alpha : {100.0, 30.0}) {
      RunConfig c;
      c.mode = alternating ? UpdateMode::kAlternating : UpdateMode::kSimultaneous;
      c.alpha1 = c.alpha2 = c.alpha3 = alpha;
      c.beta1 = 0.7;
      c.beta3 = 1.3;
      c.iterations = 50;
      c.radius = std::numeric_limits<double>::infinity();
      oracles::ReferenceSettings r;
      r.alternating = alternating;
      r.a1 = r.a2 = r.a3 = c.a1();
      r.beta1 = 0.7;
      r.beta3 = 1.3;
      r.iterations = 50;
      const auto ref = oracles::reference_single_machine(inst, r);
      SwarmState s = initialize_swarm(p, c);
      double worst = 0.0;
      for (long t = 0; t < c.iterations; ++t) {
        iterate(s, p, one, c);
        worst = std::max({worst, (s.x.col(0) - ref[t].x).cwiseAbs().maxCoeff(),
                          (s.y.col(0) - ref[t].y).cwiseAbs().maxCoeff(), (s.z.col(0) - ref[t].z).cwiseAbs().maxCoeff()});
      }
      CHECK(worst <= 1e-12);
    }
  }
}

TEST_CASE("identical data keeps workers identical") {
  const QuadraticBilevelProblem p = quad(4, 0.0, false);
  const MixingMatrix e = build_ring(4);
  for (auto mode : {UpdateMode::kSimultaneous, UpdateMode::kAlternating}) {
    SwarmState s = initialize_swarm(p, small_config(mode));
    for (int t = 0; t < 20; ++t) {
      iterate(s, p, e, small_config(mode));
      CHECK(consensus_error(s.x) <= 1e-26);
      CHECK(consensus_error(s.z) <= 1e-26);
    }
  }
}

TEST_CASE("gossip with zero gradients contracts consensus") {
  const oracles::ZeroOracle zero(6, 3, 2);
  for (const MixingMatrix& e : {build_ring(6), build_random(6, 0.5, 3), build_torus(2, 3)}) {
    RunConfig c = small_config(UpdateMode::kSimultaneous);
    c.eta = 0.4;
    SwarmState s = initialize_swarm(zero, c);
    s.x = Eigen::MatrixXd::Random(3, 6);
    const double factor = std::pow(1.0 - c.eta * (1.0 - e.lambda2()), 2);
    for (int t = 0; t < 15; ++t) {
      const double before = consensus_error(s.x);
      iterate(s, zero, e, c);
      CHECK(consensus_error(s.x) <= factor * before * (1 + 1e-12) + 1e-300);
    }
  }
}

TEST_CASE("zero step leaves every variable unchanged") {
  const QuadraticBilevelProblem p = quad(4, 1.0);
  const MixingMatrix e = build_ring(4);
  for (auto mode : {UpdateMode::kSimultaneous, UpdateMode::kAlternating}) {
    RunConfig c = small_config(mode);
    c.eta = 0.0;
    c.x_init = 0.5;
    c.y_init = -1.0;
    c.z_init = 0.25;
    SwarmState s = initialize_swarm(p, c);
    const SwarmState start = s;
    for (int t = 0; t < 5; ++t) iterate(s, p, e, c);
    CHECK(s.x == start.x);
    CHECK(s.y == start.y);
    CHECK(s.z == start.z);
  }
}

TEST_CASE("plain estimator equals the raw gradient at the new point") {
  const QuadraticBilevelProblem p = quad(3, 1.0);
  const MixingMatrix e = build_ring(3);
  RunConfig c = small_config(UpdateMode::kSimultaneous);
  c.make_plain_sgd();
  SwarmState s = initialize_swarm(p, c);
  for (int t = 0; t < 6; ++t) {
    const SwarmState before = s;
    auto streams = s.streams;
    iterate(s, p, e, c);
    const std::size_t size = t == 0 ? c.batch0 : c.batch;
    for (int k = 0; k < 3; ++k) {
      const SampleBatch zeta = sample_batch(k, p.lower_samples(k), size, streams[k]);
      const SampleBatch xi = sample_batch(k, p.upper_samples(k), size, streams[k]);
      const Vec x = before.x.col(k), y = before.y.col(k), z = before.z.col(k);
      CHECK((s.v.col(k) - p.lower_grad_y(x, y, zeta)).norm() <= 1e-12);
      CHECK((s.w.col(k) - z_gradient_estimate(p, x, y, z, xi, zeta)).norm() <= 1e-12);
      CHECK((s.u.col(k) - hypergradient_estimate(p, x, y, z, xi, zeta)).norm() <= 1e-12);
    }
  }
}

TEST_CASE("projection keeps z inside the ball in both modes") {
  QuadraticOptions o;
  o.workers = 4;
  o.offset = 20.0;
  const QuadraticBilevelProblem p(generate_quadratic(o));
  for (auto mode : {UpdateMode::kSimultaneous, UpdateMode::kAlternating}) {
    RunConfig c = small_config(mode);
    c.radius = 2.0;
    c.iterations = 40;
    double worst = 0.0;
    RunHooks hooks;
    hooks.after_iteration = [&](const SwarmState& s) { worst = std::max(worst, s.z.colwise().norm().maxCoeff()); };
    const RunResult res = run(c, p, build_ring(4), hooks);
    CHECK(res.final_state.projections > 0);
    CHECK(worst <= 2.0 + 1e-9);
  }
}

TEST_CASE("run contract") {
  const QuadraticBilevelProblem p = quad(4, 0.5);
  const MixingMatrix e = build_ring(4);
  RunConfig c = small_config(UpdateMode::kAlternating);
  c.iterations = 0;
  CHECK(run(c, p, e).records.empty());

  c.iterations = 25;
  const RunResult a = run(c, p, e);
  c.threads = 3;
  const RunResult b = run(c, p, e);
  CHECK(a.records == b.records);
  CHECK(a.final_state.x == b.final_state.x);
  CHECK(a.counted_floats == a.accounted_floats);

  CHECK_THROWS_AS(run(c, p, build_ring(5)), InvalidArgument);
  RunConfig bad = c;
  bad.beta2 = 1e8;
  bad.iterations = 400;
  CHECK_THROWS_AS(run(bad, p, e), DivergenceError);
}

TEST_CASE("config validation and defaults") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.a1() == doctest::Approx(1.0));
  for (auto mutate : std::vector<std::function<void(RunConfig&)>>{
           [](RunConfig& r) { r.eta = 0.0; }, [](RunConfig& r) { r.eta = 1.5; },
           [](RunConfig& r) { r.alpha2 = 200; }, [](RunConfig& r) { r.alpha3 = 0; },
           [](RunConfig& r) { r.beta1 = -1; }, [](RunConfig& r) { r.batch = 0; },
           [](RunConfig& r) { r.batch0 = 10; }, [](RunConfig& r) { r.radius = -1.0; }}) {
    RunConfig r;
    mutate(r);
    CHECK_THROWS_AS(r.validate(), InvalidArgument);
  }

  const RunConfig s = RunConfig::scaled_defaults(8, 0.5, 1e-4);
  CHECK(s.eta == doctest::Approx(0.08));
  CHECK(s.alpha1 == doctest::Approx(0.125));
  CHECK(s.beta1 == doctest::Approx(0.0625));
  CHECK(s.beta2 == doctest::Approx(0.25));
  CHECK(s.beta3 == doctest::Approx(0.0625));
  CHECK(s.batch0 == 100);
  CHECK(s.batch == 1);

  RunConfig plain;
  plain.eta = 0.3;
  plain.make_plain_sgd();
  CHECK(plain.a2() == doctest::Approx(1.0));
  CHECK_NOTHROW(plain.validate());
  CHECK(parse_update_mode("simultaneous") == UpdateMode::kSimultaneous);
  CHECK_THROWS_AS(parse_update_mode("both"), InvalidArgument);
}
