#include <doctest.h>

#include <nlohmann/json.hpp>

#include "dsbo/experiment.hpp"

using namespace dsbo;
using nlohmann::json;

TEST_CASE("spec json round trip") {
  ExperimentSpec s;
  s.mode = "simultaneous";
  s.topology.kind = "torus";
  s.run.eta = 0.05;
  s.run.radius = 3.5;
  s.problem.quadratic.noise_sigma = 0.25;
  s.problem.logistic.ratios = {0.2, 0.3};
  const json j = spec_to_json(s);
  CHECK(spec_to_json(spec_from_json(j)) == j);
  const ExperimentSpec back = spec_from_json(j);
  CHECK(back.run.radius.value() == 3.5);
  CHECK(back.problem.logistic.ratios == std::vector<double>{0.2, 0.3});
}

TEST_CASE("unknown keys are rejected") {
  json j = spec_to_json(ExperimentSpec{});
  j["run"]["etta"] = 0.1;
  CHECK_THROWS_AS(spec_from_json(j), ConfigError);
}

TEST_CASE("overrides are typed by the existing value") {
  json j = spec_to_json(ExperimentSpec{});
  apply_override(j, "run.eta", "0.25");
  apply_override(j, "topology.workers", "4");
  apply_override(j, "topology.kind", "random");
  apply_override(j, "scaled_defaults", "true");
  apply_override(j, "run.radius", "inf");
  apply_override(j, "problem.logistic.ratios", "0.1,0.2,0.3,0.4");
  const ExperimentSpec s = spec_from_json(j);
  CHECK(s.run.eta == 0.25);
  CHECK(s.topology.workers == 4);
  CHECK(s.topology.kind == "random");
  CHECK(s.scaled_defaults);
  CHECK(std::isinf(s.run.radius.value()));
  CHECK(s.problem.logistic.ratios.size() == 4);
  CHECK_THROWS_AS(apply_override(j, "run.nothing", "1"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "topology.workers", "many"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "scaled_defaults", "yes"), ConfigError);
}

TEST_CASE("topology specs") {
  TopologySpec t;
  CHECK(build_topology(t).name() == "ring");
  t.kind = "torus";
  CHECK(build_topology(t).size() == 8);
  t.rows = 3;
  CHECK_THROWS_AS(build_topology(t), ConfigError);
  t.kind = "mesh";
  CHECK_THROWS_AS(build_topology(t), ConfigError);
}

TEST_CASE("run config resolution") {
  ExperimentSpec s;
  s.mode = "sgd-baseline";
  RunConfig c = resolve_run_config(s, 0.5);
  CHECK(c.mode == UpdateMode::kSimultaneous);
  CHECK(c.a1() == doctest::Approx(1.0));

  s.mode = "alternating";
  s.scaled_defaults = true;
  s.epsilon = 1e-4;
  c = resolve_run_config(s, 0.5);
  CHECK(c.mode == UpdateMode::kAlternating);
  CHECK(c.batch0 == 100);
  CHECK(c.beta2 == doctest::Approx(0.25));

  s.mode = "sideways";
  CHECK_THROWS_AS(resolve_run_config(s, 0.5), ConfigError);
  s.mode = "alternating";
  s.scaled_defaults = false;
  s.run.eta = 2.0;
  CHECK_THROWS_AS(resolve_run_config(s, 0.5), ConfigError);
}

TEST_CASE("missing inputs are data errors") {
  ExperimentSpec s;
  s.problem.quadratic_file = "/nonexistent/quad.json";
  CHECK_THROWS_AS(run_experiment(s), DataError);
  s = ExperimentSpec{};
  s.problem.kind = "logistic";
  s.problem.logistic.dataset = "/nonexistent/a9a";
  CHECK_THROWS_AS(run_experiment(s), DataError);
}

TEST_CASE("small experiments run end to end") {
  ExperimentSpec s;
  s.run.iterations = 20;
  const ExperimentOutcome q = run_experiment(s);
  CHECK(q.result.records.size() == 20);
  CHECK(default_output_name(s) == "quadratic_ring_alternating_seed0.csv");

  s.problem.kind = "logistic";
  s.problem.logistic.synthetic.samples = 2000;
  s.run.iterations = 12;
  s.run.eval_every = 5;
  const ExperimentOutcome l = run_experiment(s);
  REQUIRE(l.result.records.size() == 12);
  CHECK(l.result.records[0].test_accuracy.has_value());
  CHECK_FALSE(l.result.records[1].test_accuracy.has_value());
  CHECK(l.result.records[5].test_accuracy.has_value());
  CHECK(l.result.records[11].test_accuracy.has_value());
}
