#include "dsbo/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "dsbo/errors.hpp"

namespace dsbo {

using nlohmann::json;

namespace {

// Reads known keys out of one JSON object and rejects the rest.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& field) {
    seen_.insert(key);
    if (auto it = j_.find(key); it != j_.end() && !it->is_null()) {
      try {
        field = it->get<T>();
      } catch (const json::exception& e) {
        throw ConfigError(where_ + "." + key + ": " + e.what());
      }
    }
  }

  void read_optional(const char* key, std::optional<double>& field) {
    seen_.insert(key);
    if (auto it = j_.find(key); it != j_.end()) {
      if (it->is_null()) {
        field.reset();
      } else if (it->is_string() && it->get<std::string>() == "inf") {
        field = std::numeric_limits<double>::infinity();
      } else {
        try {
          field = it->get<double>();
        } catch (const json::exception& e) {
          throw ConfigError(where_ + "." + key + ": " + e.what());
        }
      }
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json radius_to_json(const std::optional<double>& r) {
  if (!r) return nullptr;
  if (std::isinf(*r)) return "inf";
  return *r;
}

}  // namespace

MixingMatrix build_topology(const TopologySpec& spec) {
  try {
    if (spec.kind == "ring") return build_ring(spec.workers);
    if (spec.kind == "complete") return build_complete(spec.workers);
    if (spec.kind == "random") return build_random(spec.workers, spec.edge_probability, spec.seed);
    if (spec.kind == "torus") {
      if (spec.rows * spec.cols != spec.workers) {
        throw ConfigError("torus " + std::to_string(spec.rows) + "x" + std::to_string(spec.cols) + " does not have " +
                          std::to_string(spec.workers) + " workers");
      }
      return build_torus(spec.rows, spec.cols);
    }
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  throw ConfigError("unknown topology '" + spec.kind + "'");
}

json spec_to_json(const ExperimentSpec& s) {
  const auto& q = s.problem.quadratic;
  const auto& l = s.problem.logistic;
  const auto& r = s.run;
  json j;
  j["problem"] = {
      {"kind", s.problem.kind},
      {"quadratic_file", s.problem.quadratic_file},
      {"quadratic",
       {{"dim_x", q.dim_x},
        {"dim_y", q.dim_y},
        {"mu", q.mu},
        {"ell_gy", q.ell_gy},
        {"coupling", q.coupling},
        {"offset", q.offset},
        {"heterogeneous", q.heterogeneous},
        {"rho", q.rho},
        {"noise_sigma", q.noise_sigma},
        {"samples", q.samples},
        {"x_bound", q.x_bound},
        {"seed", q.seed}}},
      {"logistic",
       {{"dataset", l.dataset},
        {"synthetic",
         {{"samples", l.synthetic.samples},
          {"dimension", l.synthetic.dimension},
          {"active", l.synthetic.active},
          {"positive_fraction", l.synthetic.positive_fraction},
          {"label_noise", l.synthetic.label_noise},
          {"seed", l.synthetic.seed}}},
        {"heterogeneous", l.heterogeneous},
        {"ratios", l.ratios},
        {"x_min_bound", l.options.x_min_bound},
        {"x_reference_max", l.options.x_reference_max},
        {"data_seed", l.data_seed}}}};
  j["topology"] = {{"kind", s.topology.kind},
                   {"workers", s.topology.workers},
                   {"rows", s.topology.rows},
                   {"cols", s.topology.cols},
                   {"edge_probability", s.topology.edge_probability},
                   {"seed", s.topology.seed}};
  j["mode"] = s.mode;
  j["run"] = {{"eta", r.eta},       {"alpha1", r.alpha1},     {"alpha2", r.alpha2},
              {"alpha3", r.alpha3}, {"beta1", r.beta1},       {"beta2", r.beta2},
              {"beta3", r.beta3},   {"iterations", r.iterations}, {"batch0", r.batch0},
              {"batch", r.batch},   {"radius", radius_to_json(r.radius)}, {"seed", r.seed},
              {"threads", r.threads}, {"eval_every", r.eval_every}, {"x_init", r.x_init},
              {"y_init", r.y_init}, {"z_init", r.z_init}};
  j["scaled_defaults"] = s.scaled_defaults;
  j["epsilon"] = s.epsilon;
  j["output"] = s.output;
  return j;
}

ExperimentSpec spec_from_json(const json& j) {
  ExperimentSpec s;
  ObjectReader top(j, "config");
  if (const json* pj = top.child("problem")) {
    ObjectReader p(*pj, "problem");
    p.read("kind", s.problem.kind);
    p.read("quadratic_file", s.problem.quadratic_file);
    if (const json* qj = p.child("quadratic")) {
      auto& q = s.problem.quadratic;
      ObjectReader r(*qj, "problem.quadratic");
      r.read("dim_x", q.dim_x);
      r.read("dim_y", q.dim_y);
      r.read("mu", q.mu);
      r.read("ell_gy", q.ell_gy);
      r.read("coupling", q.coupling);
      r.read("offset", q.offset);
      r.read("heterogeneous", q.heterogeneous);
      r.read("rho", q.rho);
      r.read("noise_sigma", q.noise_sigma);
      r.read("samples", q.samples);
      r.read("x_bound", q.x_bound);
      r.read("seed", q.seed);
      r.finish();
    }
    if (const json* lj = p.child("logistic")) {
      auto& l = s.problem.logistic;
      ObjectReader r(*lj, "problem.logistic");
      r.read("dataset", l.dataset);
      if (const json* sj = r.child("synthetic")) {
        ObjectReader sr(*sj, "problem.logistic.synthetic");
        sr.read("samples", l.synthetic.samples);
        sr.read("dimension", l.synthetic.dimension);
        sr.read("active", l.synthetic.active);
        sr.read("positive_fraction", l.synthetic.positive_fraction);
        sr.read("label_noise", l.synthetic.label_noise);
        sr.read("seed", l.synthetic.seed);
        sr.finish();
      }
      r.read("heterogeneous", l.heterogeneous);
      r.read("ratios", l.ratios);
      r.read("x_min_bound", l.options.x_min_bound);
      r.read("x_reference_max", l.options.x_reference_max);
      r.read("data_seed", l.data_seed);
      r.finish();
    }
    p.finish();
  }
  if (const json* tj = top.child("topology")) {
    ObjectReader t(*tj, "topology");
    t.read("kind", s.topology.kind);
    t.read("workers", s.topology.workers);
    t.read("rows", s.topology.rows);
    t.read("cols", s.topology.cols);
    t.read("edge_probability", s.topology.edge_probability);
    t.read("seed", s.topology.seed);
    t.finish();
  }
  top.read("mode", s.mode);
  if (const json* rj = top.child("run")) {
    auto& c = s.run;
    ObjectReader r(*rj, "run");
    r.read("eta", c.eta);
    r.read("alpha1", c.alpha1);
    r.read("alpha2", c.alpha2);
    r.read("alpha3", c.alpha3);
    r.read("beta1", c.beta1);
    r.read("beta2", c.beta2);
    r.read("beta3", c.beta3);
    r.read("iterations", c.iterations);
    r.read("batch0", c.batch0);
    r.read("batch", c.batch);
    r.read_optional("radius", c.radius);
    r.read("seed", c.seed);
    r.read("threads", c.threads);
    r.read("eval_every", c.eval_every);
    r.read("x_init", c.x_init);
    r.read("y_init", c.y_init);
    r.read("z_init", c.z_init);
    r.finish();
  }
  top.read("scaled_defaults", s.scaled_defaults);
  top.read("epsilon", s.epsilon);
  top.read("output", s.output);
  top.finish();
  return s;
}

ExperimentSpec load_spec_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  return spec_from_json(j);
}

void apply_override(json& j, const std::string& dotted_key, const std::string& value) {
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted_key.find('.', start);
    const std::string part = dotted_key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + dotted_key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    if (node->is_string()) {
      *node = value;
    } else if (node->is_boolean()) {
      if (value != "true" && value != "false") throw ConfigError("expected true/false for '" + dotted_key + "'");
      *node = value == "true";
    } else if (node->is_array()) {
      json list = json::array();
      std::size_t s = 0;
      while (s <= value.size()) {
        const auto comma = value.find(',', s);
        list.push_back(std::stod(value.substr(s, comma - s)));
        if (comma == std::string::npos) break;
        s = comma + 1;
      }
      *node = list;
    } else if (node->is_number_unsigned()) {
      *node = static_cast<std::uint64_t>(std::stoull(value));
    } else if (node->is_number_integer()) {
      *node = std::stoll(value);
    } else if (value == "inf" || value == "null") {
      *node = value == "inf" ? json("inf") : json(nullptr);
    } else {
      *node = std::stod(value);
    }
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const ConfigError*>(&e) != nullptr) throw;
    throw ConfigError("bad value '" + value + "' for '" + dotted_key + "'");
  }
}

BuiltProblem build_problem(const ProblemSpec& spec, int workers) {
  BuiltProblem built;
  built.name = spec.kind;
  if (spec.kind == "quadratic") {
    QuadraticInstance inst;
    if (!spec.quadratic_file.empty()) {
      if (!std::filesystem::exists(spec.quadratic_file)) {
        throw DataError("quadratic file not found: " + spec.quadratic_file);
      }
      try {
        inst = load_quadratic_file(spec.quadratic_file);
      } catch (const ParseError& e) {
        throw DataError(e.what());
      }
      if (inst.workers() != workers) {
        throw ConfigError("quadratic file has " + std::to_string(inst.workers()) + " workers, topology has " +
                          std::to_string(workers));
      }
    } else {
      QuadraticOptions opts = spec.quadratic;
      opts.workers = workers;
      try {
        inst = generate_quadratic(opts);
      } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
      }
    }
    built.oracle = std::make_unique<QuadraticBilevelProblem>(std::move(inst));
    return built;
  }
  if (spec.kind == "logistic") {
    const LogisticSpec& l = spec.logistic;
    SparseDataset all;
    if (l.dataset.empty()) {
      all = synthetic_binary_dataset(l.synthetic);
    } else {
      if (!std::filesystem::exists(l.dataset)) throw DataError("dataset not found: " + l.dataset);
      try {
        all = load_libsvm(l.dataset);
      } catch (const ParseError& e) {
        throw DataError(l.dataset + ": " + e.what());
      }
    }
    PartitionPlan plan;
    plan.seed = l.data_seed;
    if (l.heterogeneous) plan.positive_ratios = l.ratios;
    try {
      LogisticData data = prepare_logistic_data(all, plan, workers, l.data_seed, &built.partition_report);
      built.oracle = std::make_unique<LogisticHyperoptProblem>(std::move(data), l.options);
    } catch (const PartitionError& e) {
      throw DataError(e.what());
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
    return built;
  }
  throw ConfigError("unknown problem kind '" + spec.kind + "'");
}

RunConfig resolve_run_config(const ExperimentSpec& spec, double lambda) {
  RunConfig c = spec.run;
  if (spec.scaled_defaults) {
    const RunConfig d = RunConfig::scaled_defaults(spec.topology.workers, lambda, spec.epsilon);
    c.eta = d.eta;
    c.alpha1 = d.alpha1;
    c.alpha2 = d.alpha2;
    c.alpha3 = d.alpha3;
    c.beta1 = d.beta1;
    c.beta2 = d.beta2;
    c.beta3 = d.beta3;
    c.batch0 = d.batch0;
    c.batch = d.batch;
  }
  if (spec.mode == "sgd-baseline") {
    c.mode = UpdateMode::kSimultaneous;
    c.make_plain_sgd();
  } else {
    try {
      c.mode = parse_update_mode(spec.mode);
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ExperimentOutcome run_experiment(const ExperimentSpec& spec) {
  const MixingMatrix mixing = build_topology(spec.topology);
  BuiltProblem problem = build_problem(spec.problem, mixing.size());
  ExperimentOutcome out;
  out.lambda = mixing.lambda2();
  out.config = resolve_run_config(spec, out.lambda);
  out.topology_name = mixing.name();
  out.problem_name = problem.name;
  out.result = run(out.config, *problem.oracle, mixing);
  return out;
}

std::string default_output_name(const ExperimentSpec& spec) {
  return run_file_name(spec.problem.kind, spec.topology.kind, spec.mode, spec.run.seed);
}

}  // namespace dsbo
