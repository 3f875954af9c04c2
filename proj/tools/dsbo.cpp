// dsbo: command-line driver for decentralized bilevel optimization runs.
//
//   dsbo run --problem quadratic --topology ring --k 8 --mode alternating --t 500 --seed 1
//   dsbo gen-data --k 8 --dim-x 10 --dim-y 10 --out quad.json
//   dsbo partition --data a9a.txt --k 8 --out-dir shards/
//   dsbo spectral --topology ring --k 4
//   dsbo sweep --config base.json --axis mode=simultaneous,alternating --out-dir runs/
//
// Exit codes: 0 success, 1 usage/config, 2 data error, 3 divergence.

#include <atomic>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dsbo/errors.hpp"
#include "dsbo/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitDivergence = 3;

// Flag name -> dotted config key(s).
const std::map<std::string, std::vector<std::string>>& flag_keys() {
  static const std::map<std::string, std::vector<std::string>> keys = {
      {"problem", {"problem.kind"}},
      {"quadratic-file", {"problem.quadratic_file"}},
      {"data", {"problem.logistic.dataset"}},
      {"dim-x", {"problem.quadratic.dim_x"}},
      {"dim-y", {"problem.quadratic.dim_y"}},
      {"noise-sigma", {"problem.quadratic.noise_sigma"}},
      {"problem-seed", {"problem.quadratic.seed"}},
      {"heterogeneous", {"problem.logistic.heterogeneous"}},
      {"topology", {"topology.kind"}},
      {"k", {"topology.workers"}},
      {"rows", {"topology.rows"}},
      {"cols", {"topology.cols"}},
      {"p", {"topology.edge_probability"}},
      {"graph-seed", {"topology.seed"}},
      {"mode", {"mode"}},
      {"t", {"run.iterations"}},
      {"eta", {"run.eta"}},
      {"alpha", {"run.alpha1", "run.alpha2", "run.alpha3"}},
      {"alpha1", {"run.alpha1"}},
      {"alpha2", {"run.alpha2"}},
      {"alpha3", {"run.alpha3"}},
      {"beta", {"run.beta1", "run.beta2", "run.beta3"}},
      {"beta1", {"run.beta1"}},
      {"beta2", {"run.beta2"}},
      {"beta3", {"run.beta3"}},
      {"b0", {"run.batch0"}},
      {"b", {"run.batch"}},
      {"radius", {"run.radius"}},
      {"seed", {"run.seed"}},
      {"threads", {"run.threads"}},
      {"eval-every", {"run.eval_every"}},
      {"scaled-defaults", {"scaled_defaults"}},
      {"epsilon", {"epsilon"}},
      {"out", {"output"}},
  };
  return keys;
}

// Accepts either a flag name ("eta") or a dotted key ("run.eta").
std::vector<std::string> resolve_keys(const std::string& name) {
  const auto& keys = flag_keys();
  if (auto it = keys.find(name); it != keys.end()) return it->second;
  return {name};
}

struct SpecFlags {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::vector<std::string> sets;
  bool print_config = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "JSON experiment config; flags override its fields")
        ->check(CLI::ExistingFile);
    for (const auto& [flag, _] : flag_keys()) {
      if (flag == "scaled-defaults") continue;
      app->add_option("--" + flag, values[flag]);
    }
    app->add_flag_callback("--scaled-defaults", [this] { values["scaled-defaults"] = "true"; },
                           "Use K/lambda/epsilon scalings for eta, alpha, beta and batch sizes");
    app->add_option("--set", sets, "Override any dotted config key: --set run.eta=0.05");
    app->add_flag("--print-config", print_config, "Print the resolved config as JSON and exit");
  }

  // file < flags, applied field by field.
  json resolve() const {
    json j = config_file.empty() ? dsbo::spec_to_json(dsbo::ExperimentSpec{})
                                 : dsbo::spec_to_json(dsbo::load_spec_file(config_file));
    for (const auto& [flag, value] : values) {
      if (value.empty()) continue;
      for (const auto& key : resolve_keys(flag)) dsbo::apply_override(j, key, value);
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw dsbo::ConfigError("--set expects key=value, got '" + s + "'");
      dsbo::apply_override(j, s.substr(0, eq), s.substr(eq + 1));
    }
    // normalize through the typed spec so invalid keys or types fail here
    return dsbo::spec_to_json(dsbo::spec_from_json(j));
  }
};

std::string fmt17(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, end);
}

// Writes via a temporary file so a failed run never leaves a partial CSV.
void write_csv_atomically(const fs::path& path, const std::vector<dsbo::IterationRecord>& records) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw dsbo::DataError("cannot write " + tmp.string());
    dsbo::write_csv(records, out);
  }
  fs::rename(tmp, path);
}

fs::path output_path(const dsbo::ExperimentSpec& spec) {
  const std::string name = dsbo::default_output_name(spec);
  if (spec.output.empty()) return name;
  fs::path p(spec.output);
  if (fs::is_directory(p) || spec.output.back() == '/') return p / name;
  return p;
}

void print_summary(std::ostream& os, const dsbo::ExperimentOutcome& out, const fs::path& path) {
  os << "wrote " << out.result.records.size() << " rows to " << path.string() << '\n';
  if (out.result.records.empty()) return;
  const auto& r = out.result.records.back();
  os << "final t=" << r.t << " upper_loss=" << fmt17(r.upper_loss) << " hypergrad_sq=" << fmt17(r.hypergrad_sq)
     << " consensus_x=" << fmt17(r.consensus_x) << " comm_mb=" << fmt17(r.comm_mb_cum);
  if (r.test_accuracy) os << " test_accuracy=" << fmt17(*r.test_accuracy);
  os << '\n';
}

int cmd_run(const SpecFlags& flags) {
  const json resolved = flags.resolve();
  if (flags.print_config) {
    std::cout << resolved.dump(2) << '\n';
    return kExitOk;
  }
  const dsbo::ExperimentSpec spec = dsbo::spec_from_json(resolved);
  const dsbo::ExperimentOutcome out = dsbo::run_experiment(spec);
  const fs::path path = output_path(spec);
  write_csv_atomically(path, out.result.records);
  print_summary(std::cout, out, path);
  return kExitOk;
}

struct GenDataArgs {
  std::string kind = "quadratic";
  dsbo::QuadraticOptions quad;
  dsbo::SyntheticBinaryOptions binary;
  bool homogeneous = false;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& a) {
  if (a.out.empty()) throw dsbo::ConfigError("gen-data needs --out");
  std::ofstream out(a.out);
  if (!out) throw dsbo::DataError("cannot write " + a.out);
  if (a.kind == "quadratic") {
    dsbo::QuadraticOptions opts = a.quad;
    opts.heterogeneous = !a.homogeneous;
    dsbo::save_quadratic(out, dsbo::generate_quadratic(opts));
  } else if (a.kind == "libsvm") {
    dsbo::write_libsvm(out, dsbo::synthetic_binary_dataset(a.binary));
  } else {
    throw dsbo::ConfigError("unknown gen-data kind '" + a.kind + "'");
  }
  std::cout << "wrote " << a.kind << " data to " << a.out << '\n';
  return kExitOk;
}

struct PartitionArgs {
  std::string data;
  int workers = 8;
  std::vector<double> ratios = {0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45};
  std::uint64_t seed = 0;
  std::string out_dir = "partition";
};

int cmd_partition(const PartitionArgs& a) {
  if (static_cast<int>(a.ratios.size()) != a.workers) {
    throw dsbo::ConfigError("need one ratio per worker (" + std::to_string(a.workers) + ")");
  }
  if (!fs::exists(a.data)) throw dsbo::DataError("dataset not found: " + a.data);
  dsbo::SparseDataset all;
  try {
    all = dsbo::load_libsvm(a.data);
  } catch (const dsbo::ParseError& e) {
    throw dsbo::DataError(a.data + ": " + e.what());
  }
  const dsbo::DatasetSplit split = dsbo::split_dataset(all, a.seed);
  const dsbo::Partition part = dsbo::partition_heterogeneous(split.train, {a.ratios, a.seed});

  fs::create_directories(a.out_dir);
  auto write = [&](const std::string& name, const dsbo::SparseDataset& d) {
    std::ofstream out(fs::path(a.out_dir) / name);
    dsbo::write_libsvm(out, d);
  };
  for (int k = 0; k < a.workers; ++k) write("train_worker" + std::to_string(k) + ".libsvm", part.shards[k]);
  write("validation.libsvm", split.validation);
  write("test.libsvm", split.test);

  std::ofstream report(fs::path(a.out_dir) / "ratios.csv");
  for (std::ostream* os : {static_cast<std::ostream*>(&std::cout), static_cast<std::ostream*>(&report)}) {
    *os << "worker,target,positives,negatives,achieved,dropped,deviation_samples\n";
    for (const auto& r : part.report) {
      *os << r.worker << ',' << fmt17(r.target) << ',' << r.positives << ',' << r.negatives << ','
          << fmt17(r.achieved()) << ',' << r.dropped << ',' << fmt17(r.deviation_samples()) << '\n';
    }
  }
  return kExitOk;
}

int cmd_spectral(const dsbo::TopologySpec& t, bool header) {
  const dsbo::MixingMatrix e = dsbo::build_topology(t);
  const auto diag = dsbo::validate(e);
  std::string params;
  if (t.kind == "torus") {
    params = "rows=" + std::to_string(t.rows) + ";cols=" + std::to_string(t.cols);
  } else if (t.kind == "random") {
    params = "p=" + fmt17(t.edge_probability) + ";seed=" + std::to_string(t.seed);
  }
  if (header) std::cout << "K,topology,params,lambda2,spectral_gap,valid\n";
  std::cout << e.size() << ',' << e.name() << ',' << params << ',' << fmt17(e.lambda2()) << ','
            << fmt17(e.spectral_gap()) << ',' << (diag.passed ? "true" : "false") << '\n';
  return kExitOk;
}

struct SweepArgs {
  SpecFlags base;
  std::vector<std::string> axes;
  std::string out_dir = "sweep";
  int parallel = 1;
};

int cmd_sweep(const SweepArgs& a) {
  const json base = a.base.resolve();
  struct Axis {
    std::string name;
    std::vector<std::string> values;
  };
  std::vector<Axis> axes;
  for (const auto& spec : a.axes) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw dsbo::ConfigError("--axis expects name=v1,v2,..., got '" + spec + "'");
    Axis axis{spec.substr(0, eq), {}};
    std::stringstream ss(spec.substr(eq + 1));
    for (std::string v; std::getline(ss, v, ',');) axis.values.push_back(v);
    if (axis.values.empty()) throw dsbo::ConfigError("axis '" + axis.name + "' has no values");
    axes.push_back(std::move(axis));
  }

  // Cross product in row-major order, last axis fastest.
  std::vector<std::vector<std::string>> combos{{}};
  for (const auto& axis : axes) {
    std::vector<std::vector<std::string>> next;
    for (const auto& c : combos) {
      for (const auto& v : axis.values) {
        auto extended = c;
        extended.push_back(v);
        next.push_back(std::move(extended));
      }
    }
    combos = std::move(next);
  }

  std::vector<dsbo::ExperimentSpec> specs;
  for (std::size_t i = 0; i < combos.size(); ++i) {
    json j = base;
    for (std::size_t d = 0; d < axes.size(); ++d) {
      for (const auto& key : resolve_keys(axes[d].name)) dsbo::apply_override(j, key, combos[i][d]);
    }
    dsbo::ExperimentSpec s = dsbo::spec_from_json(j);
    s.output = (fs::path(a.out_dir) / ("run" + std::to_string(i) + "_" + dsbo::default_output_name(s))).string();
    specs.push_back(std::move(s));
  }
  fs::create_directories(a.out_dir);

  std::vector<std::optional<dsbo::IterationRecord>> finals(specs.size());
  std::vector<std::string> errors(specs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < specs.size(); i = next++) {
      try {
        const auto out = dsbo::run_experiment(specs[i]);
        write_csv_atomically(specs[i].output, out.result.records);
        if (!out.result.records.empty()) finals[i] = out.result.records.back();
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int p = 1; p < std::max(1, a.parallel); ++p) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::ofstream index(fs::path(a.out_dir) / "index.csv");
  index << "run,file";
  for (const auto& axis : axes) index << ',' << axis.name;
  index << ",final_upper_loss,final_hypergrad_sq,status\n";
  int failures = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    index << i << ',' << fs::path(specs[i].output).filename().string();
    for (const auto& v : combos[i]) index << ',' << v;
    if (finals[i]) {
      index << ',' << fmt17(finals[i]->upper_loss) << ',' << fmt17(finals[i]->hypergrad_sq) << ",ok\n";
    } else {
      ++failures;
      index << ",,," << (errors[i].empty() ? "empty" : "error") << '\n';
      if (!errors[i].empty()) std::cerr << "run " << i << ": " << errors[i] << '\n';
    }
  }
  std::cout << "sweep: " << specs.size() << " runs, " << failures << " failed, index at "
            << (fs::path(a.out_dir) / "index.csv").string() << '\n';
  return failures == 0 ? kExitOk : kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized stochastic bilevel optimization simulator"};
  app.require_subcommand(1);

  SpecFlags run_flags;
  auto* run_cmd = app.add_subcommand("run", "Run one experiment and write its telemetry CSV");
  run_flags.attach(run_cmd);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a seeded synthetic problem instance");
  gen_cmd->add_option("--kind", gen.kind, "quadratic (JSON instance) or libsvm (binary dataset)");
  gen_cmd->add_option("--k", gen.quad.workers);
  gen_cmd->add_option("--dim-x", gen.quad.dim_x);
  gen_cmd->add_option("--dim-y", gen.quad.dim_y);
  gen_cmd->add_option("--mu", gen.quad.mu);
  gen_cmd->add_option("--ell", gen.quad.ell_gy);
  gen_cmd->add_option("--coupling", gen.quad.coupling);
  gen_cmd->add_option("--offset", gen.quad.offset);
  gen_cmd->add_option("--rho", gen.quad.rho);
  gen_cmd->add_option("--noise-sigma", gen.quad.noise_sigma);
  gen_cmd->add_option("--samples", gen.quad.samples, "virtual samples per worker (quadratic) ");
  gen_cmd->add_option("--x-bound", gen.quad.x_bound);
  gen_cmd->add_option("--seed", gen.quad.seed);
  gen_cmd->add_flag("--homogeneous", gen.homogeneous, "same data on every worker");
  gen_cmd->add_option("--rows", gen.binary.samples, "libsvm: number of samples");
  gen_cmd->add_option("--features", gen.binary.dimension, "libsvm: feature dimension");
  gen_cmd->add_option("--active", gen.binary.active, "libsvm: nonzeros per sample");
  gen_cmd->add_option("--positive-fraction", gen.binary.positive_fraction);
  gen_cmd->add_option("--out", gen.out)->required();
  gen_cmd->callback([&] { gen.binary.seed = gen.quad.seed; });

  PartitionArgs part;
  auto* part_cmd = app.add_subcommand("partition", "Split a LIBSVM file and shard it with class imbalance");
  part_cmd->add_option("--data", part.data)->required();
  part_cmd->add_option("--k", part.workers);
  part_cmd->add_option("--ratios", part.ratios)->delimiter(',');
  part_cmd->add_option("--seed", part.seed);
  part_cmd->add_option("--out-dir", part.out_dir);

  dsbo::TopologySpec topo;
  bool header = false;
  auto* spec_cmd = app.add_subcommand("spectral", "Print lambda2 and the spectral gap of a topology");
  spec_cmd->add_option("--topology", topo.kind);
  spec_cmd->add_option("--k", topo.workers);
  spec_cmd->add_option("--rows", topo.rows);
  spec_cmd->add_option("--cols", topo.cols);
  spec_cmd->add_option("--p", topo.edge_probability);
  spec_cmd->add_option("--seed", topo.seed);
  spec_cmd->add_flag("--header", header);

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run the cross product of config overrides");
  sweep.base.attach(sweep_cmd);
  sweep_cmd->add_option("--axis", sweep.axes, "name=v1,v2,... (flag name or dotted key)")->required();
  sweep_cmd->add_option("--out-dir", sweep.out_dir);
  sweep_cmd->add_option("--parallel", sweep.parallel, "runs executed concurrently");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run_cmd) return cmd_run(run_flags);
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*part_cmd) return cmd_partition(part);
    if (*spec_cmd) {
      if (topo.kind == "torus" && !spec_cmd->count("--rows") && !spec_cmd->count("--cols") && topo.workers != 8) {
        throw dsbo::ConfigError("torus needs --rows and --cols");
      }
      if (topo.kind == "torus") topo.workers = topo.rows * topo.cols;
      return cmd_spectral(topo, header);
    }
    if (*sweep_cmd) return cmd_sweep(sweep);
  } catch (const dsbo::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const dsbo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const dsbo::InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kExitConfig;
  } catch (const dsbo::ConstructionFailure& e) {
    std::cerr << "construction failure: " << e.what() << '\n';
    return kExitConfig;
  } catch (const dsbo::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const dsbo::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitData;
  } catch (const dsbo::PartitionError& e) {
    std::cerr << "partition error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitConfig;
}
