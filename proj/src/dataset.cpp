#include "dsbo/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "dsbo/errors.hpp"
#include "dsbo/random.hpp"

namespace dsbo {

namespace {

template <typename T>
bool parse_number(std::string_view token, T& out) {
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[uniform_index(rng, i)]);
  }
  return order;
}

}  // namespace

void SparseDataset::add_sample(std::span<const Entry> features, int label) {
  for (const Entry& e : features) {
    entries_.push_back(e);
    dimension_ = std::max(dimension_, e.index + 1);
  }
  row_start_.push_back(entries_.size());
  labels_.push_back(label);
}

void SparseDataset::set_dimension(int d) { dimension_ = std::max(dimension_, d); }

double SparseDataset::dot(std::size_t i, const Eigen::Ref<const Eigen::VectorXd>& w) const {
  double s = 0.0;
  for (const Entry& e : features(i)) s += e.value * w[e.index];
  return s;
}

void SparseDataset::axpy(std::size_t i, double scale, Eigen::Ref<Eigen::VectorXd> out) const {
  for (const Entry& e : features(i)) out[e.index] += scale * e.value;
}

double SparseDataset::squared_norm(std::size_t i) const {
  double s = 0.0;
  for (const Entry& e : features(i)) s += e.value * e.value;
  return s;
}

std::size_t SparseDataset::count_label(int label) const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), label));
}

SparseDataset SparseDataset::subset(std::span<const std::size_t> rows) const {
  SparseDataset out(dimension_);
  for (std::size_t r : rows) out.add_sample(features(r), labels_[r]);
  return out;
}

SparseDataset parse_libsvm(std::istream& in) {
  struct RawRow {
    double label;
    std::vector<SparseDataset::Entry> features;
  };
  std::vector<RawRow> rows;
  std::map<double, int> labels_seen;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream tokens(line);
    std::string token;
    if (!(tokens >> token)) continue;

    RawRow row;
    if (!parse_number(token, row.label)) throw ParseError(line_no, "bad label '" + token + "'");
    int last_index = 0;
    while (tokens >> token) {
      const auto colon = token.find(':');
      if (colon == std::string::npos) throw ParseError(line_no, "expected idx:val, got '" + token + "'");
      const std::string_view key(token.data(), colon);
      const std::string_view value(token.data() + colon + 1, token.size() - colon - 1);
      if (key == "qid") continue;
      int index = 0;
      double v = 0.0;
      if (!parse_number(key, index)) throw ParseError(line_no, "bad feature index '" + token + "'");
      if (!parse_number(value, v)) throw ParseError(line_no, "bad feature value '" + token + "'");
      if (index < 1) throw ParseError(line_no, "feature indices are 1-based");
      if (index <= last_index) throw ParseError(line_no, "feature indices must be increasing");
      last_index = index;
      row.features.push_back({index - 1, v});
    }
    labels_seen.emplace(row.label, 0);
    if (labels_seen.size() > 2) throw ParseError(line_no, "more than two distinct labels");
    rows.push_back(std::move(row));
  }

  auto map_label = [&](double raw) {
    if (labels_seen.size() == 1) return raw > 0.0 ? 1 : -1;
    return raw == labels_seen.begin()->first ? -1 : 1;
  };
  SparseDataset data;
  for (const RawRow& r : rows) data.add_sample(r.features, map_label(r.label));
  return data;
}

SparseDataset load_libsvm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return parse_libsvm(in);
}

void write_libsvm(std::ostream& out, const SparseDataset& data) {
  out << std::setprecision(17);
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << (data.label(i) > 0 ? "+1" : "-1");
    for (const auto& e : data.features(i)) out << ' ' << (e.index + 1) << ':' << e.value;
    out << '\n';
  }
}

DatasetSplit split_dataset(const SparseDataset& data, std::uint64_t seed) {
  const std::size_t n = data.size();
  const std::size_t n_test = n / 10;
  const std::size_t n_train = (n - n_test) * 7 / 10;

  auto rng = derived_stream(seed, stream_purpose::kSplit, 0);
  const auto order = seeded_permutation(n, rng);
  const std::span<const std::size_t> all(order);

  DatasetSplit split;
  split.test = data.subset(all.subspan(0, n_test));
  split.train = data.subset(all.subspan(n_test, n_train));
  split.validation = data.subset(all.subspan(n_test + n_train));
  for (auto* part : {&split.train, &split.validation, &split.test}) part->set_dimension(data.dimension());
  return split;
}

PartitionPlan PartitionPlan::imbalanced_eight(std::uint64_t seed) {
  return {{0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45}, seed};
}

std::vector<SparseDataset> shard_evenly(const SparseDataset& data, int workers, std::uint64_t seed) {
  if (workers < 1) throw InvalidArgument("shard_evenly: need at least one worker");
  auto rng = derived_stream(seed, stream_purpose::kPartition, 0);
  const auto order = seeded_permutation(data.size(), rng);
  std::vector<SparseDataset> shards;
  const std::size_t base = data.size() / workers;
  const std::size_t extra = data.size() % workers;
  std::size_t start = 0;
  for (int k = 0; k < workers; ++k) {
    const std::size_t len = base + (static_cast<std::size_t>(k) < extra ? 1 : 0);
    shards.push_back(data.subset(std::span<const std::size_t>(order).subspan(start, len)));
    shards.back().set_dimension(data.dimension());
    start += len;
  }
  return shards;
}

Partition partition_heterogeneous(const SparseDataset& train, const PartitionPlan& plan) {
  const int workers = plan.workers();
  if (workers < 1) throw InvalidArgument("partition plan has no workers");
  for (int k = 0; k < workers; ++k) {
    const double r = plan.positive_ratios[k];
    if (!(r > 0.0 && r < 1.0)) throw PartitionError(k, "target ratio must lie in (0, 1)");
  }
  if (train.count_label(1) == 0 || train.count_label(-1) == 0) {
    throw PartitionError(0, "training set must contain both classes");
  }

  const auto even = shard_evenly(train, workers, plan.seed);
  Partition result;
  for (int k = 0; k < workers; ++k) {
    const SparseDataset& shard = even[k];
    const double target = plan.positive_ratios[k];

    // Shard rows are already in seeded-shuffle order, so dropping from the
    // tail of each class list is a seeded random drop.
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < shard.size(); ++i) (shard.label(i) > 0 ? pos : neg).push_back(i);
    if (pos.empty() || neg.empty()) throw PartitionError(k, "shard lacks one of the classes");

    std::size_t keep_pos = pos.size();
    std::size_t keep_neg = neg.size();
    auto ratio = [](std::size_t p, std::size_t n) { return static_cast<double>(p) / static_cast<double>(p + n); };
    if (ratio(keep_pos, keep_neg) > target) {
      // largest positive count whose ratio does not exceed the target
      while (keep_pos > 0 && ratio(keep_pos, keep_neg) > target) --keep_pos;
    } else if (ratio(keep_pos, keep_neg) < target) {
      // smallest negative count whose ratio does not exceed the target
      std::size_t n = 0;
      while (n < keep_neg && ratio(keep_pos, n) > target) ++n;
      keep_neg = n;
    }
    if (keep_pos == 0 || keep_neg == 0) {
      throw PartitionError(k, "cannot reach target ratio while keeping one sample per class");
    }

    std::vector<std::size_t> rows(pos.begin(), pos.begin() + keep_pos);
    rows.insert(rows.end(), neg.begin(), neg.begin() + keep_neg);
    std::sort(rows.begin(), rows.end());
    result.shards.push_back(shard.subset(rows));
    result.shards.back().set_dimension(train.dimension());
    result.report.push_back({k, target, keep_pos, keep_neg, shard.size() - keep_pos - keep_neg});
  }
  return result;
}

SparseDataset synthetic_binary_dataset(const SyntheticBinaryOptions& o) {
  if (o.samples == 0 || o.dimension < 1 || o.active < 1 || o.active > o.dimension) {
    throw InvalidArgument("synthetic dataset: bad shape");
  }
  auto rng = derived_stream(o.seed, stream_purpose::kSyntheticData, 0);
  Eigen::VectorXd planted(o.dimension);
  for (int j = 0; j < o.dimension; ++j) planted[j] = standard_normal(rng);

  std::vector<std::vector<SparseDataset::Entry>> rows(o.samples);
  std::vector<double> scores(o.samples);
  std::vector<int> picks(o.dimension);
  for (std::size_t i = 0; i < o.samples; ++i) {
    std::iota(picks.begin(), picks.end(), 0);
    // partial Fisher-Yates for `active` distinct features
    for (int a = 0; a < o.active; ++a) {
      std::swap(picks[a], picks[a + uniform_index(rng, o.dimension - a)]);
    }
    std::sort(picks.begin(), picks.begin() + o.active);
    double s = 0.0;
    for (int a = 0; a < o.active; ++a) {
      rows[i].push_back({picks[a], 1.0});
      s += planted[picks[a]];
    }
    scores[i] = s + 0.5 * standard_normal(rng);
  }

  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  const auto cut_rank = static_cast<std::size_t>(
      std::clamp((1.0 - o.positive_fraction) * static_cast<double>(o.samples), 0.0, static_cast<double>(o.samples - 1)));
  const double threshold = sorted[cut_rank];

  SparseDataset data(o.dimension);
  for (std::size_t i = 0; i < o.samples; ++i) {
    int label = scores[i] >= threshold ? 1 : -1;
    if (unit_uniform(rng) < o.label_noise) label = -label;
    data.add_sample(rows[i], label);
  }
  return data;
}

}  // namespace dsbo
