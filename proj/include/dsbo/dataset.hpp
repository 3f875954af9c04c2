#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dsbo {

// Binary-labelled sparse samples in CSR layout. Feature indices are 0-based
// internally; LIBSVM files are 1-based on disk.
class SparseDataset {
 public:
  struct Entry {
    int index;
    double value;
  };

  SparseDataset() : row_start_{0} {}
  explicit SparseDataset(int dimension) : row_start_{0}, dimension_(dimension) {}

  void add_sample(std::span<const Entry> features, int label);

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  int dimension() const { return dimension_; }
  // Raises the feature dimension (never lowers it).
  void set_dimension(int d);

  int label(std::size_t i) const { return labels_[i]; }
  std::span<const Entry> features(std::size_t i) const {
    return {entries_.data() + row_start_[i], entries_.data() + row_start_[i + 1]};
  }

  double dot(std::size_t i, const Eigen::Ref<const Eigen::VectorXd>& w) const;
  // out += scale * a_i
  void axpy(std::size_t i, double scale, Eigen::Ref<Eigen::VectorXd> out) const;
  double squared_norm(std::size_t i) const;

  std::size_t count_label(int label) const;
  SparseDataset subset(std::span<const std::size_t> rows) const;

 private:
  std::vector<std::size_t> row_start_;
  std::vector<Entry> entries_;
  std::vector<int> labels_;
  int dimension_ = 0;
};

// Reads `label idx:val ...` lines. Blank lines and `#` comments are skipped.
// Two distinct raw labels map to -1 (smaller) and +1 (larger); a file with a
// single raw label maps it by sign. Throws ParseError with the line number.
SparseDataset parse_libsvm(std::istream& in);
SparseDataset load_libsvm(const std::string& path);
void write_libsvm(std::ostream& out, const SparseDataset& data);

struct DatasetSplit {
  SparseDataset train;
  SparseDataset validation;
  SparseDataset test;
};

// floor(n/10) test samples, floor(7/10 of the rest) train, remainder validation.
DatasetSplit split_dataset(const SparseDataset& data, std::uint64_t seed);

struct PartitionPlan {
  std::vector<double> positive_ratios;  // one target per worker, each in (0, 1)
  std::uint64_t seed = 0;

  int workers() const { return static_cast<int>(positive_ratios.size()); }
  static PartitionPlan imbalanced_eight(std::uint64_t seed);
};

struct ShardReport {
  int worker = 0;
  double target = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t dropped = 0;

  double achieved() const { return static_cast<double>(positives) / static_cast<double>(positives + negatives); }
  // |positives - target * kept|, in samples.
  double deviation_samples() const {
    return std::abs(static_cast<double>(positives) - target * static_cast<double>(positives + negatives));
  }
};

struct Partition {
  std::vector<SparseDataset> shards;
  std::vector<ShardReport> report;
};

// Shuffles, cuts into K near-equal shards, then drops samples of the
// over-represented class from the end of each shard's shuffled order until
// the positive ratio is as close to the target as possible without crossing it.
Partition partition_heterogeneous(const SparseDataset& train, const PartitionPlan& plan);

// Splits evenly into K shards after a seeded shuffle, without rebalancing.
std::vector<SparseDataset> shard_evenly(const SparseDataset& data, int workers, std::uint64_t seed);

// Planted-logistic binary data with `active` one-hot style features per row,
// shaped loosely like the a9a benchmark.
struct SyntheticBinaryOptions {
  std::size_t samples = 8000;
  int dimension = 123;
  int active = 14;
  double positive_fraction = 0.5;
  double label_noise = 0.05;
  std::uint64_t seed = 0;
};
SparseDataset synthetic_binary_dataset(const SyntheticBinaryOptions& options);

}  // namespace dsbo
