#include "dsbo/logistic.hpp"

#include <algorithm>
#include <cmath>

#include "dsbo/errors.hpp"

namespace dsbo {

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double softplus(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

namespace {

// Visits every selected row once per occurrence, with the 1/|batch| weight.
template <typename Fn>
void for_each_row(const SparseDataset& set, const SampleBatch& batch, Fn&& fn) {
  if (batch.all) {
    const double w = 1.0 / static_cast<double>(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) fn(i, w);
  } else {
    const double w = 1.0 / static_cast<double>(batch.indices.size());
    for (int i : batch.indices) fn(static_cast<std::size_t>(i), w);
  }
}

}  // namespace

LogisticData prepare_logistic_data(const SparseDataset& all, const PartitionPlan& plan, int workers,
                                   std::uint64_t seed, std::vector<ShardReport>* report) {
  if (workers < 1) throw InvalidArgument("prepare_logistic_data: need at least one worker");
  if (!plan.positive_ratios.empty() && plan.workers() != workers) {
    throw InvalidArgument("partition plan has " + std::to_string(plan.workers()) + " ratios for " +
                          std::to_string(workers) + " workers");
  }
  DatasetSplit split = split_dataset(all, seed);
  LogisticData data;
  if (plan.positive_ratios.empty()) {
    data.train = shard_evenly(split.train, workers, seed);
    data.validation = shard_evenly(split.validation, workers, seed + 1);
  } else {
    // a worker's validation shard carries the same class imbalance as its training shard
    Partition p = partition_heterogeneous(split.train, plan);
    data.train = std::move(p.shards);
    if (report != nullptr) *report = std::move(p.report);
    data.validation = partition_heterogeneous(split.validation, {plan.positive_ratios, plan.seed + 1}).shards;
  }
  data.test = std::move(split.test);
  return data;
}

LogisticHyperoptProblem::LogisticHyperoptProblem(LogisticData data, LogisticOptions options)
    : data_(std::move(data)), options_(options) {
  const int k = static_cast<int>(data_.train.size());
  if (k < 1 || static_cast<int>(data_.validation.size()) != k) {
    throw InvalidArgument("logistic problem: need matching non-empty train/validation shard lists");
  }
  double max_val_norm = 0.0;
  double max_train_sq = 0.0;
  for (int w = 0; w < k; ++w) {
    if (data_.train[w].empty() || data_.validation[w].empty()) {
      throw InvalidArgument("logistic problem: worker " + std::to_string(w) + " has an empty local set");
    }
    dim_ = std::max({dim_, data_.train[w].dimension(), data_.validation[w].dimension()});
    for (std::size_t i = 0; i < data_.validation[w].size(); ++i) {
      max_val_norm = std::max(max_val_norm, std::sqrt(data_.validation[w].squared_norm(i)));
    }
    for (std::size_t i = 0; i < data_.train[w].size(); ++i) {
      max_train_sq = std::max(max_train_sq, data_.train[w].squared_norm(i));
    }
  }
  dim_ = std::max(dim_, data_.test.dimension());
  if (dim_ < 1) throw InvalidArgument("logistic problem: zero feature dimension");

  const double d = dim_;
  constants_.mu = 2.0 / d * std::exp(options_.x_min_bound);
  constants_.ell_gy = 0.25 * max_train_sq + 2.0 / d * std::exp(options_.x_reference_max);
  // |d/dy log(1 + exp(-b y'a))| <= ||a||
  constants_.c_fy = max_val_norm;
}

void LogisticHyperoptProblem::check_args(const VecRef& x, const VecRef& y, const SampleBatch& batch,
                                         std::size_t count) const {
  if (x.size() != dim_ || y.size() != dim_) {
    throw InvalidArgument("logistic problem: expected dimension " + std::to_string(dim_));
  }
  if (batch.worker < 0 || batch.worker >= workers()) throw InvalidArgument("batch worker out of range");
  if (batch.all) return;
  if (batch.indices.empty()) throw InvalidArgument("empty sample batch");
  for (int i : batch.indices) {
    if (i < 0 || static_cast<std::size_t>(i) >= count) throw InvalidArgument("batch index out of range");
  }
}

Vec LogisticHyperoptProblem::loss_gradient(const SparseDataset& set, const VecRef& y, const SampleBatch& batch) const {
  Vec g = Vec::Zero(dim_);
  for_each_row(set, batch, [&](std::size_t i, double w) {
    const double b = set.label(i);
    set.axpy(i, -w * b * sigmoid(-b * set.dot(i, y)), g);
  });
  return g;
}

double LogisticHyperoptProblem::mean_loss(const SparseDataset& set, const VecRef& y) const {
  double total = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) total += softplus(-set.label(i) * set.dot(i, y));
  return total / static_cast<double>(set.size());
}

Vec LogisticHyperoptProblem::upper_grad_x(const VecRef& x, const VecRef& y, const SampleBatch& xi) const {
  check_args(x, y, xi, upper_samples(xi.worker));
  return Vec::Zero(dim_);
}

Vec LogisticHyperoptProblem::upper_grad_y(const VecRef& x, const VecRef& y, const SampleBatch& xi) const {
  check_args(x, y, xi, upper_samples(xi.worker));
  return loss_gradient(data_.validation[xi.worker], y, xi);
}

Vec LogisticHyperoptProblem::lower_grad_y(const VecRef& x, const VecRef& y, const SampleBatch& zeta) const {
  check_args(x, y, zeta, lower_samples(zeta.worker));
  Vec g = loss_gradient(data_.train[zeta.worker], y, zeta);
  g.array() += (2.0 / dim_) * x.array().exp() * y.array();
  return g;
}

Vec LogisticHyperoptProblem::jacobian_vec(const VecRef& x, const VecRef& y, const VecRef& z,
                                          const SampleBatch& zeta) const {
  check_args(x, y, zeta, lower_samples(zeta.worker));
  if (z.size() != dim_) throw InvalidArgument("logistic problem: z has wrong dimension");
  return ((2.0 / dim_) * x.array().exp() * y.array() * z.array()).matrix();
}

Vec LogisticHyperoptProblem::hessian_vec(const VecRef& x, const VecRef& y, const VecRef& z,
                                         const SampleBatch& zeta) const {
  check_args(x, y, zeta, lower_samples(zeta.worker));
  if (z.size() != dim_) throw InvalidArgument("logistic problem: z has wrong dimension");
  const SparseDataset& set = data_.train[zeta.worker];
  Vec h = Vec::Zero(dim_);
  for_each_row(set, zeta, [&](std::size_t i, double w) {
    const double s = sigmoid(set.label(i) * set.dot(i, y));
    set.axpy(i, w * s * (1.0 - s) * set.dot(i, z), h);
  });
  h.array() += (2.0 / dim_) * x.array().exp() * z.array();
  return h;
}

double LogisticHyperoptProblem::upper_loss(int worker, const VecRef& x, const VecRef& y) const {
  check_args(x, y, SampleBatch::full(worker), 0);
  return mean_loss(data_.validation[worker], y);
}

double LogisticHyperoptProblem::lower_loss(int worker, const VecRef& x, const VecRef& y) const {
  check_args(x, y, SampleBatch::full(worker), 0);
  return mean_loss(data_.train[worker], y) + (x.array().exp() * y.array().square()).sum() / dim_;
}

std::optional<double> LogisticHyperoptProblem::test_accuracy(const VecRef& y) const {
  const SparseDataset& test = data_.test;
  if (test.empty()) return std::nullopt;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const int predicted = test.dot(i, y) >= 0.0 ? 1 : -1;
    correct += predicted == test.label(i);
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

void LogisticHyperoptProblem::constrain_upper(Eigen::Ref<Eigen::VectorXd> x) const {
  x = x.cwiseMax(options_.x_min_bound);
}

}  // namespace dsbo
