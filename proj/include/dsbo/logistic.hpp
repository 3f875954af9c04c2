#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dsbo/dataset.hpp"
#include "dsbo/oracle.hpp"

namespace dsbo {

// Binary logistic hyperparameter tuning with one regularization weight per
// feature:
//   f_k(x, y) = mean over validation_k of log(1 + exp(-b y'a))
//   g_k(x, y) = mean over train_k of log(1 + exp(-b y'a)) + (1/d) sum_q exp(x_q) y_q^2
// Both x and y live in R^d.
struct LogisticData {
  std::vector<SparseDataset> train;       // lower-level samples, one per worker
  std::vector<SparseDataset> validation;  // upper-level samples, one per worker
  SparseDataset test;
};

struct LogisticOptions {
  // x_q is clipped from below after every update; this keeps the lower level
  // (2/d) exp(x_min)-strongly convex.
  double x_min_bound = -4.0;
  // Only used to declare a smoothness constant.
  double x_reference_max = 4.0;
};

// Splits 10% test / 70% of rest train / remainder validation, then shards
// training and validation sets with the imbalance plan, or evenly when the
// plan is empty. The report describes the training shards.
LogisticData prepare_logistic_data(const SparseDataset& all, const PartitionPlan& plan, int workers,
                                   std::uint64_t seed, std::vector<ShardReport>* report = nullptr);

class LogisticHyperoptProblem final : public BilevelOracle {
 public:
  LogisticHyperoptProblem(LogisticData data, LogisticOptions options = {});

  int workers() const override { return static_cast<int>(data_.train.size()); }
  int dim_x() const override { return dim_; }
  int dim_y() const override { return dim_; }
  std::size_t upper_samples(int k) const override { return data_.validation[k].size(); }
  std::size_t lower_samples(int k) const override { return data_.train[k].size(); }
  ProblemConstants constants() const override { return constants_; }

  Vec upper_grad_x(const VecRef& x, const VecRef& y, const SampleBatch& xi) const override;
  Vec upper_grad_y(const VecRef& x, const VecRef& y, const SampleBatch& xi) const override;
  Vec lower_grad_y(const VecRef& x, const VecRef& y, const SampleBatch& zeta) const override;
  Vec jacobian_vec(const VecRef& x, const VecRef& y, const VecRef& z, const SampleBatch& zeta) const override;
  Vec hessian_vec(const VecRef& x, const VecRef& y, const VecRef& z, const SampleBatch& zeta) const override;

  double upper_loss(int worker, const VecRef& x, const VecRef& y) const override;
  double lower_loss(int worker, const VecRef& x, const VecRef& y) const override;

  std::optional<double> test_accuracy(const VecRef& y) const override;
  void constrain_upper(Eigen::Ref<Eigen::VectorXd> x) const override;

  const LogisticData& data() const { return data_; }
  const LogisticOptions& options() const { return options_; }

 private:
  // Mean logistic-loss gradient over the selected rows of `set`.
  Vec loss_gradient(const SparseDataset& set, const VecRef& y, const SampleBatch& batch) const;
  double mean_loss(const SparseDataset& set, const VecRef& y) const;
  void check_args(const VecRef& x, const VecRef& y, const SampleBatch& batch, std::size_t count) const;

  LogisticData data_;
  LogisticOptions options_;
  int dim_ = 0;
  ProblemConstants constants_;
};

double sigmoid(double t);
double softplus(double t);  // log(1 + exp(t))

}  // namespace dsbo
