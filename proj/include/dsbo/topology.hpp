#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dsbo {

// Counts floats moved between distinct workers by the mixing step. Self
// weights never count as communication.
struct CommCounter {
  std::uint64_t floats = 0;
  std::uint64_t messages = 0;
};

// Symmetric doubly-stochastic gossip weights over an undirected graph.
// Immutable once built; share freely across threads.
class MixingMatrix {
 public:
  // Wraps an arbitrary K x K weight matrix. Neighbors are the off-diagonal
  // nonzeros. No validity check is made here; see validate().
  MixingMatrix(std::string name, Eigen::MatrixXd weights);

  int size() const { return static_cast<int>(weights_.rows()); }
  const Eigen::MatrixXd& weights() const { return weights_; }
  double weight(int i, int j) const { return weights_(i, j); }
  const std::string& name() const { return name_; }

  // Off-diagonal neighbors of node k in increasing order.
  const std::vector<int>& neighbors(int k) const { return neighbors_[k]; }
  int degree(int k) const { return static_cast<int>(neighbors_[k].size()); }
  int total_degree() const;

  // Second-largest eigenvalue magnitude, cached at construction.
  double lambda2() const { return lambda2_; }
  double spectral_gap() const { return 1.0 - lambda2_; }

  // Column k of the result is sum_j cols(:, j) * E(j, k), i.e. cols * E.
  // Summation runs over self first, then neighbors in increasing order, so
  // the result is independent of how columns are scheduled.
  Eigen::VectorXd mix_column(const Eigen::MatrixXd& cols, int k, CommCounter* counter = nullptr) const;
  Eigen::MatrixXd mix(const Eigen::MatrixXd& cols, CommCounter* counter = nullptr) const;

 private:
  std::string name_;
  Eigen::MatrixXd weights_;
  std::vector<std::vector<int>> neighbors_;
  double lambda2_;
};

MixingMatrix build_ring(int workers);
MixingMatrix build_torus(int rows, int cols);
MixingMatrix build_random(int workers, double edge_probability, std::uint64_t seed);
MixingMatrix build_complete(int workers);

// max(|lambda_2|, |lambda_K|) of a symmetric matrix via full eigendecomposition.
double spectral_lambda(const Eigen::MatrixXd& weights);
inline double spectral_lambda(const MixingMatrix& e) { return e.lambda2(); }

struct MixingDiagnostics {
  double symmetry_defect = 0.0;    // max |E_ij - E_ji|
  double row_sum_defect = 0.0;     // max |sum_j E_ij - 1|
  double column_sum_defect = 0.0;  // max |sum_i E_ij - 1|
  double min_entry = 0.0;
  double lambda2 = 0.0;
  bool passed = false;

  std::string summary() const;
};

inline constexpr double kRowSumTolerance = 1e-12;

MixingDiagnostics validate(const Eigen::MatrixXd& weights);
inline MixingDiagnostics validate(const MixingMatrix& e) { return validate(e.weights()); }

}  // namespace dsbo
