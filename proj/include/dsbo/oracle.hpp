#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace dsbo {

using Vec = Eigen::VectorXd;
using VecRef = Eigen::Ref<const Eigen::VectorXd>;

// Indices into one worker's local samples. Upper-level evaluations index the
// worker's upper samples, lower-level ones its lower samples. A batch built
// with full() stands for the whole local dataset.
struct SampleBatch {
  int worker = 0;
  std::vector<int> indices;
  bool all = false;

  static SampleBatch full(int worker) { return {worker, {}, true}; }
  std::size_t size() const { return indices.size(); }
};

// Problem constants used for the z-ball radius and strong-convexity checks.
struct ProblemConstants {
  double mu = 0.0;            // lower-level strong convexity in y
  double ell_gy = 0.0;        // lower-level smoothness in y
  double c_fy = 0.0;          // bound on ||grad_y f||
  double radius() const { return c_fy / mu; }
};

// Stochastic first- and second-order access to a K-worker bilevel problem
//   min_x (1/K) sum_k f_k(x, y*(x)),  y*(x) = argmin_y (1/K) sum_k g_k(x, y).
// Every evaluation is a deterministic function of (point, batch), so a batch
// can be replayed at an older point. Implementations must be safe to call
// concurrently from different workers.
class BilevelOracle {
 public:
  virtual ~BilevelOracle() = default;

  virtual int workers() const = 0;
  virtual int dim_x() const = 0;
  virtual int dim_y() const = 0;
  virtual std::size_t upper_samples(int worker) const = 0;
  virtual std::size_t lower_samples(int worker) const = 0;
  virtual ProblemConstants constants() const = 0;

  // grad_x f_k(x, y; xi)
  virtual Vec upper_grad_x(const VecRef& x, const VecRef& y, const SampleBatch& xi) const = 0;
  // grad_y f_k(x, y; xi)
  virtual Vec upper_grad_y(const VecRef& x, const VecRef& y, const SampleBatch& xi) const = 0;
  // grad_y g_k(x, y; zeta)
  virtual Vec lower_grad_y(const VecRef& x, const VecRef& y, const SampleBatch& zeta) const = 0;
  // (d^2 g_k / dx dy)(x, y; zeta) z, a d_x vector
  virtual Vec jacobian_vec(const VecRef& x, const VecRef& y, const VecRef& z, const SampleBatch& zeta) const = 0;
  // (d^2 g_k / dy^2)(x, y; zeta) z
  virtual Vec hessian_vec(const VecRef& x, const VecRef& y, const VecRef& z, const SampleBatch& zeta) const = 0;

  // Full local losses on worker k.
  virtual double upper_loss(int worker, const VecRef& x, const VecRef& y) const = 0;
  virtual double lower_loss(int worker, const VecRef& x, const VecRef& y) const = 0;

  // Exact global hypergradient when the problem has a closed form.
  virtual std::optional<Vec> exact_hypergradient(const VecRef& /*x*/) const { return std::nullopt; }
  // Held-out accuracy of the lower-level model, if the problem has one.
  virtual std::optional<double> test_accuracy(const VecRef& /*y*/) const { return std::nullopt; }
  // Feasible-set map applied to x after each update (identity by default).
  virtual void constrain_upper(Eigen::Ref<Eigen::VectorXd> /*x*/) const {}
};

// Uniform with replacement over [0, count) from the worker's own stream.
SampleBatch sample_batch(int worker, std::size_t count, std::size_t size, std::mt19937_64& stream);

// Stochastic estimator assembly for one worker:
//   G_F = grad_x f(xi) - J(zeta) z,   G_h = H(zeta) z - grad_y f(xi)
Vec hypergradient_estimate(const BilevelOracle& oracle, const VecRef& x, const VecRef& y, const VecRef& z,
                           const SampleBatch& xi, const SampleBatch& zeta);
Vec z_gradient_estimate(const BilevelOracle& oracle, const VecRef& x, const VecRef& y, const VecRef& z,
                        const SampleBatch& xi, const SampleBatch& zeta);

}  // namespace dsbo
