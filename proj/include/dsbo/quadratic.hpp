#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dsbo/oracle.hpp"

namespace dsbo {

// Per-worker quadratic bilevel data
//   g_k(x, y) = 1/2 y'A_k y - y'(B_k x + c_k)
//   f_k(x, y) = 1/2 ||y - d_k||^2 + rho/2 ||x||^2
// so that d^2 g_k / dx dy = -B_k' (shape d_x x d_y).
struct QuadraticInstance {
  int dim_x = 0;
  int dim_y = 0;
  std::vector<Eigen::MatrixXd> A;  // d_y x d_y, symmetric positive definite
  std::vector<Eigen::MatrixXd> B;  // d_y x d_x
  std::vector<Eigen::VectorXd> c;
  std::vector<Eigen::VectorXd> d;
  double rho = 1.0;

  // Virtual samples per worker; each index carries a fixed Gaussian
  // perturbation of the three first-order gradients.
  std::size_t samples = 1000;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;

  // Declared curvature bounds on every A_k, and the radius of the x region
  // over which c_fy is certified.
  double mu = 1.0;
  double ell_gy = 1.0;
  double x_bound = 10.0;

  int workers() const { return static_cast<int>(A.size()); }
  void check() const;
};

struct QuadraticOptions {
  int workers = 8;
  int dim_x = 10;
  int dim_y = 10;
  double mu = 1.0;
  double ell_gy = 4.0;
  double coupling = 1.0;  // scale of B_k entries
  double offset = 1.0;    // scale of c_k and d_k entries
  bool heterogeneous = true;  // false: every worker gets worker 0's data
  double rho = 1.0;
  double noise_sigma = 0.0;
  std::size_t samples = 1000;
  double x_bound = 10.0;
  std::uint64_t seed = 0;
};

QuadraticInstance generate_quadratic(const QuadraticOptions& options);

// JSON with row-major number lists; doubles round-trip exactly.
void save_quadratic(std::ostream& out, const QuadraticInstance& instance);
QuadraticInstance load_quadratic(std::istream& in);
QuadraticInstance load_quadratic_file(const std::string& path);

class QuadraticBilevelProblem final : public BilevelOracle {
 public:
  explicit QuadraticBilevelProblem(QuadraticInstance instance);

  struct Exact {
    Vec y_star;
    Vec z_star;
    Vec hypergradient;
  };
  Exact exact(const VecRef& x) const;
  // F(x) = f(x, y*(x))
  double objective(const VecRef& x) const;

  const QuadraticInstance& instance() const { return inst_; }

  int workers() const override { return inst_.workers(); }
  int dim_x() const override { return inst_.dim_x; }
  int dim_y() const override { return inst_.dim_y; }
  std::size_t upper_samples(int) const override { return inst_.samples; }
  std::size_t lower_samples(int) const override { return inst_.samples; }
  ProblemConstants constants() const override { return constants_; }

  Vec upper_grad_x(const VecRef& x, const VecRef& y, const SampleBatch& xi) const override;
  Vec upper_grad_y(const VecRef& x, const VecRef& y, const SampleBatch& xi) const override;
  Vec lower_grad_y(const VecRef& x, const VecRef& y, const SampleBatch& zeta) const override;
  Vec jacobian_vec(const VecRef& x, const VecRef& y, const VecRef& z, const SampleBatch& zeta) const override;
  Vec hessian_vec(const VecRef& x, const VecRef& y, const VecRef& z, const SampleBatch& zeta) const override;

  double upper_loss(int worker, const VecRef& x, const VecRef& y) const override;
  double lower_loss(int worker, const VecRef& x, const VecRef& y) const override;

  std::optional<Vec> exact_hypergradient(const VecRef& x) const override { return exact(x).hypergradient; }

 private:
  // Centered per-index noise, one column per virtual sample.
  struct NoiseTable {
    Eigen::MatrixXd upper_x;
    Eigen::MatrixXd upper_y;
    Eigen::MatrixXd lower_y;
  };
  Vec batch_noise(const Eigen::MatrixXd& table, const SampleBatch& batch) const;
  void check_batch(const SampleBatch& batch) const;

  QuadraticInstance inst_;
  std::vector<NoiseTable> noise_;
  Eigen::MatrixXd A_mean_;
  Eigen::MatrixXd B_mean_;
  Eigen::VectorXd c_mean_;
  Eigen::VectorXd d_mean_;
  Eigen::LDLT<Eigen::MatrixXd> A_mean_solver_;
  ProblemConstants constants_;
};

}  // namespace dsbo
