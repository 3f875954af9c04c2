#include "dsbo/quadratic.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "dsbo/errors.hpp"
#include "dsbo/random.hpp"

namespace dsbo {

namespace {

constexpr const char* kFormatTag = "dsbo-quadratic/1";

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double scale, std::mt19937_64& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * standard_normal(rng);
  }
  return m;
}

// Q diag(spectrum) Q' with Q from the QR of a Gaussian matrix. The spectrum
// always contains both endpoints so the declared bounds are attained.
Eigen::MatrixXd random_spd(int n, double lo, double hi, std::mt19937_64& rng) {
  const Eigen::MatrixXd g = gaussian_matrix(n, n, 1.0, rng);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  Eigen::VectorXd spectrum(n);
  for (int i = 0; i < n; ++i) spectrum[i] = lo + (hi - lo) * unit_uniform(rng);
  spectrum[0] = lo;
  if (n > 1) spectrum[n - 1] = hi;
  const Eigen::MatrixXd a = q * spectrum.asDiagonal() * q.transpose();
  return 0.5 * (a + a.transpose());
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  std::vector<double> flat;
  flat.reserve(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(m(i, j));
  }
  return flat;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, int rows, int cols, const char* what) {
  const auto flat = j.get<std::vector<double>>();
  if (flat.size() != static_cast<std::size_t>(rows) * cols) {
    throw ParseError(0, std::string("quadratic file: ") + what + " has wrong length");
  }
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int c = 0; c < cols; ++c) m(i, c) = flat[static_cast<std::size_t>(i) * cols + c];
  }
  return m;
}

void require_dim(const VecRef& v, int n, const char* what) {
  if (v.size() != n) {
    throw InvalidArgument(std::string(what) + " has dimension " + std::to_string(v.size()) + ", expected " +
                          std::to_string(n));
  }
}

}  // namespace

void QuadraticInstance::check() const {
  const int k = workers();
  if (k < 1 || dim_x < 1 || dim_y < 1) throw InvalidArgument("quadratic instance: empty dimensions");
  if (static_cast<int>(B.size()) != k || static_cast<int>(c.size()) != k || static_cast<int>(d.size()) != k) {
    throw InvalidArgument("quadratic instance: per-worker lists differ in length");
  }
  for (int w = 0; w < k; ++w) {
    if (A[w].rows() != dim_y || A[w].cols() != dim_y || B[w].rows() != dim_y || B[w].cols() != dim_x ||
        c[w].size() != dim_y || d[w].size() != dim_y) {
      throw InvalidArgument("quadratic instance: worker " + std::to_string(w) + " has inconsistent shapes");
    }
  }
  if (!(mu > 0.0) || ell_gy < mu) throw InvalidArgument("quadratic instance: need 0 < mu <= ell_gy");
  if (rho < 0.0 || noise_sigma < 0.0) throw InvalidArgument("quadratic instance: negative rho or noise");
  if (samples == 0) throw InvalidArgument("quadratic instance: need at least one virtual sample");
}

QuadraticInstance generate_quadratic(const QuadraticOptions& o) {
  if (o.workers < 1 || o.dim_x < 1 || o.dim_y < 1) throw InvalidArgument("generate_quadratic: bad shape");
  if (!(o.mu > 0.0) || o.ell_gy < o.mu) throw InvalidArgument("generate_quadratic: need 0 < mu <= ell_gy");

  QuadraticInstance inst;
  inst.dim_x = o.dim_x;
  inst.dim_y = o.dim_y;
  inst.rho = o.rho;
  inst.samples = o.samples;
  inst.noise_sigma = o.noise_sigma;
  inst.noise_seed = splitmix64(o.seed);
  inst.mu = o.mu;
  inst.ell_gy = o.ell_gy;
  inst.x_bound = o.x_bound;

  for (int k = 0; k < o.workers; ++k) {
    auto rng = derived_stream(o.seed, stream_purpose::kQuadraticInstance, o.heterogeneous ? k : 0);
    inst.A.push_back(random_spd(o.dim_y, o.mu, o.ell_gy, rng));
    inst.B.push_back(gaussian_matrix(o.dim_y, o.dim_x, o.coupling / std::sqrt(static_cast<double>(o.dim_x)), rng));
    inst.c.push_back(gaussian_matrix(o.dim_y, 1, o.offset, rng));
    inst.d.push_back(gaussian_matrix(o.dim_y, 1, o.offset, rng));
  }
  return inst;
}

void save_quadratic(std::ostream& out, const QuadraticInstance& inst) {
  inst.check();
  nlohmann::json j;
  j["format"] = kFormatTag;
  j["workers"] = inst.workers();
  j["dim_x"] = inst.dim_x;
  j["dim_y"] = inst.dim_y;
  j["rho"] = inst.rho;
  j["samples"] = inst.samples;
  j["noise_sigma"] = inst.noise_sigma;
  j["noise_seed"] = inst.noise_seed;
  j["mu"] = inst.mu;
  j["ell_gy"] = inst.ell_gy;
  j["x_bound"] = inst.x_bound;
  auto& per = j["per_worker"] = nlohmann::json::array();
  for (int k = 0; k < inst.workers(); ++k) {
    per.push_back({{"A", matrix_to_json(inst.A[k])},
                   {"B", matrix_to_json(inst.B[k])},
                   {"c", matrix_to_json(inst.c[k])},
                   {"d", matrix_to_json(inst.d[k])}});
  }
  out << j.dump(1) << '\n';
}

QuadraticInstance load_quadratic(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(0, std::string("quadratic file: ") + e.what());
  }
  if (j.value("format", "") != kFormatTag) throw ParseError(0, "quadratic file: missing or unknown format tag");
  try {
    QuadraticInstance inst;
    inst.dim_x = j.at("dim_x").get<int>();
    inst.dim_y = j.at("dim_y").get<int>();
    inst.rho = j.at("rho").get<double>();
    inst.samples = j.at("samples").get<std::size_t>();
    inst.noise_sigma = j.at("noise_sigma").get<double>();
    inst.noise_seed = j.at("noise_seed").get<std::uint64_t>();
    inst.mu = j.at("mu").get<double>();
    inst.ell_gy = j.at("ell_gy").get<double>();
    inst.x_bound = j.at("x_bound").get<double>();
    for (const auto& w : j.at("per_worker")) {
      inst.A.push_back(matrix_from_json(w.at("A"), inst.dim_y, inst.dim_y, "A"));
      inst.B.push_back(matrix_from_json(w.at("B"), inst.dim_y, inst.dim_x, "B"));
      inst.c.push_back(matrix_from_json(w.at("c"), inst.dim_y, 1, "c"));
      inst.d.push_back(matrix_from_json(w.at("d"), inst.dim_y, 1, "d"));
    }
    if (inst.workers() != j.at("workers").get<int>()) throw ParseError(0, "quadratic file: worker count mismatch");
    inst.check();
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("quadratic file: ") + e.what());
  }
}

QuadraticInstance load_quadratic_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return load_quadratic(in);
}

QuadraticBilevelProblem::QuadraticBilevelProblem(QuadraticInstance instance) : inst_(std::move(instance)) {
  inst_.check();
  const int k = inst_.workers();
  A_mean_ = Eigen::MatrixXd::Zero(inst_.dim_y, inst_.dim_y);
  B_mean_ = Eigen::MatrixXd::Zero(inst_.dim_y, inst_.dim_x);
  c_mean_ = Eigen::VectorXd::Zero(inst_.dim_y);
  d_mean_ = Eigen::VectorXd::Zero(inst_.dim_y);
  double d_max = 0.0;
  for (int w = 0; w < k; ++w) {
    A_mean_ += inst_.A[w];
    B_mean_ += inst_.B[w];
    c_mean_ += inst_.c[w];
    d_mean_ += inst_.d[w];
    d_max = std::max(d_max, inst_.d[w].norm());
  }
  A_mean_ /= k;
  B_mean_ /= k;
  c_mean_ /= k;
  d_mean_ /= k;
  A_mean_solver_.compute(A_mean_);

  // ||y*(x) - d_k|| <= (||B_mean|| x_bound + ||c_mean||) / mu + max_k ||d_k|| on ||x|| <= x_bound.
  const double b_norm = Eigen::JacobiSVD<Eigen::MatrixXd>(B_mean_).singularValues()(0);
  constants_.mu = inst_.mu;
  constants_.ell_gy = inst_.ell_gy;
  constants_.c_fy = (b_norm * inst_.x_bound + c_mean_.norm()) / inst_.mu + d_max;

  if (inst_.noise_sigma > 0.0) {
    const auto n = static_cast<Eigen::Index>(inst_.samples);
    for (int w = 0; w < k; ++w) {
      auto rng = derived_stream(inst_.noise_seed, stream_purpose::kQuadraticNoise, w);
      NoiseTable t;
      t.upper_x = gaussian_matrix(inst_.dim_x, n, inst_.noise_sigma, rng);
      t.upper_y = gaussian_matrix(inst_.dim_y, n, inst_.noise_sigma, rng);
      t.lower_y = gaussian_matrix(inst_.dim_y, n, inst_.noise_sigma, rng);
      // Center so that sampling with replacement is exactly unbiased.
      for (Eigen::MatrixXd* m : {&t.upper_x, &t.upper_y, &t.lower_y}) {
        const Eigen::VectorXd mean = m->rowwise().mean();
        m->colwise() -= mean;
      }
      noise_.push_back(std::move(t));
    }
  }
}

void QuadraticBilevelProblem::check_batch(const SampleBatch& batch) const {
  if (batch.worker < 0 || batch.worker >= workers()) throw InvalidArgument("batch worker out of range");
  if (batch.all) return;
  if (batch.indices.empty()) throw InvalidArgument("empty sample batch");
  for (int i : batch.indices) {
    if (i < 0 || static_cast<std::size_t>(i) >= inst_.samples) throw InvalidArgument("batch index out of range");
  }
}

Vec QuadraticBilevelProblem::batch_noise(const Eigen::MatrixXd& table, const SampleBatch& batch) const {
  Vec acc = Vec::Zero(table.rows());
  for (int i : batch.indices) acc += table.col(i);
  return acc / static_cast<double>(batch.indices.size());
}

Vec QuadraticBilevelProblem::upper_grad_x(const VecRef& x, const VecRef& y, const SampleBatch& xi) const {
  require_dim(x, inst_.dim_x, "x");
  require_dim(y, inst_.dim_y, "y");
  check_batch(xi);
  Vec g = inst_.rho * x;
  if (!noise_.empty() && !xi.all) g += batch_noise(noise_[xi.worker].upper_x, xi);
  return g;
}

Vec QuadraticBilevelProblem::upper_grad_y(const VecRef& x, const VecRef& y, const SampleBatch& xi) const {
  require_dim(x, inst_.dim_x, "x");
  require_dim(y, inst_.dim_y, "y");
  check_batch(xi);
  Vec g = y - inst_.d[xi.worker];
  if (!noise_.empty() && !xi.all) g += batch_noise(noise_[xi.worker].upper_y, xi);
  return g;
}

Vec QuadraticBilevelProblem::lower_grad_y(const VecRef& x, const VecRef& y, const SampleBatch& zeta) const {
  require_dim(x, inst_.dim_x, "x");
  require_dim(y, inst_.dim_y, "y");
  check_batch(zeta);
  const int k = zeta.worker;
  Vec g = inst_.A[k] * y - inst_.B[k] * x - inst_.c[k];
  if (!noise_.empty() && !zeta.all) g += batch_noise(noise_[k].lower_y, zeta);
  return g;
}

Vec QuadraticBilevelProblem::jacobian_vec(const VecRef& x, const VecRef& y, const VecRef& z,
                                          const SampleBatch& zeta) const {
  require_dim(x, inst_.dim_x, "x");
  require_dim(y, inst_.dim_y, "y");
  require_dim(z, inst_.dim_y, "z");
  check_batch(zeta);
  return -(inst_.B[zeta.worker].transpose() * z);
}

Vec QuadraticBilevelProblem::hessian_vec(const VecRef& x, const VecRef& y, const VecRef& z,
                                         const SampleBatch& zeta) const {
  require_dim(x, inst_.dim_x, "x");
  require_dim(y, inst_.dim_y, "y");
  require_dim(z, inst_.dim_y, "z");
  check_batch(zeta);
  return inst_.A[zeta.worker] * z;
}

double QuadraticBilevelProblem::upper_loss(int worker, const VecRef& x, const VecRef& y) const {
  require_dim(x, inst_.dim_x, "x");
  require_dim(y, inst_.dim_y, "y");
  return 0.5 * (y - inst_.d[worker]).squaredNorm() + 0.5 * inst_.rho * x.squaredNorm();
}

double QuadraticBilevelProblem::lower_loss(int worker, const VecRef& x, const VecRef& y) const {
  require_dim(x, inst_.dim_x, "x");
  require_dim(y, inst_.dim_y, "y");
  return 0.5 * y.dot(inst_.A[worker] * y) - y.dot(inst_.B[worker] * x + inst_.c[worker]);
}

QuadraticBilevelProblem::Exact QuadraticBilevelProblem::exact(const VecRef& x) const {
  require_dim(x, inst_.dim_x, "x");
  Exact e;
  e.y_star = A_mean_solver_.solve(B_mean_ * x + c_mean_);
  e.z_star = A_mean_solver_.solve(e.y_star - d_mean_);
  // grad F = grad_x f - mean(J_k) z* with J_k = -B_k'
  e.hypergradient = inst_.rho * x + B_mean_.transpose() * e.z_star;
  return e;
}

double QuadraticBilevelProblem::objective(const VecRef& x) const {
  const Vec y = A_mean_solver_.solve(B_mean_ * x + c_mean_);
  double total = 0.0;
  for (int k = 0; k < workers(); ++k) total += upper_loss(k, x, y);
  return total / workers();
}

}  // namespace dsbo
