#include "dsbo/topology.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <random>
#include <sstream>

#include "dsbo/errors.hpp"
#include "dsbo/random.hpp"

namespace dsbo {

namespace {

// Connectivity is judged on the spectrum; a numerically-one second
// eigenvalue means at least two components.
constexpr double kConnectedMargin = 1e-10;

std::vector<std::vector<int>> off_diagonal_support(const Eigen::MatrixXd& w) {
  std::vector<std::vector<int>> nbrs(w.rows());
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      if (i != j && w(i, j) != 0.0) nbrs[i].push_back(static_cast<int>(j));
    }
  }
  return nbrs;
}

// Uniform weights 1/(deg+1) over an adjacency given as neighbor multisets.
// Duplicate entries in a multiset merge their weights into one edge.
Eigen::MatrixXd regular_weights(const std::vector<std::vector<int>>& adjacency, double share) {
  const auto n = static_cast<Eigen::Index>(adjacency.size());
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    w(i, i) = share;
    for (int j : adjacency[i]) w(i, j) += share;
  }
  return w;
}

bool connected(const std::vector<std::vector<char>>& adj) {
  const int n = static_cast<int>(adj.size());
  std::vector<char> seen(n, 0);
  std::queue<int> frontier;
  frontier.push(0);
  seen[0] = 1;
  int reached = 1;
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop();
    for (int v = 0; v < n; ++v) {
      if (adj[u][v] && !seen[v]) {
        seen[v] = 1;
        ++reached;
        frontier.push(v);
      }
    }
  }
  return reached == n;
}

}  // namespace

MixingMatrix::MixingMatrix(std::string name, Eigen::MatrixXd weights)
    : name_(std::move(name)), weights_(std::move(weights)) {
  if (weights_.rows() != weights_.cols() || weights_.rows() < 1) {
    throw InvalidArgument("mixing matrix must be square and non-empty");
  }
  neighbors_ = off_diagonal_support(weights_);
  lambda2_ = spectral_lambda(weights_);
}

int MixingMatrix::total_degree() const {
  int total = 0;
  for (const auto& n : neighbors_) total += static_cast<int>(n.size());
  return total;
}

Eigen::VectorXd MixingMatrix::mix_column(const Eigen::MatrixXd& cols, int k, CommCounter* counter) const {
  Eigen::VectorXd out = cols.col(k) * weights_(k, k);
  for (int j : neighbors_[k]) {
    out.noalias() += cols.col(j) * weights_(j, k);
  }
  if (counter != nullptr) {
    counter->floats += static_cast<std::uint64_t>(neighbors_[k].size()) * cols.rows();
    counter->messages += neighbors_[k].size();
  }
  return out;
}

Eigen::MatrixXd MixingMatrix::mix(const Eigen::MatrixXd& cols, CommCounter* counter) const {
  if (cols.cols() != size()) throw InvalidArgument("mix: column count does not match worker count");
  Eigen::MatrixXd out(cols.rows(), cols.cols());
  for (int k = 0; k < size(); ++k) out.col(k) = mix_column(cols, k, counter);
  return out;
}

MixingMatrix build_ring(int workers) {
  if (workers < 2) throw InvalidArgument("ring needs at least 2 workers");
  std::vector<std::vector<int>> adj(workers);
  for (int k = 0; k < workers; ++k) {
    const int left = (k + workers - 1) % workers;
    const int right = (k + 1) % workers;
    adj[k].push_back(left);
    if (right != left) adj[k].push_back(right);
  }
  const double share = 1.0 / static_cast<double>(adj[0].size() + 1);
  return MixingMatrix("ring", regular_weights(adj, share));
}

MixingMatrix build_torus(int rows, int cols) {
  if (rows < 2 || cols < 2) throw InvalidArgument("torus needs rows >= 2 and cols >= 2");
  const int n = rows * cols;
  std::vector<std::vector<int>> adj(n);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int k = r * cols + c;
      adj[k] = {((r + rows - 1) % rows) * cols + c, ((r + 1) % rows) * cols + c,
                r * cols + (c + cols - 1) % cols, r * cols + (c + 1) % cols};
    }
  }
  return MixingMatrix("torus", regular_weights(adj, 1.0 / 5.0));
}

MixingMatrix build_complete(int workers) {
  if (workers < 1) throw InvalidArgument("complete graph needs at least 1 worker");
  const double share = 1.0 / workers;
  return MixingMatrix("complete", Eigen::MatrixXd::Constant(workers, workers, share));
}

MixingMatrix build_random(int workers, double edge_probability, std::uint64_t seed) {
  if (workers < 2) throw InvalidArgument("random graph needs at least 2 workers");
  if (!(edge_probability > 0.0 && edge_probability <= 1.0)) {
    throw InvalidArgument("edge probability must lie in (0, 1]");
  }
  constexpr int kMaxRetries = 1000;
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    std::vector<std::vector<char>> adj(workers, std::vector<char>(workers, 0));
    for (int i = 0; i < workers; ++i) {
      for (int j = i + 1; j < workers; ++j) {
        if (unit_uniform(rng) < edge_probability) adj[i][j] = adj[j][i] = 1;
      }
    }
    if (!connected(adj)) continue;

    std::vector<int> deg(workers, 0);
    for (int i = 0; i < workers; ++i) {
      for (int j = 0; j < workers; ++j) deg[i] += adj[i][j];
    }
    // Metropolis-Hastings weights.
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(workers, workers);
    for (int i = 0; i < workers; ++i) {
      for (int j = i + 1; j < workers; ++j) {
        if (!adj[i][j]) continue;
        const double wij = 1.0 / (1.0 + std::max(deg[i], deg[j]));
        w(i, j) = wij;
        w(j, i) = wij;
      }
    }
    for (int i = 0; i < workers; ++i) {
      double off = 0.0;
      for (int j = 0; j < workers; ++j) {
        if (j != i) off += w(i, j);
      }
      w(i, i) = 1.0 - off;
    }
    return MixingMatrix("random", std::move(w));
  }
  throw ConstructionFailure("random graph not connected after " + std::to_string(kMaxRetries) +
                            " attempts (K=" + std::to_string(workers) +
                            ", p=" + std::to_string(edge_probability) + ")");
}

double spectral_lambda(const Eigen::MatrixXd& weights) {
  const auto n = weights.rows();
  if (n <= 1) return 0.0;
  // Only the lower triangle is read; callers are expected to pass symmetric input.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(weights, Eigen::EigenvaluesOnly);
  std::vector<double> mags(n);
  for (Eigen::Index i = 0; i < n; ++i) mags[i] = std::abs(solver.eigenvalues()(i));
  std::sort(mags.begin(), mags.end(), std::greater<>());
  return mags[1];
}

MixingDiagnostics validate(const Eigen::MatrixXd& weights) {
  MixingDiagnostics d;
  if (weights.rows() != weights.cols() || weights.rows() == 0) {
    d.symmetry_defect = std::numeric_limits<double>::infinity();
    return d;
  }
  const auto n = weights.rows();
  d.symmetry_defect = (weights - weights.transpose()).cwiseAbs().maxCoeff();
  d.row_sum_defect = (weights.rowwise().sum().array() - 1.0).abs().maxCoeff();
  d.column_sum_defect = (weights.colwise().sum().array() - 1.0).abs().maxCoeff();
  d.min_entry = weights.minCoeff();
  // Symmetrize before the eigensolve so an asymmetric input still gets a spectrum.
  const Eigen::MatrixXd sym = 0.5 * (weights + weights.transpose());
  d.lambda2 = n > 1 ? spectral_lambda(sym) : 0.0;
  d.passed = d.symmetry_defect == 0.0 && d.row_sum_defect <= kRowSumTolerance &&
             d.column_sum_defect <= kRowSumTolerance && d.min_entry >= 0.0 &&
             d.lambda2 < 1.0 - kConnectedMargin;
  return d;
}

std::string MixingDiagnostics::summary() const {
  std::ostringstream os;
  os << (passed ? "pass" : "fail") << " symmetry_defect=" << symmetry_defect
     << " row_sum_defect=" << row_sum_defect << " column_sum_defect=" << column_sum_defect
     << " min_entry=" << min_entry << " lambda2=" << lambda2;
  return os.str();
}

}  // namespace dsbo
