#include "dsbo/oracle.hpp"

#include "dsbo/errors.hpp"
#include "dsbo/random.hpp"

namespace dsbo {

SampleBatch sample_batch(int worker, std::size_t count, std::size_t size, std::mt19937_64& stream) {
  if (count == 0) throw InvalidArgument("sample_batch: worker " + std::to_string(worker) + " has no samples");
  if (size == 0) throw InvalidArgument("sample_batch: batch size must be positive");
  SampleBatch batch{worker, {}, false};
  batch.indices.reserve(size);
  for (std::size_t i = 0; i < size; ++i) batch.indices.push_back(static_cast<int>(uniform_index(stream, count)));
  return batch;
}

Vec hypergradient_estimate(const BilevelOracle& oracle, const VecRef& x, const VecRef& y, const VecRef& z,
                           const SampleBatch& xi, const SampleBatch& zeta) {
  return oracle.upper_grad_x(x, y, xi) - oracle.jacobian_vec(x, y, z, zeta);
}

Vec z_gradient_estimate(const BilevelOracle& oracle, const VecRef& x, const VecRef& y, const VecRef& z,
                        const SampleBatch& xi, const SampleBatch& zeta) {
  return oracle.hessian_vec(x, y, z, zeta) - oracle.upper_grad_y(x, y, xi);
}

}  // namespace dsbo
