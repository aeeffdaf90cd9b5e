#pragma once

#include <cstddef>
#include <random>
#include <span>

#include "hsi/sdtn.hpp"
#include "hsi/tensor.hpp"

namespace hsi::nn {

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
DenseTensor glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

/// p <- p - lr(iter) * g for every pair; returns the step size used.
double sgd_step(std::span<DenseTensor> params, std::span<const DenseTensor> grads, std::size_t iter,
                const sdtn::Hyperparams& hp);

}  // namespace hsi::nn
