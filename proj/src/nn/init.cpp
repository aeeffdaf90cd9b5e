#include "hsi/nn/init.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace hsi::nn {

DenseTensor glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    if (fan_in + fan_out == 0) throw std::invalid_argument("glorot_uniform needs a positive fan");
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    DenseTensor t(shape);
    for (double& v : t.data()) v = u(rng);
    return t;
}

double sgd_step(std::span<DenseTensor> params, std::span<const DenseTensor> grads, std::size_t iter,
                const sdtn::Hyperparams& hp) {
    if (params.size() != grads.size()) throw std::invalid_argument("sgd_step: parameter/gradient count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].shape() != grads[i].shape())
            throw std::invalid_argument("sgd_step: gradient " + std::to_string(i) + " has the wrong shape");
    const double lr = sdtn::learning_rate(hp, iter);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].data();
        const auto g = grads[i].data();
        for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
    }
    return lr;
}

}  // namespace hsi::nn
