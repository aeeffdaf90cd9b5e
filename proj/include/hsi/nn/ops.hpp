#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "hsi/nn/graph.hpp"
#include "hsi/nn/kernels.hpp"

namespace hsi::nn {

/// Convolution layer description. `kernel` has 3 extents (D, H, W) for
/// conv3d and 2 extents (H, W) for conv2d. Weights are laid out
/// [out_channels, in_channels, kernel...].
struct ConvSpec {
    std::vector<std::size_t> kernel;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t stride = 1;
    Padding padding = Padding::Same;

    [[nodiscard]] Shape weight_shape() const;
    void validate(std::size_t spatial_rank) const;
};

Var conv3d(const Var& x, const Var& w, const std::optional<Var>& bias, const ConvSpec& spec);
Var conv2d(const Var& x, const Var& w, const std::optional<Var>& bias, const ConvSpec& spec);

/// One (kH x kW) filter per channel; w is [C, 1, kH, kW], no bias.
Var depthwise_conv2d(const Var& x, const Var& w, const ConvSpec& spec);

/// Pointwise(Depthwise(x)). depth_spec maps C -> C with a k x k kernel,
/// point_spec maps C -> C_out with a 1 x 1 kernel. Neither carries a bias.
Var depthwise_separable(const Var& x, const Var& w_depth, const Var& w_point, const ConvSpec& depth_spec,
                        const ConvSpec& point_spec);

/// C * k_h * k_w + C * C_out.
[[nodiscard]] std::size_t depthwise_separable_parameters(const ConvSpec& depth_spec, const ConvSpec& point_spec);

Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, std::vector<std::size_t> perm);

/// Concatenation along axis 0; all other extents must agree.
Var concat_channels(const Var& a, const Var& b);

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var add(const Var& a, const Var& b);
Var scale(const Var& x, double s);

/// W x + b with x flattened; W is [out, in], b is [out] (optional).
Var affine(const Var& x, const Var& w, const std::optional<Var>& b);

/// Mean over every axis but the first: [C, ...] -> [C].
Var global_avg_pool(const Var& x);

/// x[c, ...] * s[c].
Var scale_channels(const Var& x, const Var& s);

struct AttentionParams {
    Var fc1_w;  ///< [C/r, C]
    Var fc1_b;  ///< [C/r]
    Var fc2_w;  ///< [C, C/r]
    Var fc2_b;  ///< [C]
};

/// Squeeze-excitation gate: sigmoid(FC2(relu(FC1(gap(x))))) applied per channel.
Var channel_attention(const Var& x, const AttentionParams& p);

/// Bottleneck width for channel attention: ceil(C / reduction).
[[nodiscard]] std::size_t attention_width(std::size_t channels, std::size_t reduction);

/// Cross-entropy of softmax(logits) against a 1-based label; scalar output.
Var softmax_xent(const Var& logits, int label);

/// ||a - b||^2 as a scalar.
Var squared_distance(const Var& a, const Var& b);

/// Numerically stable softmax (max subtracted before exponentiation).
[[nodiscard]] std::vector<double> softmax(std::span<const double> logits);

}  // namespace hsi::nn
