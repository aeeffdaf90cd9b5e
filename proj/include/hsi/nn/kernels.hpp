#pragma once

#include <array>
#include <cstddef>
#include <span>

namespace hsi::nn {

enum class Padding { Same, Valid };

/// Geometry of a grouped 3-D cross-correlation. 2-D convolutions use a depth
/// of 1 with a depth kernel of 1.
///
/// Layouts: x [C_in, D, H, W], w [C_out, C_in/groups, kD, kH, kW],
/// y [C_out, D', H', W']. Valid: out = (in - k) / s + 1. Same: out =
/// ceil(in / s) with the total padding (out-1)*s + k - in split so the
/// smaller half goes before.
struct ConvGeometry {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t groups = 1;
    std::array<std::size_t, 3> in{1, 1, 1};
    std::array<std::size_t, 3> kernel{1, 1, 1};
    std::array<std::size_t, 3> stride{1, 1, 1};
    std::array<std::size_t, 3> pad{0, 0, 0};
    std::array<std::size_t, 3> out{1, 1, 1};

    static ConvGeometry make(std::size_t in_channels, std::size_t out_channels, std::size_t groups,
                             std::array<std::size_t, 3> in, std::array<std::size_t, 3> kernel,
                             std::array<std::size_t, 3> stride, Padding padding);

    [[nodiscard]] std::size_t in_per_group() const noexcept { return in_channels / groups; }
    [[nodiscard]] std::size_t out_per_group() const noexcept { return out_channels / groups; }
    [[nodiscard]] std::size_t kernel_volume() const noexcept { return kernel[0] * kernel[1] * kernel[2]; }
    [[nodiscard]] std::size_t input_size() const noexcept { return in_channels * in[0] * in[1] * in[2]; }
    [[nodiscard]] std::size_t output_size() const noexcept { return out_channels * out[0] * out[1] * out[2]; }
    [[nodiscard]] std::size_t weight_size() const noexcept { return out_channels * in_per_group() * kernel_volume(); }
};

// OpenMP kernels. Each output element is reduced serially in a fixed order,
// so results are bitwise identical to the serial versions for any thread count.

/// y = conv(x, w) + bias; `bias` may be empty.
void conv_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                  std::span<const double> bias, std::span<double> y);
/// dx = conv^T(dy, w) (overwrites dx).
void conv_backward_input(const ConvGeometry& g, std::span<const double> dy, std::span<const double> w,
                         std::span<double> dx);
/// dw = correlation of dy with x, dbias = sum of dy (both overwritten; dbias may be empty).
void conv_backward_weight(const ConvGeometry& g, std::span<const double> dy, std::span<const double> x,
                          std::span<double> dw, std::span<double> dbias);

namespace serial {

void conv_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                  std::span<const double> bias, std::span<double> y);
void conv_backward_input(const ConvGeometry& g, std::span<const double> dy, std::span<const double> w,
                         std::span<double> dx);
void conv_backward_weight(const ConvGeometry& g, std::span<const double> dy, std::span<const double> x,
                          std::span<double> dw, std::span<double> dbias);

}  // namespace serial

}  // namespace hsi::nn
