#include "hsi/nn/kernels.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace hsi::nn {

ConvGeometry ConvGeometry::make(std::size_t in_channels, std::size_t out_channels, std::size_t groups,
                                std::array<std::size_t, 3> in, std::array<std::size_t, 3> kernel,
                                std::array<std::size_t, 3> stride, Padding padding) {
    if (groups == 0 || in_channels == 0 || out_channels == 0 || in_channels % groups != 0 ||
        out_channels % groups != 0)
        throw std::invalid_argument("convolution channels must be positive multiples of the group count");
    ConvGeometry g;
    g.in_channels = in_channels;
    g.out_channels = out_channels;
    g.groups = groups;
    g.in = in;
    g.kernel = kernel;
    g.stride = stride;
    for (std::size_t a = 0; a < 3; ++a) {
        if (in[a] == 0 || kernel[a] == 0 || stride[a] == 0)
            throw std::invalid_argument("convolution extents, kernels and strides must be >= 1");
        if (padding == Padding::Valid) {
            if (kernel[a] > in[a])
                throw std::invalid_argument("valid convolution kernel " + std::to_string(kernel[a]) +
                                            " exceeds input extent " + std::to_string(in[a]));
            g.out[a] = (in[a] - kernel[a]) / stride[a] + 1;
            g.pad[a] = 0;
        } else {
            g.out[a] = (in[a] + stride[a] - 1) / stride[a];
            const std::size_t need = (g.out[a] - 1) * stride[a] + kernel[a];
            g.pad[a] = need > in[a] ? (need - in[a]) / 2 : 0;
        }
    }
    return g;
}

// The kernels below work on whole rows along the last axis: a row of outputs
// is accumulated tap by tap, so each output element still receives its terms
// in the order (channel, kz, ky, kx) while the inner loop is a contiguous
// multiply-add. The OpenMP and serial drivers call the same row functions and
// only differ in how rows are distributed.
namespace {

void check_sizes(const ConvGeometry& g, std::size_t x, std::size_t w, std::size_t bias, std::size_t y) {
    if (x != g.input_size() || w != g.weight_size() || y != g.output_size() ||
        (bias != 0 && bias != g.out_channels))
        throw std::invalid_argument("convolution buffer sizes do not match geometry");
}

struct Range {
    std::size_t lo = 0;
    std::size_t hi = 0;  // exclusive; empty when hi <= lo
};

// Output positions o along `axis` whose tap k reads an input inside the volume.
inline Range outputs(const ConvGeometry& g, std::size_t axis, std::size_t k) {
    const long s = static_cast<long>(g.stride[axis]);
    const long shift = static_cast<long>(g.pad[axis]) - static_cast<long>(k);  // o*s must lie in [shift, in-1+shift]
    const long lo = shift <= 0 ? 0 : (shift + s - 1) / s;
    const long top = static_cast<long>(g.in[axis]) - 1 + shift;
    const long hi = top < 0 ? 0 : std::min(static_cast<long>(g.out[axis]), top / s + 1);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

// Input coordinate read by output o through tap k (valid inside outputs()).
inline std::size_t input_at(const ConvGeometry& g, std::size_t axis, std::size_t o, std::size_t k) {
    return o * g.stride[axis] + k - g.pad[axis];
}

// Output o along `axis` that reads input p through tap k, or -1.
inline long source(const ConvGeometry& g, std::size_t axis, std::size_t p, std::size_t k) {
    const long num = static_cast<long>(p + g.pad[axis]) - static_cast<long>(k);
    if (num < 0) return -1;
    const long s = static_cast<long>(g.stride[axis]);
    if (s != 1 && num % s != 0) return -1;
    const long o = s == 1 ? num : num / s;
    return o < static_cast<long>(g.out[axis]) ? o : -1;
}

// y[co, oz, oy, :]
void forward_row(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                 std::span<const double> bias, std::size_t co, std::size_t oz, std::size_t oy, double* __restrict row) {
    const std::size_t cin = g.in_per_group();
    const std::size_t first_in = (co / g.out_per_group()) * cin;
    const auto [D, H, W] = g.in;
    const auto [KD, KH, KW] = g.kernel;
    const std::size_t OW = g.out[2];
    std::fill(row, row + OW, 0.0);
    for (std::size_t c = 0; c < cin; ++c) {
        const double* wk = w.data() + ((co * cin + c) * KD) * KH * KW;
        const double* xc = x.data() + (first_in + c) * D * H * W;
        for (std::size_t kz = 0; kz < KD; ++kz) {
            const long z = static_cast<long>(oz * g.stride[0] + kz) - static_cast<long>(g.pad[0]);
            if (z < 0 || z >= static_cast<long>(D)) continue;
            for (std::size_t ky = 0; ky < KH; ++ky) {
                const long y = static_cast<long>(oy * g.stride[1] + ky) - static_cast<long>(g.pad[1]);
                if (y < 0 || y >= static_cast<long>(H)) continue;
                const double* xrow = xc + (static_cast<std::size_t>(z) * H + static_cast<std::size_t>(y)) * W;
                for (std::size_t kx = 0; kx < KW; ++kx) {
                    const double wv = wk[(kz * KH + ky) * KW + kx];
                    const Range r = outputs(g, 2, kx);
                    if (g.stride[2] == 1) {
                        const std::size_t off = kx - g.pad[2];  // modular; ox + off >= 0 inside the range
                        for (std::size_t ox = r.lo; ox < r.hi; ++ox) row[ox] += wv * xrow[ox + off];
                    } else {
                        for (std::size_t ox = r.lo; ox < r.hi; ++ox) row[ox] += wv * xrow[input_at(g, 2, ox, kx)];
                    }
                }
            }
        }
    }
    if (!bias.empty())
        for (std::size_t ox = 0; ox < OW; ++ox) row[ox] += bias[co];
}

// dx[ci, z, y, :]
void input_grad_row(const ConvGeometry& g, std::span<const double> dy, std::span<const double> w, std::size_t ci,
                    std::size_t z, std::size_t y, double* __restrict row) {
    const std::size_t cin = g.in_per_group();
    const std::size_t cout = g.out_per_group();
    const std::size_t group = ci / cin;
    const std::size_t c_local = ci % cin;
    const auto [OD, OH, OW] = g.out;
    const auto [KD, KH, KW] = g.kernel;
    const std::size_t W = g.in[2];
    std::fill(row, row + W, 0.0);
    for (std::size_t co = group * cout; co < (group + 1) * cout; ++co) {
        const double* wk = w.data() + ((co * cin + c_local) * KD) * KH * KW;
        const double* dyc = dy.data() + co * OD * OH * OW;
        for (std::size_t kz = 0; kz < KD; ++kz) {
            const long oz = source(g, 0, z, kz);
            if (oz < 0) continue;
            for (std::size_t ky = 0; ky < KH; ++ky) {
                const long oy = source(g, 1, y, ky);
                if (oy < 0) continue;
                const double* dyrow = dyc + (static_cast<std::size_t>(oz) * OH + static_cast<std::size_t>(oy)) * OW;
                for (std::size_t kx = 0; kx < KW; ++kx) {
                    const double wv = wk[(kz * KH + ky) * KW + kx];
                    if (g.stride[2] == 1) {
                        // input x is read by output x + pad - kx when that lies in [0, OW)
                        const long shift = static_cast<long>(g.pad[2]) - static_cast<long>(kx);
                        const long lo = std::max(0L, -shift);
                        const long hi = std::min(static_cast<long>(W), static_cast<long>(OW) - shift);
                        for (long x = lo; x < hi; ++x) row[x] += wv * dyrow[x + shift];
                    } else {
                        for (std::size_t x = 0; x < W; ++x) {
                            const long ox = source(g, 2, x, kx);
                            if (ox >= 0) row[x] += wv * dyrow[ox];
                        }
                    }
                }
            }
        }
    }
}

// 1x1x1 kernel, unit stride: whole channel planes are rows.
bool pointwise(const ConvGeometry& g) {
    return g.kernel == std::array<std::size_t, 3>{1, 1, 1} && g.stride == std::array<std::size_t, 3>{1, 1, 1};
}

void pointwise_forward_plane(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                             std::span<const double> bias, std::size_t co, double* __restrict plane) {
    const std::size_t n = g.in[0] * g.in[1] * g.in[2];
    const std::size_t cin = g.in_per_group();
    const std::size_t first_in = (co / g.out_per_group()) * cin;
    std::fill(plane, plane + n, 0.0);
    for (std::size_t c = 0; c < cin; ++c) {
        const double wv = w[co * cin + c];
        const double* xc = x.data() + (first_in + c) * n;
        for (std::size_t i = 0; i < n; ++i) plane[i] += wv * xc[i];
    }
    if (!bias.empty())
        for (std::size_t i = 0; i < n; ++i) plane[i] += bias[co];
}

void pointwise_input_plane(const ConvGeometry& g, std::span<const double> dy, std::span<const double> w,
                           std::size_t ci, double* __restrict plane) {
    const std::size_t n = g.in[0] * g.in[1] * g.in[2];
    const std::size_t cin = g.in_per_group(), cout = g.out_per_group();
    const std::size_t group = ci / cin, c_local = ci % cin;
    std::fill(plane, plane + n, 0.0);
    for (std::size_t co = group * cout; co < (group + 1) * cout; ++co) {
        const double wv = w[co * cin + c_local];
        const double* dyc = dy.data() + co * n;
        for (std::size_t i = 0; i < n; ++i) plane[i] += wv * dyc[i];
    }
}

inline double weight_grad_point(const ConvGeometry& g, std::span<const double> dy, std::span<const double> x,
                                std::size_t co, std::size_t c_local, std::size_t kz, std::size_t ky,
                                std::size_t kx) {
    const std::size_t ci = (co / g.out_per_group()) * g.in_per_group() + c_local;
    const auto [D, H, W] = g.in;
    const auto [OD, OH, OW] = g.out;
    const double* xc = x.data() + ci * D * H * W;
    const double* dyc = dy.data() + co * OD * OH * OW;
    const Range rz = outputs(g, 0, kz), ry = outputs(g, 1, ky), rx = outputs(g, 2, kx);
    double acc = 0.0;
    for (std::size_t oz = rz.lo; oz < rz.hi; ++oz) {
        const std::size_t z = input_at(g, 0, oz, kz);
        for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
            const double* dyrow = dyc + (oz * OH + oy) * OW;
            const double* xrow = xc + (z * H + input_at(g, 1, oy, ky)) * W;
            for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) acc += dyrow[ox] * xrow[input_at(g, 2, ox, kx)];
        }
    }
    return acc;
}

void weight_grad_block(const ConvGeometry& g, std::span<const double> dy, std::span<const double> x,
                       std::span<double> dw, std::size_t co, std::size_t c) {
    const std::size_t cin = g.in_per_group();
    const auto [KD, KH, KW] = g.kernel;
    for (std::size_t kz = 0; kz < KD; ++kz)
        for (std::size_t ky = 0; ky < KH; ++ky)
            for (std::size_t kx = 0; kx < KW; ++kx)
                dw[(((co * cin + c) * KD + kz) * KH + ky) * KW + kx] = weight_grad_point(g, dy, x, co, c, kz, ky, kx);
}

inline double bias_grad_point(const ConvGeometry& g, std::span<const double> dy, std::size_t co) {
    const std::size_t n = g.out[0] * g.out[1] * g.out[2];
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += dy[co * n + i];
    return acc;
}

}  // namespace

void conv_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                  std::span<const double> bias, std::span<double> y) {
    check_sizes(g, x.size(), w.size(), bias.size(), y.size());
    if (pointwise(g)) {
        const std::size_t n = g.output_size() / g.out_channels;
#pragma omp parallel for schedule(static)
        for (long co = 0; co < static_cast<long>(g.out_channels); ++co)
            pointwise_forward_plane(g, x, w, bias, static_cast<std::size_t>(co), y.data() + static_cast<std::size_t>(co) * n);
        return;
    }
    const auto [OD, OH, OW] = g.out;
    const long rows = static_cast<long>(g.out_channels * OD * OH);
#pragma omp parallel for schedule(static)
    for (long r = 0; r < rows; ++r) {
        const std::size_t i = static_cast<std::size_t>(r);
        forward_row(g, x, w, bias, i / (OD * OH), (i / OH) % OD, i % OH, y.data() + i * OW);
    }
}

void conv_backward_input(const ConvGeometry& g, std::span<const double> dy, std::span<const double> w,
                         std::span<double> dx) {
    check_sizes(g, dx.size(), w.size(), 0, dy.size());
    if (pointwise(g)) {
        const std::size_t n = g.input_size() / g.in_channels;
#pragma omp parallel for schedule(static)
        for (long ci = 0; ci < static_cast<long>(g.in_channels); ++ci)
            pointwise_input_plane(g, dy, w, static_cast<std::size_t>(ci), dx.data() + static_cast<std::size_t>(ci) * n);
        return;
    }
    const auto [D, H, W] = g.in;
    const long rows = static_cast<long>(g.in_channels * D * H);
#pragma omp parallel for schedule(static)
    for (long r = 0; r < rows; ++r) {
        const std::size_t i = static_cast<std::size_t>(r);
        input_grad_row(g, dy, w, i / (D * H), (i / H) % D, i % H, dx.data() + i * W);
    }
}

void conv_backward_weight(const ConvGeometry& g, std::span<const double> dy, std::span<const double> x,
                          std::span<double> dw, std::span<double> dbias) {
    check_sizes(g, x.size(), dw.size(), dbias.size(), dy.size());
    const std::size_t cin = g.in_per_group();
    const long blocks = static_cast<long>(g.out_channels * cin);
#pragma omp parallel for schedule(static)
    for (long b = 0; b < blocks; ++b)
        weight_grad_block(g, dy, x, dw, static_cast<std::size_t>(b) / cin, static_cast<std::size_t>(b) % cin);
    if (!dbias.empty())
        for (std::size_t co = 0; co < g.out_channels; ++co) dbias[co] = bias_grad_point(g, dy, co);
}

namespace serial {

void conv_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                  std::span<const double> bias, std::span<double> y) {
    check_sizes(g, x.size(), w.size(), bias.size(), y.size());
    if (pointwise(g)) {
        const std::size_t n = g.output_size() / g.out_channels;
        for (std::size_t co = 0; co < g.out_channels; ++co) pointwise_forward_plane(g, x, w, bias, co, y.data() + co * n);
        return;
    }
    double* row = y.data();
    for (std::size_t co = 0; co < g.out_channels; ++co)
        for (std::size_t oz = 0; oz < g.out[0]; ++oz)
            for (std::size_t oy = 0; oy < g.out[1]; ++oy, row += g.out[2]) forward_row(g, x, w, bias, co, oz, oy, row);
}

void conv_backward_input(const ConvGeometry& g, std::span<const double> dy, std::span<const double> w,
                         std::span<double> dx) {
    check_sizes(g, dx.size(), w.size(), 0, dy.size());
    if (pointwise(g)) {
        const std::size_t n = g.input_size() / g.in_channels;
        for (std::size_t ci = 0; ci < g.in_channels; ++ci) pointwise_input_plane(g, dy, w, ci, dx.data() + ci * n);
        return;
    }
    double* row = dx.data();
    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
        for (std::size_t z = 0; z < g.in[0]; ++z)
            for (std::size_t y = 0; y < g.in[1]; ++y, row += g.in[2]) input_grad_row(g, dy, w, ci, z, y, row);
}

void conv_backward_weight(const ConvGeometry& g, std::span<const double> dy, std::span<const double> x,
                          std::span<double> dw, std::span<double> dbias) {
    check_sizes(g, x.size(), dw.size(), dbias.size(), dy.size());
    for (std::size_t co = 0; co < g.out_channels; ++co)
        for (std::size_t c = 0; c < g.in_per_group(); ++c) weight_grad_block(g, dy, x, dw, co, c);
    if (!dbias.empty())
        for (std::size_t co = 0; co < g.out_channels; ++co) dbias[co] = bias_grad_point(g, dy, co);
}

}  // namespace serial

}  // namespace hsi::nn
