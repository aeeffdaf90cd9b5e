#include "hsi/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace hsi::nn {

namespace {

void accumulate(Graph& g, std::size_t id, std::span<const double> delta) {
    if (!g.requires_grad(id)) return;
    auto dst = g.grad_mut(id).data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += delta[i];
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t k = 0; k < s.order(); ++k) out += (k ? "," : "") + std::to_string(s[k]);
    return out + "]";
}

Var conv_impl(const Var& x, const Var& w, const std::optional<Var>& bias, const ConvGeometry& geo,
              const Shape& out_shape) {
    if (x.value().size() != geo.input_size())
        throw std::invalid_argument("convolution input " + shape_str(x.shape()) + " does not match the layer geometry");
    if (w.value().size() != geo.weight_size()) throw std::invalid_argument("convolution weight shape mismatch");
    if (bias && bias->value().size() != geo.out_channels)
        throw std::invalid_argument("convolution bias shape mismatch");
    DenseTensor y(out_shape);
    const std::span<const double> b = bias ? bias->value().data() : std::span<const double>{};
    conv_forward(geo, x.value().data(), w.value().data(), b, y.data());
    std::vector<Var> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    const std::size_t xi = x.id(), wi = w.id();
    const std::optional<std::size_t> bi = bias ? std::optional<std::size_t>(bias->id()) : std::nullopt;
    return x.graph()->record(std::move(y), inputs, [geo, xi, wi, bi](Graph& g, std::size_t self) {
        const auto dy = g.grad(self).data();
        if (g.requires_grad(xi)) {
            std::vector<double> dx(geo.input_size());
            conv_backward_input(geo, dy, g.value(wi).data(), dx);
            accumulate(g, xi, dx);
        }
        const bool need_b = bi && g.requires_grad(*bi);
        if (g.requires_grad(wi) || need_b) {
            std::vector<double> dw(geo.weight_size());
            std::vector<double> db(need_b ? geo.out_channels : 0);
            conv_backward_weight(geo, dy, g.value(xi).data(), dw, db);
            accumulate(g, wi, dw);
            if (need_b) accumulate(g, *bi, db);
        }
    });
}

}  // namespace

Shape ConvSpec::weight_shape() const {
    std::vector<std::size_t> dims{out_channels, in_channels};
    dims.insert(dims.end(), kernel.begin(), kernel.end());
    return Shape(std::move(dims));
}

void ConvSpec::validate(std::size_t spatial_rank) const {
    if (kernel.size() != spatial_rank)
        throw std::invalid_argument("convolution kernel needs " + std::to_string(spatial_rank) + " extents");
    for (std::size_t k : kernel)
        if (k == 0) throw std::invalid_argument("kernel extents must be >= 1");
    if (in_channels == 0 || out_channels == 0 || stride == 0)
        throw std::invalid_argument("channels and stride must be >= 1");
}

Var conv3d(const Var& x, const Var& w, const std::optional<Var>& bias, const ConvSpec& spec) {
    spec.validate(3);
    if (x.shape().order() != 4 || x.shape()[0] != spec.in_channels)
        throw std::invalid_argument("conv3d expects [C_in, D, H, W] input, got " + shape_str(x.shape()));
    if (w.shape() != spec.weight_shape()) throw std::invalid_argument("conv3d weight shape mismatch");
    const auto geo = ConvGeometry::make(spec.in_channels, spec.out_channels, 1,
                                        {x.shape()[1], x.shape()[2], x.shape()[3]},
                                        {spec.kernel[0], spec.kernel[1], spec.kernel[2]},
                                        {spec.stride, spec.stride, spec.stride}, spec.padding);
    return conv_impl(x, w, bias, geo, Shape{spec.out_channels, geo.out[0], geo.out[1], geo.out[2]});
}

Var conv2d(const Var& x, const Var& w, const std::optional<Var>& bias, const ConvSpec& spec) {
    spec.validate(2);
    if (x.shape().order() != 3 || x.shape()[0] != spec.in_channels)
        throw std::invalid_argument("conv2d expects [C_in, H, W] input, got " + shape_str(x.shape()));
    if (w.shape() != spec.weight_shape()) throw std::invalid_argument("conv2d weight shape mismatch");
    const auto geo = ConvGeometry::make(spec.in_channels, spec.out_channels, 1, {1, x.shape()[1], x.shape()[2]},
                                        {1, spec.kernel[0], spec.kernel[1]}, {1, spec.stride, spec.stride},
                                        spec.padding);
    return conv_impl(x, w, bias, geo, Shape{spec.out_channels, geo.out[1], geo.out[2]});
}

Var depthwise_conv2d(const Var& x, const Var& w, const ConvSpec& spec) {
    spec.validate(2);
    const std::size_t c = spec.in_channels;
    if (spec.out_channels != c) throw std::invalid_argument("depthwise convolution keeps the channel count");
    if (x.shape().order() != 3 || x.shape()[0] != c)
        throw std::invalid_argument("depthwise_conv2d expects [C, H, W] input, got " + shape_str(x.shape()));
    if (w.shape() != Shape{c, 1, spec.kernel[0], spec.kernel[1]})
        throw std::invalid_argument("depthwise weight must be [C, 1, kH, kW]");
    const auto geo = ConvGeometry::make(c, c, c, {1, x.shape()[1], x.shape()[2]}, {1, spec.kernel[0], spec.kernel[1]},
                                        {1, spec.stride, spec.stride}, spec.padding);
    return conv_impl(x, w, std::nullopt, geo, Shape{c, geo.out[1], geo.out[2]});
}

Var depthwise_separable(const Var& x, const Var& w_depth, const Var& w_point, const ConvSpec& depth_spec,
                        const ConvSpec& point_spec) {
    if (point_spec.kernel != std::vector<std::size_t>{1, 1})
        throw std::invalid_argument("pointwise stage must use a 1x1 kernel");
    if (point_spec.in_channels != depth_spec.out_channels)
        throw std::invalid_argument("pointwise input channels must equal depthwise channels");
    return conv2d(depthwise_conv2d(x, w_depth, depth_spec), w_point, std::nullopt, point_spec);
}

std::size_t depthwise_separable_parameters(const ConvSpec& depth_spec, const ConvSpec& point_spec) {
    return depth_spec.in_channels * depth_spec.kernel.at(0) * depth_spec.kernel.at(1) +
           point_spec.in_channels * point_spec.out_channels;
}

Var reshape(const Var& x, Shape shape) {
    DenseTensor y = x.value().reshaped(std::move(shape));
    const std::size_t xi = x.id();
    return x.graph()->record(std::move(y), {x}, [xi](Graph& g, std::size_t self) {
        accumulate(g, xi, g.grad(self).data());
    });
}

Var permute(const Var& x, std::vector<std::size_t> perm) {
    DenseTensor y = hsi::permute(x.value(), perm);
    std::vector<std::size_t> inverse(perm.size());
    for (std::size_t d = 0; d < perm.size(); ++d) inverse[perm[d]] = d;
    const std::size_t xi = x.id();
    return x.graph()->record(std::move(y), {x}, [xi, inverse](Graph& g, std::size_t self) {
        const DenseTensor back = hsi::permute(g.grad(self), inverse);
        accumulate(g, xi, back.data());
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const auto& sa = a.shape().dims();
    const auto& sb = b.shape().dims();
    if (sa.size() != sb.size() || !std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1))
        throw std::invalid_argument("concat_channels: extents " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()) + " disagree off the channel axis");
    std::vector<std::size_t> dims = sa;
    dims[0] += sb[0];
    std::vector<double> data(a.value().values());
    data.insert(data.end(), b.value().values().begin(), b.value().values().end());
    const std::size_t ai = a.id(), bi = b.id(), na = a.value().size();
    return a.graph()->record(DenseTensor(Shape(dims), std::move(data)), {a, b},
                             [ai, bi, na](Graph& g, std::size_t self) {
                                 const auto dy = g.grad(self).data();
                                 accumulate(g, ai, dy.subspan(0, na));
                                 accumulate(g, bi, dy.subspan(na));
                             });
}

Var relu(const Var& x) {
    DenseTensor y = x.value();
    for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
    const std::size_t xi = x.id();
    return x.graph()->record(std::move(y), {x}, [xi](Graph& g, std::size_t self) {
        const auto in = g.value(xi).data();
        std::vector<double> d(g.grad(self).values());
        for (std::size_t i = 0; i < d.size(); ++i)
            if (!(in[i] > 0.0)) d[i] = 0.0;
        accumulate(g, xi, d);
    });
}

Var sigmoid(const Var& x) {
    DenseTensor y = x.value();
    for (double& v : y.data()) v = 1.0 / (1.0 + std::exp(-v));
    const std::size_t xi = x.id();
    return x.graph()->record(std::move(y), {x}, [xi](Graph& g, std::size_t self) {
        const auto s = g.value(self).data();
        std::vector<double> d(g.grad(self).values());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= s[i] * (1.0 - s[i]);
        accumulate(g, xi, d);
    });
}

Var add(const Var& a, const Var& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
    DenseTensor y = a.value() + b.value();
    const std::size_t ai = a.id(), bi = b.id();
    return a.graph()->record(std::move(y), {a, b}, [ai, bi](Graph& g, std::size_t self) {
        accumulate(g, ai, g.grad(self).data());
        accumulate(g, bi, g.grad(self).data());
    });
}

Var scale(const Var& x, double s) {
    DenseTensor y = s * DenseTensor(x.value());
    const std::size_t xi = x.id();
    return x.graph()->record(std::move(y), {x}, [xi, s](Graph& g, std::size_t self) {
        const DenseTensor d = s * DenseTensor(g.grad(self));
        accumulate(g, xi, d.data());
    });
}

Var affine(const Var& x, const Var& w, const std::optional<Var>& b) {
    if (w.shape().order() != 2) throw std::invalid_argument("affine weight must be a matrix");
    const std::size_t out = w.shape()[0], in = w.shape()[1];
    if (x.value().size() != in)
        throw std::invalid_argument("affine input has " + std::to_string(x.value().size()) + " entries, weight expects " +
                                    std::to_string(in));
    if (b && b->value().size() != out) throw std::invalid_argument("affine bias shape mismatch");
    DenseTensor y(Shape{out});
    const auto xv = x.value().data();
    const auto wv = w.value().data();
    for (std::size_t o = 0; o < out; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < in; ++i) acc += wv[o * in + i] * xv[i];
        y[o] = acc + (b ? b->value()[o] : 0.0);
    }
    std::vector<Var> inputs{x, w};
    if (b) inputs.push_back(*b);
    const std::size_t xi = x.id(), wi = w.id();
    const std::optional<std::size_t> bi = b ? std::optional<std::size_t>(b->id()) : std::nullopt;
    return x.graph()->record(std::move(y), inputs, [xi, wi, bi, in, out](Graph& g, std::size_t self) {
        const auto dy = g.grad(self).data();
        const auto xv = g.value(xi).data();
        const auto wv = g.value(wi).data();
        if (g.requires_grad(xi)) {
            std::vector<double> dx(in, 0.0);
            for (std::size_t o = 0; o < out; ++o)
                for (std::size_t i = 0; i < in; ++i) dx[i] += wv[o * in + i] * dy[o];
            accumulate(g, xi, dx);
        }
        if (g.requires_grad(wi)) {
            std::vector<double> dw(in * out);
            for (std::size_t o = 0; o < out; ++o)
                for (std::size_t i = 0; i < in; ++i) dw[o * in + i] = dy[o] * xv[i];
            accumulate(g, wi, dw);
        }
        if (bi) accumulate(g, *bi, dy);
    });
}

Var global_avg_pool(const Var& x) {
    const std::size_t c = x.shape()[0];
    const std::size_t n = x.value().size() / c;
    DenseTensor y(Shape{c});
    const auto v = x.value().data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += v[ch * n + i];
        y[ch] = acc / static_cast<double>(n);
    }
    const std::size_t xi = x.id();
    return x.graph()->record(std::move(y), {x}, [xi, c, n](Graph& g, std::size_t self) {
        const auto dy = g.grad(self).data();
        std::vector<double> dx(c * n);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < n; ++i) dx[ch * n + i] = dy[ch] / static_cast<double>(n);
        accumulate(g, xi, dx);
    });
}

Var scale_channels(const Var& x, const Var& s) {
    const std::size_t c = x.shape()[0];
    if (s.value().size() != c) throw std::invalid_argument("scale_channels: one gate per channel required");
    const std::size_t n = x.value().size() / c;
    DenseTensor y = x.value();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < n; ++i) y[ch * n + i] *= s.value()[ch];
    const std::size_t xi = x.id(), si = s.id();
    return x.graph()->record(std::move(y), {x, s}, [xi, si, c, n](Graph& g, std::size_t self) {
        const auto dy = g.grad(self).data();
        const auto xv = g.value(xi).data();
        const auto sv = g.value(si).data();
        if (g.requires_grad(xi)) {
            std::vector<double> dx(c * n);
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < n; ++i) dx[ch * n + i] = dy[ch * n + i] * sv[ch];
            accumulate(g, xi, dx);
        }
        if (g.requires_grad(si)) {
            std::vector<double> ds(c, 0.0);
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < n; ++i) ds[ch] += dy[ch * n + i] * xv[ch * n + i];
            accumulate(g, si, ds);
        }
    });
}

std::size_t attention_width(std::size_t channels, std::size_t reduction) {
    if (reduction == 0) throw std::invalid_argument("attention reduction must be >= 1");
    return (channels + reduction - 1) / reduction;
}

Var channel_attention(const Var& x, const AttentionParams& p) {
    const Var squeezed = global_avg_pool(x);
    const Var hidden = relu(affine(squeezed, p.fc1_w, p.fc1_b));
    const Var gate = sigmoid(affine(hidden, p.fc2_w, p.fc2_b));
    return scale_channels(x, gate);
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("softmax of an empty vector");
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) sum += (p[i] = std::exp(logits[i] - mx));
    for (double& v : p) v /= sum;
    return p;
}

Var softmax_xent(const Var& logits, int label) {
    const auto z = logits.value().data();
    if (z.empty()) throw std::invalid_argument("softmax_xent of empty logits");
    if (label < 1 || static_cast<std::size_t>(label) > z.size())
        throw std::invalid_argument("label " + std::to_string(label) + " out of range");
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    const double loss = std::log(sum) + mx - z[static_cast<std::size_t>(label - 1)];
    const std::size_t zi = logits.id();
    return logits.graph()->record(DenseTensor(Shape{1}, {loss}), {logits}, [zi, label](Graph& g, std::size_t self) {
        std::vector<double> d = softmax(g.value(zi).data());
        d[static_cast<std::size_t>(label - 1)] -= 1.0;
        const double up = g.grad(self)[0];
        for (double& v : d) v *= up;
        accumulate(g, zi, d);
    });
}

Var squared_distance(const Var& a, const Var& b) {
    if (a.value().size() != b.value().size()) throw std::invalid_argument("squared_distance: size mismatch");
    const auto av = a.value().data();
    const auto bv = b.value().data();
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
    const std::size_t ai = a.id(), bi = b.id();
    return a.graph()->record(DenseTensor(Shape{1}, {s}), {a, b}, [ai, bi](Graph& g, std::size_t self) {
        const auto av = g.value(ai).data();
        const auto bv = g.value(bi).data();
        const double up = g.grad(self)[0];
        std::vector<double> d(av.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = 2.0 * up * (av[i] - bv[i]);
        accumulate(g, ai, d);
        for (double& v : d) v = -v;
        accumulate(g, bi, d);
    });
}

}  // namespace hsi::nn
