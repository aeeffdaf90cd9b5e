// Serial reference against the OpenMP kernels on layer shapes from a
// 9x9 patch of a 103-band scene. Thread count follows OMP_NUM_THREADS.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "hsi/nn/kernels.hpp"

namespace {

using hsi::nn::ConvGeometry;
using hsi::nn::Padding;

struct Problem {
    ConvGeometry g;
    std::vector<double> x, w, bias, y, dx, dw, db;
};

// 0: spectral-spatial 3-D conv, 1: 2-D conv over fused maps, 2: depthwise, 3: pointwise.
Problem make_problem(int which) {
    Problem p;
    switch (which) {
        case 0: p.g = ConvGeometry::make(1, 8, 1, {103, 9, 9}, {7, 3, 3}, {1, 1, 1}, Padding::Same); break;
        case 1: p.g = ConvGeometry::make(103, 16, 1, {1, 9, 9}, {1, 3, 3}, {1, 1, 1}, Padding::Same); break;
        case 2: p.g = ConvGeometry::make(32, 32, 32, {1, 9, 9}, {1, 3, 3}, {1, 1, 1}, Padding::Same); break;
        default: p.g = ConvGeometry::make(32, 32, 1, {1, 9, 9}, {1, 1, 1}, {1, 1, 1}, Padding::Same); break;
    }
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 1.0);
    auto fill = [&](std::vector<double>& v, std::size_t size) {
        v.resize(size);
        for (auto& e : v) e = n(rng);
    };
    fill(p.x, p.g.input_size());
    fill(p.w, p.g.weight_size());
    fill(p.bias, p.g.out_channels);
    fill(p.y, p.g.output_size());
    p.dx.resize(p.g.input_size());
    p.dw.resize(p.g.weight_size());
    p.db.resize(p.g.out_channels);
    return p;
}

const char* label(int which) {
    static const char* names[] = {"conv3d", "conv2d", "depthwise", "pointwise"};
    return names[which];
}

template <bool Parallel>
void forward(benchmark::State& state) {
    auto p = make_problem(static_cast<int>(state.range(0)));
    std::vector<double> out(p.g.output_size());
    for (auto _ : state) {
        if constexpr (Parallel)
            hsi::nn::conv_forward(p.g, p.x, p.w, p.bias, out);
        else
            hsi::nn::serial::conv_forward(p.g, p.x, p.w, p.bias, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetLabel(label(static_cast<int>(state.range(0))));
}

template <bool Parallel>
void backward_input(benchmark::State& state) {
    auto p = make_problem(static_cast<int>(state.range(0)));
    for (auto _ : state) {
        if constexpr (Parallel)
            hsi::nn::conv_backward_input(p.g, p.y, p.w, p.dx);
        else
            hsi::nn::serial::conv_backward_input(p.g, p.y, p.w, p.dx);
        benchmark::DoNotOptimize(p.dx.data());
    }
    state.SetLabel(label(static_cast<int>(state.range(0))));
}

template <bool Parallel>
void backward_weight(benchmark::State& state) {
    auto p = make_problem(static_cast<int>(state.range(0)));
    for (auto _ : state) {
        if constexpr (Parallel)
            hsi::nn::conv_backward_weight(p.g, p.y, p.x, p.dw, p.db);
        else
            hsi::nn::serial::conv_backward_weight(p.g, p.y, p.x, p.dw, p.db);
        benchmark::DoNotOptimize(p.dw.data());
    }
    state.SetLabel(label(static_cast<int>(state.range(0))));
}

}  // namespace

BENCHMARK(forward<false>)->Name("forward/serial")->DenseRange(0, 3);
BENCHMARK(forward<true>)->Name("forward/omp")->DenseRange(0, 3);
BENCHMARK(backward_input<false>)->Name("backward_input/serial")->DenseRange(0, 3);
BENCHMARK(backward_input<true>)->Name("backward_input/omp")->DenseRange(0, 3);
BENCHMARK(backward_weight<false>)->Name("backward_weight/serial")->DenseRange(0, 3);
BENCHMARK(backward_weight<true>)->Name("backward_weight/omp")->DenseRange(0, 3);

BENCHMARK_MAIN();
