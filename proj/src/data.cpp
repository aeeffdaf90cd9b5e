#include "hsi/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "hsi/errors.hpp"
#include "hsi/io.hpp"
#include "hsi/npy.hpp"

namespace hsi::data {

std::size_t HsiScene::labeled_count() const {
    return static_cast<std::size_t>(std::count_if(labels.data.begin(), labels.data.end(), [](auto v) { return v != 0; }));
}

void HsiScene::validate() const {
    if (cube.order() != 3) throw DataError("cube must be [rows, cols, bands]");
    if (labels.rows != rows() || labels.cols != cols())
        throw DataError("label map is " + std::to_string(labels.rows) + "x" + std::to_string(labels.cols) +
                        " but cube is " + std::to_string(rows()) + "x" + std::to_string(cols()));
    if (classes < 1) throw DataError("scene declares no classes");
    if (!class_names.empty() && class_names.size() != classes) throw DataError("class name count differs from classes");
    std::vector<std::size_t> seen(classes + 1, 0);
    for (auto v : labels.data) {
        if (v > classes)
            throw DataError("label " + std::to_string(v) + " exceeds declared class count " + std::to_string(classes));
        ++seen[v];
    }
    for (std::size_t c = 1; c <= classes; ++c)
        if (seen[c] == 0) throw DataError("class " + std::to_string(c) + " has no labeled pixels");
    if (!all_finite(cube.data())) throw DataError("cube contains non-finite values");
}

HsiScene load_scene(const std::filesystem::path& cube, const std::filesystem::path& labels,
                    std::optional<std::size_t> declared_classes) {
    const auto c = npy::read(cube);
    if (c.descr != "<f4" && c.descr != "<f8") throw DataError(cube.string() + ": cube dtype must be <f4 or <f8");
    if (c.shape.size() != 3) throw DataError(cube.string() + ": cube must be a 3-D array [rows, cols, bands]");
    for (std::size_t d : c.shape)
        if (d == 0) throw DataError(cube.string() + ": empty cube axis");
    const auto l = npy::read(labels);
    if (l.descr.substr(1, 1) != "u") throw DataError(labels.string() + ": labels must be unsigned integers");
    if (l.shape.size() != 2) throw DataError(labels.string() + ": labels must be a 2-D array [rows, cols]");

    HsiScene s;
    s.cube = DenseTensor(Shape(c.shape), npy::as_doubles(c, cube.string()));
    s.labels = LabelImage(l.shape[0], l.shape[1]);
    const auto lv = npy::as_doubles(l, labels.string());
    double mx = 0.0;
    for (std::size_t i = 0; i < lv.size(); ++i) {
        if (lv[i] > 65535.0) throw DataError(labels.string() + ": label exceeds 65535");
        s.labels.data[i] = static_cast<std::uint16_t>(lv[i]);
        mx = std::max(mx, lv[i]);
    }
    s.classes = declared_classes.value_or(static_cast<std::size_t>(mx));
    s.validate();
    return s;
}

void save_scene(const HsiScene& scene, const std::filesystem::path& cube, const std::filesystem::path& labels) {
    io::write_atomic(cube, npy::serialize(npy::from_doubles(scene.cube.shape().dims(), scene.cube.values())));
    io::write_atomic(labels, npy::serialize(npy::from_u16({scene.labels.rows, scene.labels.cols}, scene.labels.data)));
}

Normalization parse_normalization(const std::string& name) {
    if (name == "minmax") return Normalization::MinMax;
    if (name == "standardize") return Normalization::Standardize;
    if (name == "none") return Normalization::None;
    throw ConfigError("unknown normalization '" + name + "' (expected minmax, standardize or none)");
}

HsiScene normalize(const HsiScene& scene, Normalization method) {
    HsiScene out = scene;
    if (method == Normalization::None) return out;
    const std::size_t bands = scene.bands(), pixels = scene.rows() * scene.cols();
    auto v = out.cube.data();
    for (std::size_t b = 0; b < bands; ++b) {
        if (method == Normalization::MinMax) {
            double lo = v[b], hi = v[b];
            for (std::size_t p = 0; p < pixels; ++p) {
                lo = std::min(lo, v[p * bands + b]);
                hi = std::max(hi, v[p * bands + b]);
            }
            const double span = hi - lo;
            for (std::size_t p = 0; p < pixels; ++p) v[p * bands + b] = span > 0.0 ? (v[p * bands + b] - lo) / span : 0.0;
        } else {
            double mean = 0.0;
            for (std::size_t p = 0; p < pixels; ++p) mean += v[p * bands + b];
            mean /= static_cast<double>(pixels);
            double var = 0.0;
            for (std::size_t p = 0; p < pixels; ++p) var += (v[p * bands + b] - mean) * (v[p * bands + b] - mean);
            const double sd = std::sqrt(var / static_cast<double>(pixels));
            if (!(sd > 0.0)) throw DataError("band " + std::to_string(b) + " is constant and cannot be standardized");
            for (std::size_t p = 0; p < pixels; ++p) v[p * bands + b] = (v[p * bands + b] - mean) / sd;
        }
    }
    return out;
}

std::size_t reflect(long i, std::size_t n) {
    if (n == 1) return 0;
    const long period = 2 * (static_cast<long>(n) - 1);
    long m = i % period;
    if (m < 0) m += period;
    return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - m);
}

DenseTensor extract_patch(const DenseTensor& cube, std::size_t row, std::size_t col, std::size_t p) {
    if (p % 2 == 0) throw std::invalid_argument("patch size must be odd, got " + std::to_string(p));
    const std::size_t rows = cube.dim(0), cols = cube.dim(1), bands = cube.dim(2);
    if (row >= rows || col >= cols)
        throw std::out_of_range("patch center (" + std::to_string(row) + ", " + std::to_string(col) +
                                ") outside the scene");
    const long half = static_cast<long>(p / 2);
    DenseTensor out(Shape{p, p, bands});
    const auto src = cube.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < p; ++i) {
        const std::size_t r = reflect(static_cast<long>(row) + static_cast<long>(i) - half, rows);
        for (std::size_t j = 0; j < p; ++j) {
            const std::size_t c = reflect(static_cast<long>(col) + static_cast<long>(j) - half, cols);
            std::copy_n(src.begin() + static_cast<long>((r * cols + c) * bands), bands,
                        dst.begin() + static_cast<long>((i * p + j) * bands));
        }
    }
    return out;
}

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("uniform_below needs a positive bound");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do x = rng();
    while (x >= limit);
    return x % bound;
}

Split make_split(const HsiScene& scene, std::size_t n_per_class, std::uint64_t seed) {
    std::vector<std::vector<Pixel>> by_class(scene.classes + 1);
    for (std::size_t r = 0; r < scene.labels.rows; ++r)
        for (std::size_t c = 0; c < scene.labels.cols; ++c) by_class[scene.labels.at(r, c)].push_back({r, c});
    Split split;
    split.seed = seed;
    std::mt19937_64 rng(seed);
    std::vector<char> chosen(scene.labels.data.size(), 0);
    for (std::size_t k = 1; k <= scene.classes; ++k) {
        auto& pool = by_class[k];
        if (pool.size() < n_per_class)
            throw DataError("class " + std::to_string(k) + " has " + std::to_string(pool.size()) +
                            " labeled pixels, fewer than the " + std::to_string(n_per_class) + " requested");
        // partial Fisher-Yates: the first n entries become the sample
        for (std::size_t i = 0; i < n_per_class; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, pool.size() - i));
            std::swap(pool[i], pool[j]);
            split.train.push_back(pool[i]);
            chosen[pool[i].row * scene.labels.cols + pool[i].col] = 1;
        }
    }
    for (std::size_t r = 0; r < scene.labels.rows; ++r)
        for (std::size_t c = 0; c < scene.labels.cols; ++c)
            if (scene.labels.at(r, c) != 0 && !chosen[r * scene.labels.cols + c]) split.test.push_back({r, c});
    return split;
}

HsiScene make_synthetic_scene(const SyntheticSpec& spec) {
    if (spec.rows == 0 || spec.cols < spec.classes || spec.bands < 2 || spec.classes < 2)
        throw std::invalid_argument("synthetic scene needs >= 2 classes, >= 2 bands and a column per class");
    HsiScene s;
    s.classes = spec.classes;
    s.cube = DenseTensor(Shape{spec.rows, spec.cols, spec.bands});
    s.labels = LabelImage(spec.rows, spec.cols);
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double pi = std::numbers::pi;
    for (std::size_t r = 0; r < spec.rows; ++r)
        for (std::size_t c = 0; c < spec.cols; ++c) {
            const std::size_t k = c * spec.classes / spec.cols;
            s.labels.at(r, c) = static_cast<std::uint16_t>(k + 1);
            for (std::size_t b = 0; b < spec.bands; ++b) {
                const double t = static_cast<double>(b) / static_cast<double>(spec.bands - 1);
                const double clean = 0.5 + 0.4 * std::sin(pi * static_cast<double>(k + 1) * t + 0.9 * static_cast<double>(k));
                s.cube.at({r, c, b}) = clean + spec.noise * noise(rng);
            }
        }
    return s;
}

}  // namespace hsi::data
