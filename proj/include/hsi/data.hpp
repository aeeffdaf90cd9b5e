#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hsi/tensor.hpp"

namespace hsi::data {

/// Row-major integer image; 0 marks unlabeled pixels.
struct LabelImage {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint16_t> data;

    LabelImage() = default;
    LabelImage(std::size_t r, std::size_t c, std::uint16_t fill = 0) : rows(r), cols(c), data(r * c, fill) {}

    [[nodiscard]] std::uint16_t at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::uint16_t& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    friend bool operator==(const LabelImage&, const LabelImage&) = default;
};

struct HsiScene {
    DenseTensor cube;  ///< [rows, cols, bands]
    LabelImage labels;
    std::size_t classes = 0;
    std::vector<std::string> class_names;

    [[nodiscard]] std::size_t rows() const { return cube.dim(0); }
    [[nodiscard]] std::size_t cols() const { return cube.dim(1); }
    [[nodiscard]] std::size_t bands() const { return cube.dim(2); }
    [[nodiscard]] std::size_t labeled_count() const;

    /// Throws DataError unless the dims agree, labels are <= classes and every
    /// class has at least one pixel.
    void validate() const;
};

/// Reads the cube ([H, W, B], <f4 or <f8) and label map ([H, W], unsigned
/// integers) from NPY files. When `declared_classes` is absent the largest
/// label is used.
[[nodiscard]] HsiScene load_scene(const std::filesystem::path& cube, const std::filesystem::path& labels,
                                  std::optional<std::size_t> declared_classes = std::nullopt);

/// Writes the cube as <f8 and the labels as <u2.
void save_scene(const HsiScene& scene, const std::filesystem::path& cube, const std::filesystem::path& labels);

enum class Normalization { MinMax, Standardize, None };

[[nodiscard]] Normalization parse_normalization(const std::string& name);

/// Per-band min-max to [0, 1] (constant bands become 0) or per-band
/// zero-mean unit-variance (constant bands are an error).
[[nodiscard]] HsiScene normalize(const HsiScene& scene, Normalization method);

/// Index into [0, n) after mirror reflection about the edges without
/// repeating the edge sample: -1 -> 1, n -> n - 2.
[[nodiscard]] std::size_t reflect(long i, std::size_t n);

/// [P, P, B] window centered on (row, col), mirror-reflected at the borders.
[[nodiscard]] DenseTensor extract_patch(const DenseTensor& cube, std::size_t row, std::size_t col, std::size_t p);

struct Pixel {
    std::size_t row = 0;
    std::size_t col = 0;
    friend bool operator==(const Pixel&, const Pixel&) = default;
    friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

struct Split {
    std::vector<Pixel> train;  ///< grouped by class, sampling order within a class
    std::vector<Pixel> test;   ///< row-major
    std::uint64_t seed = 0;
};

/// n labeled pixels per class sampled without replacement; the rest are test.
/// Throws DataError when a class has fewer than n pixels.
[[nodiscard]] Split make_split(const HsiScene& scene, std::size_t n_per_class, std::uint64_t seed);

/// Uniform integer in [0, bound) from raw mt19937_64 output by rejection, so
/// the sequence does not depend on the standard library's distributions.
[[nodiscard]] std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound);

struct SyntheticSpec {
    std::size_t rows = 32;
    std::size_t cols = 32;
    std::size_t bands = 16;
    std::size_t classes = 3;
    double noise = 0.01;
    std::uint64_t seed = 0;
};

/// Piecewise-constant scene: class c occupies the c-th vertical stripe and
/// has a distinct smooth spectrum in [0.1, 0.9]; Gaussian noise of standard
/// deviation `noise` is added. Every pixel is labeled.
[[nodiscard]] HsiScene make_synthetic_scene(const SyntheticSpec& spec);

}  // namespace hsi::data
