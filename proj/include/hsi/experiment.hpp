#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hsi/archive.hpp"
#include "hsi/data.hpp"
#include "hsi/gradcheck.hpp"
#include "hsi/trn.hpp"
#include "json.hpp"

namespace hsi::experiment {

struct DecomposeSettings {
    /// "cube" fits the whole normalized cube; "patches" fits one patch per pixel.
    std::string target = "cube";
    std::vector<data::Pixel> pixels;
    std::size_t rank = 2;
    std::size_t glr_rank = 1;
    bool adapt = false;
    sdtn::RankPolicy policy;
    std::size_t adapt_rounds = 4;
};

struct ExperimentConfig {
    std::filesystem::path cube;
    std::filesystem::path labels;
    std::optional<std::size_t> classes;
    data::Normalization normalization = data::Normalization::MinMax;
    std::size_t n_per_class = 10;
    std::uint64_t seed = 0;
    std::filesystem::path out = "out";
    /// "labeled" renders only labeled pixels (others black); "full" classifies every pixel.
    std::string map = "labeled";
    trn::TrnConfig trn;  ///< bands and classes are filled in from the data
    DecomposeSettings decompose;
    gradcheck::Settings gradcheck;
};

/// Strict parse: unknown keys, wrong types and out-of-range values throw
/// ConfigError naming the offending key. Relative paths resolve against `base`.
[[nodiscard]] ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base = {});
/// Reads and parses a config file; an unreadable or malformed file is a ConfigError.
[[nodiscard]] ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical JSON form (every field, defaults included).
[[nodiscard]] nlohmann::json to_json(const ExperimentConfig& cfg);

/// FNV-1a digest of everything that determines the trained model: network,
/// mode, loss weights, optimizer, decomposition settings, data paths,
/// normalization, split and seed.
[[nodiscard]] std::string model_digest(const ExperimentConfig& cfg);

/// Loads, validates and normalizes the scene named in the config.
[[nodiscard]] data::HsiScene load_scene(const ExperimentConfig& cfg);

/// TrnConfig with bands/classes from the scene and the experiment seed applied.
[[nodiscard]] trn::TrnConfig resolved_trn(const ExperimentConfig& cfg, const data::HsiScene& scene);

void save_checkpoint(const std::filesystem::path& path, const trn::Trained& t, const std::string& digest);
/// Throws CheckpointMismatch when the stored digest differs from `digest`.
[[nodiscard]] trn::Trained load_checkpoint(const std::filesystem::path& path, const trn::TrnConfig& config,
                                           const std::string& digest);

/// Each command writes its artifacts atomically under cfg.out and returns its JSON report.
nlohmann::json cmd_decompose(const ExperimentConfig& cfg);
nlohmann::json cmd_train(const ExperimentConfig& cfg, std::ostream* progress = nullptr);
nlohmann::json cmd_evaluate(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& checkpoint);
nlohmann::json cmd_gradcheck(const ExperimentConfig& cfg);

/// One JSON line of the training log.
[[nodiscard]] nlohmann::json record_json(const trn::TrainRecord& r);

}  // namespace hsi::experiment
