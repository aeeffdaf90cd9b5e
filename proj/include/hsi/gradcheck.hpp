#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace hsi::gradcheck {

struct Settings {
    std::size_t instances = 20;  ///< random instances per component
    double tolerance = 1e-4;
    std::uint64_t seed = 0;
    /// Component whose analytic gradient is deliberately perturbed (fault injection); empty for none.
    std::string corrupt;
};

struct ComponentResult {
    std::string name;
    std::size_t instances = 0;
    double max_rel_error = 0.0;
    bool passed = false;
};

struct Report {
    Settings settings;
    std::vector<ComponentResult> components;

    [[nodiscard]] bool passed() const;
    [[nodiscard]] nlohmann::json to_json() const;
};

/// Names of every component, in report order.
[[nodiscard]] const std::vector<std::string>& component_names();

/// Central differences (h = 1e-5) against the analytic gradient of every
/// coordinate. Error per coordinate: |a - n| / max(|a|, |n|, 1e-5 * max(1, |f|)).
/// Throws std::invalid_argument when `corrupt` names no component.
[[nodiscard]] Report run(const Settings& settings);

/// Runs a single named component.
[[nodiscard]] ComponentResult run_component(const std::string& name, const Settings& settings);

}  // namespace hsi::gradcheck
