// Experiment driver. Exit codes: 0 ok, 1 gradient check failed or internal
// error, 2 bad config or usage, 3 data error, 4 divergence, 5 checkpoint mismatch.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <omp.h>

#include "CLI11.hpp"
#include "hsi/errors.hpp"
#include "hsi/experiment.hpp"

namespace {

// Thread count comes only from the environment.
void apply_thread_env() {
    const char* env = std::getenv("HSI_THREADS");
    if (env == nullptr || *env == '\0') return;
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1) throw hsi::ConfigError(std::string("HSI_THREADS must be a positive integer, got '") + env + "'");
    omp_set_num_threads(static_cast<int>(n));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hyperspectral tensor-network experiments"};
    app.require_subcommand(1);
    std::string config_path, out, checkpoint;
    std::optional<std::uint64_t> seed;
    for (const char* name : {"decompose", "train", "evaluate", "gradcheck"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--out", out, "output directory (overrides the config)");
        sub->add_option("--seed", seed, "seed (overrides the config)");
        if (std::string(name) == "evaluate") sub->add_option("--checkpoint", checkpoint, "checkpoint archive");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        apply_thread_env();
        auto cfg = hsi::experiment::load_config(config_path);
        if (!out.empty()) cfg.out = out;
        if (seed) cfg.seed = *seed;

        if (command == "decompose") {
            const auto r = hsi::experiment::cmd_decompose(cfg);
            for (const auto& t : r["targets"])
                std::cout << t["name"].get<std::string>() << ": relative error " << t["relative_error"].get<double>()
                          << " after " << t["iterations"] << " iterations\n";
        } else if (command == "train") {
            const auto r = hsi::experiment::cmd_train(cfg, &std::cerr);
            std::cout << "trained " << r["mode"].get<std::string>() << " for " << r["iterations"]
                      << " iterations, train accuracy " << r["final"]["train_accuracy"].get<double>() << "\n";
        } else if (command == "evaluate") {
            std::optional<std::filesystem::path> ck;
            if (!checkpoint.empty()) ck = checkpoint;
            const auto r = hsi::experiment::cmd_evaluate(cfg, ck);
            std::cout << "OA " << r["display"]["oa"] << "  AA " << r["display"]["aa"] << "  Kappa "
                      << r["display"]["kappa"] << "\n";
        } else {
            const auto r = hsi::experiment::cmd_gradcheck(cfg);
            for (const auto& c : r["components"])
                std::cout << (c["passed"].get<bool>() ? "PASS " : "FAIL ") << c["name"].get<std::string>() << "  max rel error "
                          << c["max_rel_error"].get<double>() << "\n";
            if (!r["passed"].get<bool>()) return 1;
        }
        return 0;
    } catch (const hsi::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const hsi::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const hsi::DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << "\n";
        return 4;
    } catch (const hsi::CheckpointMismatch& e) {
        std::cerr << "checkpoint mismatch: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
