// Writes a synthetic scene (cube.npy, labels.npy) for smoke tests and demos.
//   stripes:  class stripes with distinct smooth spectra plus Gaussian noise
//   lowrank:  cube reconstructed from random FCTN factors at a given rank, one class

#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "hsi/data.hpp"
#include "hsi/errors.hpp"
#include "hsi/fctn.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Synthetic hyperspectral scenes"};
    std::string kind = "stripes", out = ".";
    hsi::data::SyntheticSpec spec;
    std::size_t rank = 2;
    app.add_option("--kind", kind)->check(CLI::IsMember({"stripes", "lowrank"}));
    app.add_option("--out", out, "output directory");
    app.add_option("--rows", spec.rows);
    app.add_option("--cols", spec.cols);
    app.add_option("--bands", spec.bands);
    app.add_option("--classes", spec.classes);
    app.add_option("--noise", spec.noise);
    app.add_option("--seed", spec.seed);
    app.add_option("--rank", rank, "FCTN rank for --kind lowrank");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    try {
        std::filesystem::create_directories(out);
        hsi::data::HsiScene scene;
        if (kind == "stripes") {
            scene = hsi::data::make_synthetic_scene(spec);
        } else {
            const hsi::Shape shape{spec.rows, spec.cols, spec.bands};
            const auto ranks = hsi::RankMatrix::uniform(3, rank);
            std::mt19937_64 rng(spec.seed);
            std::normal_distribution<double> n(0.0, 1.0);
            hsi::FactorSet f{ranks, {}};
            for (std::size_t k = 0; k < 3; ++k) {
                hsi::DenseTensor g(hsi::factor_shape(shape, ranks, k));
                for (double& v : g.data()) v = n(rng);
                f.factors.push_back(std::move(g));
            }
            scene.cube = hsi::fctn_reconstruct(f);
            std::normal_distribution<double> noise(0.0, spec.noise);
            if (spec.noise > 0.0)
                for (double& v : scene.cube.data()) v += noise(rng);
            scene.labels = hsi::data::LabelImage(spec.rows, spec.cols, 1);
            scene.classes = 1;
        }
        const std::filesystem::path dir(out);
        hsi::data::save_scene(scene, dir / "cube.npy", dir / "labels.npy");
        std::cout << "wrote " << (dir / "cube.npy").string() << " and " << (dir / "labels.npy").string() << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
