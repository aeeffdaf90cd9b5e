#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hsi/data.hpp"
#include "hsi/nn/graph.hpp"
#include "hsi/nn/ops.hpp"
#include "hsi/sdtn.hpp"

namespace hsi::trn {

/// Trn: full dual-pathway network on the SDTN reconstruction.
/// SdtnOnly: SDTN reconstruction -> spatial average -> affine -> softmax.
/// CnnBaseline: the Trn network on raw patches with every tensor term off.
enum class Mode { Trn, SdtnOnly, CnnBaseline };

[[nodiscard]] Mode parse_mode(const std::string& name);
[[nodiscard]] std::string mode_name(Mode m);

/// Per-patch decomposition settings used before and during training and at inference.
struct SdtnSettings {
    std::size_t rank = 2;          ///< uniform FCTN bond rank
    std::size_t glr_rank = 1;      ///< clamped per mode to its admissible maximum
    std::size_t prefit_iters = 300;
    double prefit_lr = 1.0;        ///< starting step of the backtracking pre-fit
    std::size_t infer_iters = 30;  ///< refinement steps for an inference patch
    double lr_scale = 1.0;         ///< tensor-parameter step = lr_scale * network step
};

struct TrnConfig {
    std::size_t patch = 9;
    std::size_t bands = 0;
    std::size_t classes = 0;
    std::size_t filters3d = 8;
    std::vector<std::size_t> kernel3d{7, 3, 3};  ///< spectral depth, height, width
    std::size_t filters2d = 16;
    std::size_t kernel2d = 3;
    std::size_t depthwise_kernel = 3;
    std::size_t pointwise_out = 16;
    std::size_t attention_reduction = 4;
    Mode mode = Mode::Trn;
    sdtn::Hyperparams hp;
    SdtnSettings sdtn;

    /// Throws ConfigError naming the first bad field.
    void validate() const;

    /// Channels after fusing the flattened 3-D pathway with the 2-D pathway.
    [[nodiscard]] std::size_t fused_channels() const { return filters3d * bands + filters2d; }
    [[nodiscard]] nn::ConvSpec spec3d() const;
    [[nodiscard]] nn::ConvSpec spec2d() const;
    [[nodiscard]] nn::ConvSpec depth_spec() const;
    [[nodiscard]] nn::ConvSpec point_spec() const;
    [[nodiscard]] nn::ConvSpec projection_spec() const;
};

struct Param {
    std::string name;
    DenseTensor value;
};

struct Model {
    TrnConfig config;
    std::vector<Param> params;

    [[nodiscard]] const DenseTensor& get(const std::string& name) const;
    DenseTensor& get(const std::string& name);
    [[nodiscard]] std::size_t parameter_count() const;
};

/// Glorot-uniform weights, zero biases and a zero final classifier layer.
[[nodiscard]] Model init_model(const TrnConfig& config, std::uint64_t seed);

/// Graph nodes of one forward pass.
struct ForwardNodes {
    nn::Var logits;
    nn::Var fused;  ///< invalid in SdtnOnly mode
};

/// Builds the forward pass on `h` ([P, P, B]) with parameter nodes `params`
/// (in Model::params order).
[[nodiscard]] ForwardNodes forward_graph(const Model& model, const std::vector<nn::Var>& params, const nn::Var& h);

/// Class probabilities for one feature tensor [P, P, B].
[[nodiscard]] std::vector<double> forward(const Model& model, const DenseTensor& h);

/// Index of the largest probability (1-based class id, ties to the lowest).
[[nodiscard]] int argmax_class(const std::vector<double>& probs);

struct Sample {
    DenseTensor patch;  ///< [P, P, B]
    int label = 1;      ///< 1-based
};

struct TrnLossTerms {
    double reconstruction = 0.0;
    double low_rank = 0.0;
    double regularization = 0.0;
    double classification = 0.0;  ///< beta * mean cross-entropy
    double consistency = 0.0;     ///< gamma * sum ||H - proj(F_fusion)||^2

    [[nodiscard]] double total() const noexcept {
        return reconstruction + low_rank + regularization + classification + consistency;
    }
};

struct TrnGrad {
    std::vector<DenseTensor> params;    ///< Model::params order
    std::vector<sdtn::SdtnGrad> states;  ///< one per sample; empty in CnnBaseline mode
};

struct Evaluation {
    TrnLossTerms terms;
    TrnGrad grad;                 ///< empty unless requested
    std::size_t correct = 0;      ///< training samples predicted correctly
};

/// Joint objective over a batch. `states` holds one SDTN state per sample
/// (ignored in CnnBaseline mode, where it may be empty).
[[nodiscard]] Evaluation evaluate_batch(const Model& model, const std::vector<sdtn::SdtnState>& states,
                                        const std::vector<Sample>& batch, const sdtn::Hyperparams& hp,
                                        bool with_grad);

[[nodiscard]] TrnLossTerms trn_loss(const Model& model, const std::vector<sdtn::SdtnState>& states,
                                    const std::vector<Sample>& batch, const sdtn::Hyperparams& hp);

/// One line of the training log.
struct TrainRecord {
    std::size_t iter = 0;
    double lr = 0.0;    ///< scheduled rate at this iteration
    double step = 0.0;  ///< step that produced this state (0 for the initial record)
    TrnLossTerms terms;
    double train_accuracy = 0.0;
};

struct Trained {
    Model model;
    std::vector<sdtn::SdtnState> states;  ///< per training sample
    std::vector<DenseTensor> centers;     ///< center spectrum per training sample
    std::vector<TrainRecord> log;
};

/// Loss weights as actually applied in `mode` (CnnBaseline zeroes every
/// tensor term; SdtnOnly has no consistency term).
[[nodiscard]] sdtn::Hyperparams effective_hyperparams(const TrnConfig& config);

/// Pre-fits one SDTN per sample, then runs full-batch gradient descent on all
/// parameters for hp.max_iters steps. With backtracking line search the step is
/// halved until the total loss drops, and training stops early when none does.
/// Throws DivergenceError.
[[nodiscard]] Trained train(const std::vector<Sample>& batch, const TrnConfig& config,
                            const std::function<void(const TrainRecord&)>& on_record = {});

/// Center spectrum of a patch.
[[nodiscard]] DenseTensor center_spectrum(const DenseTensor& patch);

/// Index of the training sample whose center spectrum is nearest (ties to the lowest index).
[[nodiscard]] std::size_t nearest_sample(const Trained& trained, const DenseTensor& patch);

/// Class id for a single patch: warm-started SDTN refinement (tensor modes), then the network.
[[nodiscard]] int predict_patch(const Trained& trained, const DenseTensor& patch);

/// Classifies every pixel, or only the nonzero pixels of `mask` (the rest get 0).
/// Throws DataError on a band-count mismatch.
[[nodiscard]] data::LabelImage predict_map(const Trained& trained, const DenseTensor& cube,
                                           const data::LabelImage* mask = nullptr);

}  // namespace hsi::trn
