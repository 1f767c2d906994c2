#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ramf/feature_io.hpp"
#include "ramf/lgcf.hpp"
#include "ramf/sca.hpp"
#include "ramf/tensor.hpp"

namespace ramf {

enum class Variant {
    RAMF,
    MF,
    no_hier,
    no_objdesc,
    no_assumption,
    no_chc,
    no_smc,
    concat_fusion,
    mta_style,
    std_attn,
    cross_attn,
    lstm_lgcf,
    no_gate,
    no_gtc,
    no_ltc,
    no_mlp,
    mf_cot,
    objdesc_layer2,
};

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);
std::vector<Variant> all_variants();

enum class FusionKind { sca, std_attn, cross_attn, concat };

struct ModelConfig {
    Variant variant = Variant::RAMF;
    std::vector<ModalitySpec> modalities;
    int unified_dim = 256;
    int mlp_hidden = 512;
    int mfcc_mlp_hidden = 128;  // hidden width used for 40-dim MFCC audio
    int num_heads = 4;
    bool causal = true;
    std::vector<int> classifier_dims{128, 64, 2};
    std::vector<int> reasoning_mlp_dims{512, 256};  // {hidden, out == unified_dim}
};

// Paper-scale defaults for the given feature dims.
ModelConfig paper_model_config(Variant v, const std::vector<ModalitySpec>& specs);
// Small defaults matched to desk_spec_set().
ModelConfig desk_model_config(Variant v, const std::vector<ModalitySpec>& specs);

struct ReasoningMLPState {
    Var w1, b1, w2, b2;
};

struct LSTMState {
    Var w, b;  // [(in + hidden), 4*hidden], [4*hidden]; gate order i, f, g, o
};

struct FusionLayer {
    FusionKind kind = FusionKind::sca;
    int input_rows = 0;
    SCAConfig sca_config;
    SCAState sca_state;
    std::vector<Var> bq, bk, bv;  // std_attn per-head projection biases
    Var concat_w, concat_b;       // concat fusion
};

struct Model {
    ModelConfig config;
    ParamStore params;
    std::map<ModalityName, LGCFConfig> lgcf_configs;
    std::map<ModalityName, LGCFState> lgcf_states;
    std::map<ModalityName, LSTMState> lstm_states;
    std::map<ModalityName, ReasoningMLPState> reasoning_states;
    FusionLayer layer1;
    FusionLayer layer2;
    bool has_layer2 = false;
    std::vector<std::pair<Var, Var>> classifier;  // (w, b) per layer
};

// Builds the requested variant with deterministic, seed-driven initialization.
Model make_variant(const ModelConfig& config, uint64_t seed);

// Modalities a bundle must carry for this variant.
std::vector<ModalityName> required_modalities(const ModelConfig& config);

struct Prediction {
    std::array<double, 2> logits{0.0, 0.0};
    double prob_hate = 0.5;
    int y_hat = 0;
};

struct ForwardTraces {
    AttentionTrace layer1;
    AttentionTrace layer2;
    bool has_layer1 = false;
    bool has_layer2 = false;
};

// Builds the forward graph and returns the [2] logit Var (for training).
Var forward_logits(Model& model, const FeatureBundle& bundle, ForwardTraces* traces = nullptr);

Prediction predict(Model& model, const FeatureBundle& bundle, ForwardTraces* traces = nullptr);
// Named entry points for the two headline configurations.
Prediction forward_ramf(Model& model, const FeatureBundle& bundle, ForwardTraces* traces = nullptr);
Prediction forward_mf(Model& model, const FeatureBundle& bundle, ForwardTraces* traces = nullptr);

// Mean cross entropy over the batch.
Var batch_loss(Model& model, const std::vector<const FeatureBundle*>& batch);

// Layer-2 stack indices of the hate / non-hate reasoning sources, when the
// variant has them.
std::optional<std::pair<int, int>> layer2_reasoning_sources(Variant v);

// FLOPs of one forward pass under the documented convention (one
// multiply-accumulate = 2 ops; bias adds, softmax and normalizations excluded).
int64_t flops_per_forward(const Model& model);

// Checkpoint: <stem>.json manifest (config + tensor index) and <stem>.bin
// concatenated little-endian float32 payload in registration order.
void save_checkpoint(const Model& model, const std::filesystem::path& stem);
Model load_checkpoint(const std::filesystem::path& stem);

}  // namespace ramf
