#include "ramf/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "ramf/errors.hpp"
#include "ramf/init.hpp"
#include "ramf/random.hpp"

namespace ramf {

namespace {

const std::pair<Variant, const char*> kVariantNames[] = {
    {Variant::RAMF, "RAMF"},
    {Variant::MF, "MF"},
    {Variant::no_hier, "no_hier"},
    {Variant::no_objdesc, "no_objdesc"},
    {Variant::no_assumption, "no_assumption"},
    {Variant::no_chc, "no_chc"},
    {Variant::no_smc, "no_smc"},
    {Variant::concat_fusion, "concat_fusion"},
    {Variant::mta_style, "mta_style"},
    {Variant::std_attn, "std_attn"},
    {Variant::cross_attn, "cross_attn"},
    {Variant::lstm_lgcf, "lstm_lgcf"},
    {Variant::no_gate, "no_gate"},
    {Variant::no_gtc, "no_gtc"},
    {Variant::no_ltc, "no_ltc"},
    {Variant::no_mlp, "no_mlp"},
    {Variant::mf_cot, "mf_cot"},
    {Variant::objdesc_layer2, "objdesc_layer2"},
};

// Modalities entering layer 1 through an LGCF (or LSTM) encoder.
std::vector<ModalityName> layer1_encoded(Variant v) {
    switch (v) {
        case Variant::MF:
        case Variant::mf_cot:
        case Variant::no_objdesc:
        case Variant::objdesc_layer2:
            return {ModalityName::text, ModalityName::audio, ModalityName::video};
        default:
            return {ModalityName::text, ModalityName::audio, ModalityName::video,
                    ModalityName::obj_desc};
    }
}

// Reasoning texts encoded by the {hidden, D} MLP + mean pooling.
std::vector<ModalityName> reasoning_encoded(Variant v) {
    switch (v) {
        case Variant::MF:
        case Variant::no_assumption:
            return {};
        case Variant::mf_cot:
            // The single CoT text travels in the obj_desc slot.
            return {ModalityName::obj_desc};
        default:
            return {ModalityName::hate_inf, ModalityName::nonhate_inf};
    }
}

bool variant_has_layer2(Variant v) {
    switch (v) {
        case Variant::MF:
        case Variant::no_assumption:
        case Variant::no_hier:
            return false;
        default:
            return true;
    }
}

FusionKind fusion_kind_for(Variant v) {
    switch (v) {
        case Variant::concat_fusion: return FusionKind::concat;
        case Variant::std_attn: return FusionKind::std_attn;
        case Variant::cross_attn: return FusionKind::cross_attn;
        default: return FusionKind::sca;
    }
}

LGCFMode lgcf_mode_for(Variant v) {
    switch (v) {
        case Variant::no_gate: return LGCFMode::no_gate;
        case Variant::no_gtc: return LGCFMode::local_only;
        case Variant::no_ltc: return LGCFMode::global_only;
        default: return LGCFMode::full;
    }
}

int layer1_rows(Variant v) {
    if (v == Variant::no_hier) return 6;
    return static_cast<int>(layer1_encoded(v).size());
}

int layer2_rows(Variant v) {
    if (!variant_has_layer2(v)) return 0;
    switch (v) {
        case Variant::mf_cot: return 2;             // [Y1, cot]
        case Variant::objdesc_layer2: return 4;     // [Y1, Z_To, hate, nonhate]
        default: return 3;                          // [Y1, hate, nonhate]
    }
}

const ModalitySpec& spec_or_throw(const ModelConfig& config, ModalityName m) {
    for (const auto& spec : config.modalities) {
        if (spec.name == m) return spec;
    }
    raise(ErrorKind::InvalidArgument,
          std::string("model config lacks a spec for modality ") + modality_name_str(m));
}

SCAConfig layer_sca_config(const ModelConfig& config) {
    SCAConfig sc;
    sc.model_dim = config.unified_dim;
    sc.num_heads = config.num_heads;
    sc.causal = config.causal;
    switch (config.variant) {
        case Variant::no_chc: sc.enable_chc = false; break;
        case Variant::no_smc: sc.enable_smc = false; break;
        case Variant::mta_style: sc.per_head_kernels = true; break;
        default: break;
    }
    return sc;
}

FusionLayer build_fusion_layer(const ModelConfig& config, int rows, ParamStore& params,
                               const std::string& prefix, Xoshiro256ss& rng) {
    FusionLayer layer;
    layer.kind = fusion_kind_for(config.variant);
    layer.input_rows = rows;
    const int64_t d = config.unified_dim;
    const int64_t h = config.num_heads;
    const int64_t dh = d / h;
    switch (layer.kind) {
        case FusionKind::sca:
            layer.sca_config = layer_sca_config(config);
            layer.sca_state = sca_init(layer.sca_config, params, prefix, rng);
            break;
        case FusionKind::std_attn:
            // Vanilla multi-head self-attention with biased projections; no
            // logit convolution, head mixing or normalization.
            layer.sca_config = layer_sca_config(config);
            layer.sca_config.enable_chc = false;
            layer.sca_config.enable_smc = false;
            layer.sca_config.enable_group_norm = false;
            for (int64_t i = 0; i < h; ++i) {
                const std::string hp = prefix + ".h" + std::to_string(i);
                Tensor wq = glorot({d, dh}, rng);
                Tensor wk = glorot({d, dh}, rng);
                for (double& v : wq.data) v *= layer.sca_config.qk_init_scale;
                for (double& v : wk.data) v *= layer.sca_config.qk_init_scale;
                layer.sca_state.w_q.push_back(params.add(hp + ".wq", std::move(wq)));
                layer.bq.push_back(params.add(hp + ".bq", Tensor::zeros({dh})));
                layer.sca_state.w_k.push_back(params.add(hp + ".wk", std::move(wk)));
                layer.bk.push_back(params.add(hp + ".bk", Tensor::zeros({dh})));
                layer.sca_state.w_v.push_back(params.add(hp + ".wv", glorot({d, dh}, rng)));
                layer.bv.push_back(params.add(hp + ".bv", Tensor::zeros({dh})));
            }
            layer.sca_state.out_w = params.add(prefix + ".out.w", glorot({d, d}, rng));
            layer.sca_state.out_b = params.add(prefix + ".out.b", Tensor::zeros({d}));
            break;
        case FusionKind::cross_attn:
            // Pairwise cross attention: every row attends to the other rows.
            layer.sca_config = layer_sca_config(config);
            layer.sca_config.enable_chc = false;
            layer.sca_config.enable_smc = false;
            layer.sca_config.enable_group_norm = false;
            layer.sca_config.causal = false;
            for (int64_t i = 0; i < h; ++i) {
                const std::string hp = prefix + ".h" + std::to_string(i);
                Tensor wq = glorot({d, dh}, rng);
                Tensor wk = glorot({d, dh}, rng);
                for (double& v : wq.data) v *= layer.sca_config.qk_init_scale;
                for (double& v : wk.data) v *= layer.sca_config.qk_init_scale;
                layer.sca_state.w_q.push_back(params.add(hp + ".wq", std::move(wq)));
                layer.sca_state.w_k.push_back(params.add(hp + ".wk", std::move(wk)));
                layer.sca_state.w_v.push_back(params.add(hp + ".wv", glorot({d, dh}, rng)));
            }
            layer.sca_state.out_w = params.add(prefix + ".out.w", glorot({d, d}, rng));
            layer.sca_state.out_b = params.add(prefix + ".out.b", Tensor::zeros({d}));
            break;
        case FusionKind::concat:
            layer.concat_w = params.add(prefix + ".cat.w", glorot({rows * d, d}, rng));
            layer.concat_b = params.add(prefix + ".cat.b", Tensor::zeros({d}));
            break;
    }
    return layer;
}

Var flatten_to_row(const Var& z) {
    const int64_t n = z->val.shape[0];
    std::vector<Var> rows;
    rows.reserve(n);
    for (int64_t i = 0; i < n; ++i) rows.push_back(row(z, i));
    return stack_rows({concat_vec(rows)});
}

Var attention_like_forward(const FusionLayer& layer, const Var& z, AttentionTrace* trace) {
    const auto& cfg = layer.sca_config;
    const int64_t n = z->val.shape[0];
    const int64_t h = cfg.num_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));

    std::vector<Var> values, logit_maps;
    for (int64_t i = 0; i < h; ++i) {
        Var q, k, v;
        if (layer.kind == FusionKind::std_attn) {
            q = affine(z, layer.sca_state.w_q[i], layer.bq[i]);
            k = affine(z, layer.sca_state.w_k[i], layer.bk[i]);
            v = affine(z, layer.sca_state.w_v[i], layer.bv[i]);
        } else {
            q = matmul(z, layer.sca_state.w_q[i]);
            k = matmul(z, layer.sca_state.w_k[i]);
            v = matmul(z, layer.sca_state.w_v[i]);
        }
        values.push_back(v);
        logit_maps.push_back(scale(matmul_nt(q, k), inv_sqrt_dh));
    }
    std::vector<uint8_t> mask;
    if (layer.kind == FusionKind::cross_attn) {
        mask = n > 1 ? self_exclusion_mask(n) : std::vector<uint8_t>{};
    } else if (cfg.causal) {
        mask = causal_mask(n);
    }
    Var attention = softmax_maps_masked(stack_maps(logit_maps), mask);
    if (trace) {
        trace->pre_mix = attention->val;
        trace->mixed = attention->val;
        trace->causal = layer.kind != FusionKind::cross_attn && cfg.causal;
        trace->num_heads = static_cast<int>(h);
        trace->seq_len = static_cast<int>(n);
    }
    std::vector<Var> head_outputs;
    for (int64_t i = 0; i < h; ++i) {
        head_outputs.push_back(matmul(unstack_map(attention, i), values[i]));
    }
    return affine(concat_cols(head_outputs), layer.sca_state.out_w, layer.sca_state.out_b);
}

Var fusion_forward(const FusionLayer& layer, const Var& z, AttentionTrace* trace) {
    switch (layer.kind) {
        case FusionKind::sca:
            return sca_forward(z, layer.sca_state, layer.sca_config, trace);
        case FusionKind::std_attn:
        case FusionKind::cross_attn:
            return attention_like_forward(layer, z, trace);
        case FusionKind::concat:
            return relu(affine(flatten_to_row(z), layer.concat_w, layer.concat_b));
    }
    raise(ErrorKind::InvalidArgument, "unhandled fusion kind");
}

Var to_var(const FeatureMatrix& mat) {
    Tensor t({mat.rows, mat.cols});
    for (size_t i = 0; i < mat.data.size(); ++i) t.data[i] = static_cast<double>(mat.data[i]);
    return make_const(std::move(t));
}

Var lstm_last_state(const Var& x, const LSTMState& state, int64_t hidden) {
    const int64_t len = x->val.shape[0];
    Var h = make_const(Tensor::zeros({hidden}));
    Var c = make_const(Tensor::zeros({hidden}));
    for (int64_t t = 0; t < len; ++t) {
        Var gates = row(affine(stack_rows({concat_vec({row(x, t), h})}), state.w, state.b), 0);
        Var i_g = sigmoid(slice_vec(gates, 0, hidden));
        Var f_g = sigmoid(slice_vec(gates, hidden, hidden));
        Var g_g = tanh_op(slice_vec(gates, 2 * hidden, hidden));
        Var o_g = sigmoid(slice_vec(gates, 3 * hidden, hidden));
        c = add(mul(f_g, c), mul(i_g, g_g));
        h = mul(o_g, tanh_op(c));
    }
    return h;
}

}  // namespace

const char* variant_name(Variant v) {
    for (const auto& [variant, name] : kVariantNames) {
        if (variant == v) return name;
    }
    return "unknown";
}

Variant variant_from_name(const std::string& name) {
    for (const auto& [variant, vn] : kVariantNames) {
        if (name == vn) return variant;
    }
    raise(ErrorKind::UnknownVariant, "no variant named '" + name + "'");
}

std::vector<Variant> all_variants() {
    std::vector<Variant> out;
    for (const auto& [variant, name] : kVariantNames) out.push_back(variant);
    return out;
}

ModelConfig paper_model_config(Variant v, const std::vector<ModalitySpec>& specs) {
    ModelConfig c;
    c.variant = v;
    c.modalities = specs;
    return c;
}

ModelConfig desk_model_config(Variant v, const std::vector<ModalitySpec>& specs) {
    ModelConfig c;
    c.variant = v;
    c.modalities = specs;
    c.unified_dim = 64;
    c.mlp_hidden = 64;
    c.mfcc_mlp_hidden = 64;
    c.classifier_dims = {32, 16, 2};
    c.reasoning_mlp_dims = {64, 64};
    return c;
}

std::vector<ModalityName> required_modalities(const ModelConfig& config) {
    std::vector<ModalityName> out = layer1_encoded(config.variant);
    if (config.variant == Variant::objdesc_layer2) out.push_back(ModalityName::obj_desc);
    for (ModalityName m : reasoning_encoded(config.variant)) {
        if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    }
    std::sort(out.begin(), out.end());
    return out;
}

Model make_variant(const ModelConfig& config, uint64_t seed) {
    if (config.classifier_dims.empty() || config.classifier_dims.back() != 2) {
        raise(ErrorKind::InvalidArgument, "classifier must end in 2 output classes");
    }
    if (config.unified_dim % config.num_heads != 0) {
        raise(ErrorKind::ShapeMismatch, "unified_dim must be divisible by num_heads");
    }
    if (!reasoning_encoded(config.variant).empty() &&
        (config.reasoning_mlp_dims.size() != 2 ||
         config.reasoning_mlp_dims[1] != config.unified_dim)) {
        raise(ErrorKind::InvalidArgument, "reasoning MLP must end at the unified width");
    }

    Model model;
    model.config = config;
    Xoshiro256ss rng(mix_seed(seed, 0x6d6f64656cULL));  // "model"

    const int64_t d = config.unified_dim;
    std::vector<ModalityName> encoded = layer1_encoded(config.variant);
    if (config.variant == Variant::objdesc_layer2) encoded.push_back(ModalityName::obj_desc);
    std::sort(encoded.begin(), encoded.end());

    for (ModalityName m : encoded) {
        const ModalitySpec& spec = spec_or_throw(config, m);
        const std::string prefix = std::string("enc.") + modality_name_str(m);
        if (config.variant == Variant::lstm_lgcf) {
            LSTMState s;
            s.w = model.params.add(prefix + ".lstm.w",
                                   glorot({spec.feat_dim + d, 4 * d}, rng));
            s.b = model.params.add(prefix + ".lstm.b", Tensor::zeros({4 * d}));
            model.lstm_states[m] = s;
        } else {
            LGCFConfig lc;
            lc.in_dim = spec.feat_dim;
            lc.hidden_dim = spec.feat_dim == 40 ? config.mfcc_mlp_hidden : config.mlp_hidden;
            lc.unified_dim = config.unified_dim;
            lc.two_layer_mlp = config.variant != Variant::no_mlp;
            lc.mode = lgcf_mode_for(config.variant);
            model.lgcf_configs[m] = lc;
            model.lgcf_states[m] = lgcf_init(lc, model.params, prefix, rng);
        }
    }

    for (ModalityName m : reasoning_encoded(config.variant)) {
        const ModalitySpec& spec = spec_or_throw(config, m);
        const std::string prefix = std::string("reason.") + modality_name_str(m);
        ReasoningMLPState s;
        const int64_t hidden = config.reasoning_mlp_dims[0];
        s.w1 = model.params.add(prefix + ".mlp1.w", glorot({spec.feat_dim, hidden}, rng));
        s.b1 = model.params.add(prefix + ".mlp1.b", Tensor::zeros({hidden}));
        s.w2 = model.params.add(prefix + ".mlp2.w", glorot({hidden, d}, rng));
        s.b2 = model.params.add(prefix + ".mlp2.b", Tensor::zeros({d}));
        model.reasoning_states[m] = s;
    }

    model.layer1 = build_fusion_layer(config, layer1_rows(config.variant), model.params, "fuse1", rng);
    model.has_layer2 = variant_has_layer2(config.variant);
    if (model.has_layer2) {
        model.layer2 =
            build_fusion_layer(config, layer2_rows(config.variant), model.params, "fuse2", rng);
    }

    int64_t in_dim = d;
    for (size_t i = 0; i < config.classifier_dims.size(); ++i) {
        const int64_t out_dim = config.classifier_dims[i];
        Var w = model.params.add("clf." + std::to_string(i) + ".w", glorot({in_dim, out_dim}, rng));
        Var b = model.params.add("clf." + std::to_string(i) + ".b", Tensor::zeros({out_dim}));
        model.classifier.emplace_back(w, b);
        in_dim = out_dim;
    }
    return model;
}

namespace {

Var reasoning_vec(Model& model, ModalityName m, const Var& x) {
    const auto& s = model.reasoning_states.at(m);
    return mean_rows(affine(relu(affine(x, s.w1, s.b1)), s.w2, s.b2));
}

Var encoded_vec(Model& model, ModalityName m, const Var& x) {
    if (model.config.variant == Variant::lstm_lgcf) {
        return lstm_last_state(x, model.lstm_states.at(m), model.config.unified_dim);
    }
    return lgcf_forward(x, model.lgcf_states.at(m), model.lgcf_configs.at(m));
}

Var bundle_input(Model& model, const FeatureBundle& bundle, ModalityName m) {
    auto it = bundle.features.find(m);
    if (it == bundle.features.end()) {
        raise(ErrorKind::MissingModality, std::string("bundle '") + bundle.video_id +
                                              "' lacks modality " + modality_name_str(m));
    }
    const ModalitySpec& spec = spec_or_throw(model.config, m);
    if (it->second.rows != spec.seq_len || it->second.cols != spec.feat_dim) {
        raise(ErrorKind::ShapeMismatch,
              std::string(modality_name_str(m)) + ": expected [" + std::to_string(spec.seq_len) +
                  ", " + std::to_string(spec.feat_dim) + "], found [" +
                  std::to_string(it->second.rows) + ", " + std::to_string(it->second.cols) + "]");
    }
    return to_var(it->second);
}

}  // namespace

Var forward_logits(Model& model, const FeatureBundle& bundle, ForwardTraces* traces) {
    const Variant v = model.config.variant;

    std::vector<Var> layer1_stack;
    for (ModalityName m : layer1_encoded(v)) {
        layer1_stack.push_back(encoded_vec(model, m, bundle_input(model, bundle, m)));
    }
    if (v == Variant::no_hier) {
        for (ModalityName m : {ModalityName::hate_inf, ModalityName::nonhate_inf}) {
            layer1_stack.push_back(reasoning_vec(model, m, bundle_input(model, bundle, m)));
        }
    }

    AttentionTrace* t1 = traces ? &traces->layer1 : nullptr;
    Var y1_matrix = fusion_forward(model.layer1, stack_rows(layer1_stack), t1);
    if (traces && model.layer1.kind != FusionKind::concat) traces->has_layer1 = true;
    Var pooled = mean_rows(y1_matrix);

    if (model.has_layer2) {
        std::vector<Var> layer2_stack{pooled};
        if (v == Variant::objdesc_layer2) {
            layer2_stack.push_back(
                encoded_vec(model, ModalityName::obj_desc,
                            bundle_input(model, bundle, ModalityName::obj_desc)));
        }
        if (v == Variant::mf_cot) {
            layer2_stack.push_back(reasoning_vec(
                model, ModalityName::obj_desc, bundle_input(model, bundle, ModalityName::obj_desc)));
        } else {
            for (ModalityName m : {ModalityName::hate_inf, ModalityName::nonhate_inf}) {
                layer2_stack.push_back(reasoning_vec(model, m, bundle_input(model, bundle, m)));
            }
        }
        AttentionTrace* t2 = traces ? &traces->layer2 : nullptr;
        Var y2_matrix = fusion_forward(model.layer2, stack_rows(layer2_stack), t2);
        if (traces && model.layer2.kind != FusionKind::concat) traces->has_layer2 = true;
        pooled = mean_rows(y2_matrix);
    }

    Var x = stack_rows({pooled});
    for (size_t i = 0; i < model.classifier.size(); ++i) {
        x = affine(x, model.classifier[i].first, model.classifier[i].second);
        if (i + 1 < model.classifier.size()) x = relu(x);
    }
    return row(x, 0);
}

Prediction predict(Model& model, const FeatureBundle& bundle, ForwardTraces* traces) {
    Var logits = forward_logits(model, bundle, traces);
    Prediction p;
    p.logits = {logits->val.data[0], logits->val.data[1]};
    const double m = std::max(p.logits[0], p.logits[1]);
    const double e0 = std::exp(p.logits[0] - m);
    const double e1 = std::exp(p.logits[1] - m);
    p.prob_hate = e1 / (e0 + e1);
    p.y_hat = p.logits[1] > p.logits[0] ? 1 : 0;
    return p;
}

Prediction forward_ramf(Model& model, const FeatureBundle& bundle, ForwardTraces* traces) {
    if (model.config.variant == Variant::MF) {
        raise(ErrorKind::UnknownVariant, "forward_ramf called on an MF model");
    }
    return predict(model, bundle, traces);
}

Prediction forward_mf(Model& model, const FeatureBundle& bundle, ForwardTraces* traces) {
    if (model.config.variant != Variant::MF) {
        raise(ErrorKind::UnknownVariant, "forward_mf requires the MF variant");
    }
    return predict(model, bundle, traces);
}

Var batch_loss(Model& model, const std::vector<const FeatureBundle*>& batch) {
    if (batch.empty()) raise(ErrorKind::InvalidArgument, "empty batch");
    std::vector<Var> losses;
    losses.reserve(batch.size());
    for (const FeatureBundle* b : batch) {
        losses.push_back(cross_entropy_logits(forward_logits(model, *b), b->label));
    }
    return scale(add_n(losses), 1.0 / static_cast<double>(batch.size()));
}

std::optional<std::pair<int, int>> layer2_reasoning_sources(Variant v) {
    if (!variant_has_layer2(v) || v == Variant::mf_cot) return std::nullopt;
    if (v == Variant::objdesc_layer2) return std::make_pair(2, 3);
    return std::make_pair(1, 2);
}

int64_t flops_per_forward(const Model& model) {
    const ModelConfig& c = model.config;
    const int64_t d = c.unified_dim;
    int64_t flops = 0;

    auto seq_len_of = [&](ModalityName m) -> int64_t { return spec_or_throw(c, m).seq_len; };

    for (const auto& [m, lc] : model.lgcf_configs) {
        const int64_t len = seq_len_of(m);
        if (lc.two_layer_mlp) {
            flops += 2 * len * (static_cast<int64_t>(lc.in_dim) * lc.hidden_dim +
                                static_cast<int64_t>(lc.hidden_dim) * d);
        } else {
            flops += 2 * len * static_cast<int64_t>(lc.in_dim) * d;
        }
        if (lc.mode != LGCFMode::global_only) {
            flops += lc.conv_channel_mixing ? 2 * lc.conv_kernel * d * d * len
                                            : 2 * lc.conv_kernel * d * len;
        }
        if (lc.mode == LGCFMode::full) flops += 2 * (2 * d) * d;
    }
    for (const auto& kv : model.lstm_states) {
        const int64_t len = seq_len_of(kv.first);
        const int64_t in = spec_or_throw(c, kv.first).feat_dim;
        flops += len * 2 * (in + d) * (4 * d);
    }
    for (const auto& kv : model.reasoning_states) {
        const int64_t len = seq_len_of(kv.first);
        const int64_t in = spec_or_throw(c, kv.first).feat_dim;
        flops += 2 * len * (in * static_cast<int64_t>(c.reasoning_mlp_dims[0]) +
                            static_cast<int64_t>(c.reasoning_mlp_dims[0]) * d);
    }

    auto fusion_flops = [&](const FusionLayer& layer) -> int64_t {
        const int64_t n = layer.input_rows;
        const int64_t h = c.num_heads;
        const int64_t dh = d / h;
        switch (layer.kind) {
            case FusionKind::concat:
                return 2 * (n * d) * d;
            case FusionKind::sca: {
                int64_t f = 6 * n * d * d;          // QKV projections
                f += 2 * h * n * n * dh;            // Q K^T
                if (layer.sca_config.enable_chc) f += 2 * 9 * h * n * n;
                if (layer.sca_config.enable_smc) f += 4 * h * n * n;
                f += 2 * h * n * n * dh;            // A' V
                f += 2 * n * d * d;                 // output projection
                return f;
            }
            case FusionKind::std_attn:
            case FusionKind::cross_attn: {
                int64_t f = 6 * n * d * d;
                f += 2 * h * n * n * dh;
                f += 2 * h * n * n * dh;
                f += 2 * n * d * d;
                return f;
            }
        }
        return 0;
    };
    flops += fusion_flops(model.layer1);
    if (model.has_layer2) flops += fusion_flops(model.layer2);

    int64_t in_dim = d;
    for (int out_dim : c.classifier_dims) {
        flops += 2 * in_dim * out_dim;
        in_dim = out_dim;
    }
    return flops;
}

// --- checkpoint io ------------------------------------------------------------

namespace {

nlohmann::json config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["variant"] = variant_name(c.variant);
    j["modalities"] = nlohmann::json::array();
    for (const auto& spec : c.modalities) {
        j["modalities"].push_back({{"name", modality_name_str(spec.name)},
                                   {"seq_len", spec.seq_len},
                                   {"feat_dim", spec.feat_dim},
                                   {"encoder_tag", spec.encoder_tag}});
    }
    j["unified_dim"] = c.unified_dim;
    j["mlp_hidden"] = c.mlp_hidden;
    j["mfcc_mlp_hidden"] = c.mfcc_mlp_hidden;
    j["num_heads"] = c.num_heads;
    j["causal"] = c.causal;
    j["classifier_dims"] = c.classifier_dims;
    j["reasoning_mlp_dims"] = c.reasoning_mlp_dims;
    return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    for (const auto& js : j.at("modalities")) {
        ModalitySpec spec;
        spec.name = modality_name_from_str(js.at("name").get<std::string>());
        spec.seq_len = js.at("seq_len").get<int>();
        spec.feat_dim = js.at("feat_dim").get<int>();
        spec.encoder_tag = js.value("encoder_tag", std::string());
        c.modalities.push_back(spec);
    }
    c.unified_dim = j.at("unified_dim").get<int>();
    c.mlp_hidden = j.at("mlp_hidden").get<int>();
    c.mfcc_mlp_hidden = j.at("mfcc_mlp_hidden").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.causal = j.at("causal").get<bool>();
    c.classifier_dims = j.at("classifier_dims").get<std::vector<int>>();
    c.reasoning_mlp_dims = j.at("reasoning_mlp_dims").get<std::vector<int>>();
    return c;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& stem) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["config"] = config_to_json(model.config);
    j["tensors"] = nlohmann::json::array();
    int64_t offset = 0;
    for (const auto& e : model.params.entries()) {
        j["tensors"].push_back(
            {{"name", e.name}, {"shape", e.var->val.shape}, {"offset", offset}});
        offset += e.var->val.numel();
    }
    std::ofstream mf(stem.string() + ".json");
    if (!mf) raise(ErrorKind::IoError, "cannot write checkpoint manifest " + stem.string());
    mf << j.dump(2) << "\n";

    std::ofstream pf(stem.string() + ".bin", std::ios::binary);
    if (!pf) raise(ErrorKind::IoError, "cannot write checkpoint payload " + stem.string());
    for (const auto& e : model.params.entries()) {
        for (double v : e.var->val.data) {
            float f = static_cast<float>(v);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            unsigned char b[4] = {static_cast<unsigned char>(bits & 0xff),
                                  static_cast<unsigned char>((bits >> 8) & 0xff),
                                  static_cast<unsigned char>((bits >> 16) & 0xff),
                                  static_cast<unsigned char>((bits >> 24) & 0xff)};
            pf.write(reinterpret_cast<const char*>(b), 4);
        }
    }
}

Model load_checkpoint(const std::filesystem::path& stem) {
    std::ifstream mf(stem.string() + ".json");
    if (!mf) raise(ErrorKind::IoError, "cannot open checkpoint manifest " + stem.string());
    nlohmann::json j;
    try {
        mf >> j;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::CorruptPayload, "checkpoint manifest parse failure: " + std::string(e.what()));
    }
    Model model = make_variant(config_from_json(j.at("config")), 0);

    std::ifstream pf(stem.string() + ".bin", std::ios::binary);
    if (!pf) raise(ErrorKind::IoError, "cannot open checkpoint payload " + stem.string());
    const auto& tensors = j.at("tensors");
    if (tensors.size() != model.params.entries().size()) {
        raise(ErrorKind::CorruptPayload, "checkpoint tensor count does not match the variant");
    }
    for (size_t i = 0; i < tensors.size(); ++i) {
        const auto& e = model.params.entries()[i];
        if (tensors[i].at("name").get<std::string>() != e.name) {
            raise(ErrorKind::CorruptPayload, "checkpoint tensor order mismatch at " + e.name);
        }
        for (double& v : e.var->val.data) {
            unsigned char b[4];
            if (!pf.read(reinterpret_cast<char*>(b), 4)) {
                raise(ErrorKind::CorruptPayload, "checkpoint payload shorter than manifest");
            }
            uint32_t bits = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                            (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
            float f;
            std::memcpy(&f, &bits, 4);
            v = static_cast<double>(f);
        }
    }
    if (pf.peek() != std::char_traits<char>::eof()) {
        raise(ErrorKind::CorruptPayload, "checkpoint payload longer than manifest");
    }
    return model;
}

}  // namespace ramf
