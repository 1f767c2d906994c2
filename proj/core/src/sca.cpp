#include "ramf/sca.hpp"

#include <cmath>

#include "ramf/errors.hpp"
#include "ramf/init.hpp"
#include "ramf/random.hpp"

namespace ramf {

SCAState sca_init(const SCAConfig& config, ParamStore& params, const std::string& prefix,
                  Xoshiro256ss& rng) {
    if (config.model_dim % config.num_heads != 0) {
        raise(ErrorKind::ShapeMismatch, "model_dim must be divisible by num_heads");
    }
    if (config.enable_smc && config.num_heads % 2 != 0) {
        raise(ErrorKind::OddHeadCount,
              "structural mixing pairs heads; got " + std::to_string(config.num_heads));
    }
    const int64_t d = config.model_dim;
    const int64_t dh = config.head_dim();
    const int64_t h = config.num_heads;

    SCAState s;
    for (int64_t i = 0; i < h; ++i) {
        const std::string hp = prefix + ".h" + std::to_string(i);
        Tensor wq = glorot({d, dh}, rng);
        Tensor wk = glorot({d, dh}, rng);
        for (double& v : wq.data) v *= config.qk_init_scale;
        for (double& v : wk.data) v *= config.qk_init_scale;
        s.w_q.push_back(params.add(hp + ".wq", std::move(wq)));
        s.w_k.push_back(params.add(hp + ".wk", std::move(wk)));
        s.w_v.push_back(params.add(hp + ".wv", glorot({d, dh}, rng)));
    }
    if (config.enable_chc) {
        if (config.per_head_kernels) {
            Tensor kernels({h, 3, 3});
            for (int64_t i = 0; i < h; ++i) {
                Tensor k = delta_kernel_3x3(0.01, rng);
                std::copy(k.data.begin(), k.data.end(), kernels.data.begin() + i * 9);
            }
            s.chc_kernel = params.add(prefix + ".chc.k", std::move(kernels));
            s.chc_bias = params.add(prefix + ".chc.b", Tensor::zeros({h}));
        } else {
            s.chc_kernel = params.add(prefix + ".chc.k", delta_kernel_3x3(0.01, rng));
            s.chc_bias = params.add(prefix + ".chc.b", Tensor::zeros({1}));
        }
    }
    if (config.enable_smc) {
        s.smc_mixers = params.add(prefix + ".smc.m", identity_mixers(h / 2, 0.01, rng));
    }
    s.out_w = params.add(prefix + ".out.w", glorot({d, d}, rng));
    s.out_b = params.add(prefix + ".out.b", Tensor::zeros({d}));
    if (config.enable_group_norm) {
        s.gn_gamma = params.add(prefix + ".gn.g", Tensor::full({d}, 1.0));
        s.gn_beta = params.add(prefix + ".gn.b", Tensor::zeros({d}));
    }
    return s;
}

Var chc_apply(const Var& logits, const Var& kernel, const Var& bias) {
    if (kernel->val.ndim() == 3) return conv2d_per_head(logits, kernel, bias);
    return conv2d_shared(logits, kernel, bias);
}

Var smc_mix(const Var& attention, const Var& mixers) { return pair_mix(attention, mixers); }

std::vector<uint8_t> causal_mask(int64_t n) {
    std::vector<uint8_t> mask(static_cast<size_t>(n * n), 0);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = i + 1; j < n; ++j) mask[i * n + j] = 1;
    }
    return mask;
}

std::vector<uint8_t> self_exclusion_mask(int64_t n) {
    std::vector<uint8_t> mask(static_cast<size_t>(n * n), 0);
    for (int64_t i = 0; i < n; ++i) mask[i * n + i] = 1;
    return mask;
}

Var sca_forward(const Var& z, const SCAState& state, const SCAConfig& config,
                AttentionTrace* trace) {
    if (z->val.ndim() != 2 || z->val.shape[1] != config.model_dim) {
        raise(ErrorKind::ShapeMismatch, "sca_forward input " + shape_str(z->val.shape) +
                                            " for model_dim " + std::to_string(config.model_dim));
    }
    const int64_t n = z->val.shape[0];
    const int64_t h = config.num_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(config.head_dim()));

    std::vector<Var> values;
    std::vector<Var> logit_maps;
    values.reserve(h);
    logit_maps.reserve(h);
    for (int64_t i = 0; i < h; ++i) {
        Var q = matmul(z, state.w_q[i]);
        Var k = matmul(z, state.w_k[i]);
        values.push_back(matmul(z, state.w_v[i]));
        logit_maps.push_back(scale(matmul_nt(q, k), inv_sqrt_dh));
    }
    Var logits = stack_maps(logit_maps);
    if (config.enable_chc) logits = chc_apply(logits, state.chc_kernel, state.chc_bias);

    std::vector<uint8_t> mask;
    if (config.causal) mask = causal_mask(n);
    Var attention = softmax_maps_masked(logits, mask);
    Var mixed = config.enable_smc ? smc_mix(attention, state.smc_mixers) : attention;

    if (trace) {
        trace->pre_mix = attention->val;
        trace->mixed = mixed->val;
        trace->causal = config.causal;
        trace->num_heads = static_cast<int>(h);
        trace->seq_len = static_cast<int>(n);
    }

    std::vector<Var> head_outputs;
    head_outputs.reserve(h);
    for (int64_t i = 0; i < h; ++i) {
        head_outputs.push_back(matmul(unstack_map(mixed, i), values[i]));
    }
    Var concat = concat_cols(head_outputs);
    Var projected = affine(concat, state.out_w, state.out_b);
    if (!config.enable_group_norm) return projected;
    return group_norm_rows(projected, state.gn_gamma, state.gn_beta, config.gn_groups());
}

double extract_contribution(const AttentionTrace& trace, int source_index) {
    const int n = trace.seq_len;
    const int h = trace.num_heads;
    if (source_index < 0 || source_index >= n) {
        raise(ErrorKind::IndexOutOfRange,
              "source index " + std::to_string(source_index) + " for N=" + std::to_string(n));
    }
    // Under a causal mask, key j is visible only to query rows i >= j.
    const int first_row = trace.causal ? source_index : 0;
    double acc = 0.0;
    int64_t count = 0;
    for (int hd = 0; hd < h; ++hd) {
        for (int i = first_row; i < n; ++i) {
            acc += trace.mixed.at3(hd, i, source_index);
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

int64_t sca_param_count(const SCAConfig& config) {
    const int64_t d = config.model_dim;
    const int64_t dh = config.head_dim();
    const int64_t h = config.num_heads;
    int64_t n = 3 * h * d * dh;  // QKV, bias-free
    n += d * d + d;              // output projection
    if (config.enable_chc) n += config.per_head_kernels ? h * 9 + h : 9 + 1;
    if (config.enable_smc) n += 2 * h;  // (H/2) 2x2 mixers
    if (config.enable_group_norm) n += 2 * d;
    return n;
}

}  // namespace ramf
