#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ramf/tensor.hpp"

namespace ramf {

class Xoshiro256ss;

struct SCAConfig {
    int model_dim = 256;     // D
    int num_heads = 4;       // H, even so heads can be mixed in pairs
    bool causal = true;
    int groupnorm_groups = 0;  // 0 -> num_heads
    bool enable_chc = true;
    bool enable_smc = true;
    bool enable_group_norm = true;
    // MTA-style ablation: one independent 3x3 kernel per head instead of the
    // single shared one.
    bool per_head_kernels = false;
    // Q/K projections start at a fraction of Glorot scale so initial logits
    // sit near zero: together with the delta kernel and identity mixers the
    // block begins as near-uniform standard attention, and any learned
    // attention routing reflects training rather than the draw of the init.
    double qk_init_scale = 0.1;

    int head_dim() const { return model_dim / num_heads; }
    int gn_groups() const { return groupnorm_groups > 0 ? groupnorm_groups : num_heads; }
};

struct SCAState {
    std::vector<Var> w_q, w_k, w_v;  // per head [D, d_h], no bias
    Var chc_kernel, chc_bias;        // shared [3,3] + scalar (or [H,3,3] + [H])
    Var smc_mixers;                  // [H/2, 2, 2]
    Var out_w, out_b;                // [D, D], [D]
    Var gn_gamma, gn_beta;           // [D], [D]
};

struct AttentionTrace {
    Tensor pre_mix;   // A  [H, N, N]
    Tensor mixed;     // A' [H, N, N]
    bool causal = false;
    int num_heads = 0;
    int seq_len = 0;
};

SCAState sca_init(const SCAConfig& config, ParamStore& params, const std::string& prefix,
                  Xoshiro256ss& rng);

// The full block: per-head scaled dot-product logits, shared cross-head
// convolution on the logit maps, masked softmax, structural pair mixing,
// value aggregation, output projection and group norm. `trace`, when given,
// receives A and A'.
Var sca_forward(const Var& z, const SCAState& state, const SCAConfig& config,
                AttentionTrace* trace = nullptr);

// Individual pieces, exposed for testing and reuse.
Var chc_apply(const Var& logits, const Var& kernel, const Var& bias);
Var smc_mix(const Var& attention, const Var& mixers);

// Row i may attend to key j iff j <= i.
std::vector<uint8_t> causal_mask(int64_t n);
// Row i may attend to every j != i (pairwise cross attention).
std::vector<uint8_t> self_exclusion_mask(int64_t n);

// Mean attention mass received by `source_index`, averaged over heads and the
// query rows for which that key is visible.
double extract_contribution(const AttentionTrace& trace, int source_index);

int64_t sca_param_count(const SCAConfig& config);

}  // namespace ramf
