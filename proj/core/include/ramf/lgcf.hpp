#pragma once

#include <cstdint>
#include <string>

#include "ramf/tensor.hpp"

namespace ramf {

class Xoshiro256ss;

// Which temporal channels feed the compressed vector.
enum class LGCFMode {
    full,         // gated blend of local and global channels
    no_gate,      // plain average of local and global
    local_only,   // local channel only (global channel removed)
    global_only,  // global channel only (local channel removed)
};

struct LGCFConfig {
    int in_dim = 0;           // modality feature width D^m
    int hidden_dim = 512;     // MLP hidden width (128 for MFCC audio)
    int unified_dim = 256;    // shared width D
    int conv_kernel = 3;
    int conv_padding = 1;     // must equal (conv_kernel - 1) / 2
    // Depthwise keeps the parameter budget aligned with the reference totals;
    // full channel mixing stays available behind this switch.
    bool conv_channel_mixing = false;
    bool two_layer_mlp = true;  // false: single dimension-adapting linear map
    LGCFMode mode = LGCFMode::full;
};

struct LGCFState {
    Var mlp_w1, mlp_b1;   // two_layer_mlp: in -> hidden; else in -> unified
    Var mlp_w2, mlp_b2;   // hidden -> unified (absent for single-layer)
    Var conv_kernel, conv_bias;
    Var gate_w, gate_b;   // [2D, D], [D]
};

// Registers all parameters under `prefix.` in the store.
LGCFState lgcf_init(const LGCFConfig& config, ParamStore& params, const std::string& prefix,
                    Xoshiro256ss& rng);

// Per-time-step projection to the unified width: affine -> ReLU -> affine.
Var lgcf_project(const Var& x, const LGCFState& state, const LGCFConfig& config);
// Local channel: conv over time (length-preserving) then global max per channel.
Var lgcf_local(const Var& x_mlp, const LGCFState& state, const LGCFConfig& config);
// Global channel: mean over time per channel.
Var lgcf_global(const Var& x_mlp);
// Gated convex combination g*local + (1-g)*global.
Var lgcf_fuse(const Var& v_local, const Var& v_global, const LGCFState& state);

// Full pipeline respecting config.mode; output is always [unified_dim].
Var lgcf_forward(const Var& x, const LGCFState& state, const LGCFConfig& config);

int64_t lgcf_param_count(const LGCFConfig& config);

}  // namespace ramf
