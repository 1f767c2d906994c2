#include "ramf/lgcf.hpp"

#include <cmath>

#include "ramf/errors.hpp"
#include "ramf/init.hpp"
#include "ramf/random.hpp"

namespace ramf {

LGCFState lgcf_init(const LGCFConfig& config, ParamStore& params, const std::string& prefix,
                    Xoshiro256ss& rng) {
    if (config.conv_padding != (config.conv_kernel - 1) / 2 || config.conv_kernel % 2 == 0) {
        raise(ErrorKind::InvalidArgument,
              "conv padding must be (kernel-1)/2 with an odd kernel to preserve length");
    }
    const int64_t d = config.unified_dim;
    LGCFState s;
    if (config.two_layer_mlp) {
        s.mlp_w1 = params.add(prefix + ".mlp1.w", glorot({config.in_dim, config.hidden_dim}, rng));
        s.mlp_b1 = params.add(prefix + ".mlp1.b", Tensor::zeros({config.hidden_dim}));
        s.mlp_w2 = params.add(prefix + ".mlp2.w", glorot({config.hidden_dim, d}, rng));
        s.mlp_b2 = params.add(prefix + ".mlp2.b", Tensor::zeros({d}));
    } else {
        s.mlp_w1 = params.add(prefix + ".adapt.w", glorot({config.in_dim, d}, rng));
        s.mlp_b1 = params.add(prefix + ".adapt.b", Tensor::zeros({d}));
    }
    if (config.mode != LGCFMode::global_only) {
        const int64_t k = config.conv_kernel;
        Tensor kernel = config.conv_channel_mixing
                            ? glorot_conv1d_mixing(k, d, rng)
                            : glorot({k, d}, rng);
        s.conv_kernel = params.add(prefix + ".conv.k", std::move(kernel));
        s.conv_bias = params.add(prefix + ".conv.b", Tensor::zeros({d}));
    }
    if (config.mode == LGCFMode::full) {
        s.gate_w = params.add(prefix + ".gate.w", glorot({2 * d, d}, rng));
        s.gate_b = params.add(prefix + ".gate.b", Tensor::zeros({d}));
    }
    return s;
}

Var lgcf_project(const Var& x, const LGCFState& state, const LGCFConfig& config) {
    if (x->val.ndim() != 2 || x->val.shape[1] != config.in_dim) {
        raise(ErrorKind::ShapeMismatch, "lgcf_project input " + shape_str(x->val.shape) +
                                            " for in_dim " + std::to_string(config.in_dim));
    }
    if (!config.two_layer_mlp) return affine(x, state.mlp_w1, state.mlp_b1);
    Var h = relu(affine(x, state.mlp_w1, state.mlp_b1));
    return affine(h, state.mlp_w2, state.mlp_b2);
}

Var lgcf_local(const Var& x_mlp, const LGCFState& state, const LGCFConfig& config) {
    Var conv = conv1d_time(x_mlp, state.conv_kernel, state.conv_bias, config.conv_channel_mixing);
    return max_rows(conv);
}

Var lgcf_global(const Var& x_mlp) { return mean_rows(x_mlp); }

Var lgcf_fuse(const Var& v_local, const Var& v_global, const LGCFState& state) {
    Var cat = stack_rows({concat_vec({v_local, v_global})});  // [1, 2D]
    Var g = sigmoid(row(affine(cat, state.gate_w, state.gate_b), 0));
    Var ones = make_const(Tensor::full(g->val.shape, 1.0));
    return add(mul(g, v_local), mul(sub(ones, g), v_global));
}

Var lgcf_forward(const Var& x, const LGCFState& state, const LGCFConfig& config) {
    Var x_mlp = lgcf_project(x, state, config);
    switch (config.mode) {
        case LGCFMode::local_only:
            return lgcf_local(x_mlp, state, config);
        case LGCFMode::global_only:
            return lgcf_global(x_mlp);
        case LGCFMode::no_gate: {
            Var sum = add(lgcf_local(x_mlp, state, config), lgcf_global(x_mlp));
            return scale(sum, 0.5);
        }
        case LGCFMode::full:
            return lgcf_fuse(lgcf_local(x_mlp, state, config), lgcf_global(x_mlp), state);
    }
    raise(ErrorKind::InvalidArgument, "unhandled LGCF mode");
}

int64_t lgcf_param_count(const LGCFConfig& config) {
    const int64_t d = config.unified_dim;
    int64_t n = 0;
    if (config.two_layer_mlp) {
        n += static_cast<int64_t>(config.in_dim) * config.hidden_dim + config.hidden_dim;
        n += static_cast<int64_t>(config.hidden_dim) * d + d;
    } else {
        n += static_cast<int64_t>(config.in_dim) * d + d;
    }
    if (config.mode != LGCFMode::global_only) {
        n += config.conv_channel_mixing ? config.conv_kernel * d * d : config.conv_kernel * d;
        n += d;  // conv bias
    }
    if (config.mode == LGCFMode::full) n += 2 * d * d + d;
    return n;
}

}  // namespace ramf
