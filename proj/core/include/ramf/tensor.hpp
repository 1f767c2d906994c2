#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ramf {

// Dense row-major tensor of doubles. Compute runs in double throughout;
// float32 appears only at the file-format boundaries.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape_in);
    Tensor(std::vector<int64_t> shape_in, std::vector<double> data_in);

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double value);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(size_t i) const { return shape.at(i); }
    size_t ndim() const { return shape.size(); }

    double& at2(int64_t i, int64_t j) { return data[i * shape[1] + j]; }
    double at2(int64_t i, int64_t j) const { return data[i * shape[1] + j]; }
    double& at3(int64_t i, int64_t j, int64_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    double at3(int64_t i, int64_t j, int64_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;

    std::vector<int64_t> shape;
    std::vector<double> data;
};

std::string shape_str(const std::vector<int64_t>& shape);

// ---------------------------------------------------------------------------
// Reverse-mode tape. Nodes form a DAG (children hold shared_ptrs to parents);
// creation order is a valid topological order, so backward() just walks the
// reachable set in descending order.
// ---------------------------------------------------------------------------

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad;  // allocated lazily by ensure_grad()
    bool requires_grad = false;
    uint64_t order = 0;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;

    Tensor& ensure_grad();
};

Var make_leaf(Tensor value);    // requires_grad = true (parameters)
Var make_const(Tensor value);   // requires_grad = false (inputs)

// Accumulates d(loss)/d(leaf) into every reachable leaf's grad. loss must be
// a scalar (numel == 1).
void backward(const Var& loss);

// --- elementwise / structural ---------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var tanh_op(const Var& x);

Var concat_vec(const std::vector<Var>& parts);       // [Di] -> [sum Di]
Var slice_vec(const Var& x, int64_t start, int64_t len);
Var stack_rows(const std::vector<Var>& rows);        // N x [D] -> [N, D]
Var row(const Var& x, int64_t i);                    // [N, D] -> [D]
Var concat_cols(const std::vector<Var>& parts);      // [N, Di] -> [N, sum Di]

// --- linear algebra ---------------------------------------------------------
Var matmul(const Var& a, const Var& b);              // [m,k]x[k,n]
Var matmul_nt(const Var& a, const Var& b);           // [m,k]x[n,k]^T -> [m,n]
Var affine(const Var& x, const Var& w, const Var& b);  // [R,in]x[in,out]+[out]

// --- sequence ops -----------------------------------------------------------
// 1-D convolution over the time axis of x [L, D], zero padding so L is
// preserved. Depthwise: kernel [K, D]; channel mixing: kernel [K, D, D].
Var conv1d_time(const Var& x, const Var& kernel, const Var& bias, bool channel_mixing);
Var max_rows(const Var& x);    // [L, D] -> [D], column max
Var mean_rows(const Var& x);   // [L, D] -> [D], column mean

// --- attention ops ----------------------------------------------------------
Var stack_maps(const std::vector<Var>& maps);        // H x [N,N] -> [H,N,N]
Var unstack_map(const Var& maps, int64_t h);         // [H,N,N] -> [N,N]
// Shared single 3x3 kernel applied identically per head map, zero padding.
Var conv2d_shared(const Var& maps, const Var& kernel, const Var& bias);
// Independent 3x3 kernel and bias per head (kernels [H,3,3], biases [H]).
Var conv2d_per_head(const Var& maps, const Var& kernels, const Var& biases);
// Softmax over the key axis of [H,N,N] logits. mask[i*N+j] != 0 marks (i,j)
// forbidden: a large negative constant is added pre-softmax and the output
// entry is clamped to exactly zero. Throws NonFiniteLogit on non-finite input.
Var softmax_maps_masked(const Var& logits, const std::vector<uint8_t>& mask);
// Per-pair 2x2 mixing of head maps (2p, 2p+1); mixers [H/2, 2, 2].
Var pair_mix(const Var& maps, const Var& mixers);

// --- normalization / loss ---------------------------------------------------
Var group_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                    int64_t groups, double eps = 1e-5);
// Cross entropy with logits for one sample: logits [C], label in [0, C).
Var cross_entropy_logits(const Var& logits, int64_t label);
Var add_n(const std::vector<Var>& terms);  // same-shape sum
Var sum_all(const Var& x);                 // any shape -> scalar [1]

// ---------------------------------------------------------------------------
// Named parameter registry. Entry order is the canonical serialization order.
// ---------------------------------------------------------------------------

struct ParamEntry {
    std::string name;
    Var var;
};

class ParamStore {
public:
    Var add(const std::string& name, Tensor init);
    const std::vector<ParamEntry>& entries() const { return entries_; }
    Var find(const std::string& name) const;
    int64_t param_count() const;
    void zero_grad();
    std::vector<Tensor> snapshot_values() const;
    void restore_values(const std::vector<Tensor>& values);

private:
    std::vector<ParamEntry> entries_;
};

// Adam with the standard (0.9, 0.999, 1e-8) moments and bias correction.
class AdamOptimizer {
public:
    AdamOptimizer(const ParamStore& params, double lr);
    void step(ParamStore& params);
    double lr() const { return lr_; }

private:
    double lr_;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    int64_t t_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

}  // namespace ramf
