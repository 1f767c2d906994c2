#pragma once

// Test-only reference implementations. Everything here is written as plain
// scalar loops, independent of the library's compute paths, so agreement is
// meaningful evidence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ramf/random.hpp"
#include "ramf/tensor.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix make_matrix(int64_t rows, int64_t cols, double fill = 0.0) {
    return Matrix(static_cast<size_t>(rows), std::vector<double>(static_cast<size_t>(cols), fill));
}

inline Matrix random_matrix(int64_t rows, int64_t cols, ramf::Xoshiro256ss& rng) {
    Matrix m = make_matrix(rows, cols);
    for (auto& row : m) {
        for (double& v : row) v = rng.gaussian();
    }
    return m;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out = make_matrix(a.size(), b[0].size());
    for (size_t i = 0; i < a.size(); ++i) {
        for (size_t j = 0; j < b[0].size(); ++j) {
            double acc = 0.0;
            for (size_t k = 0; k < b.size(); ++k) acc += a[i][k] * b[k][j];
            out[i][j] = acc;
        }
    }
    return out;
}

// Per-row affine map y = x W + b.
inline Matrix affine(const Matrix& x, const Matrix& w, const std::vector<double>& b) {
    Matrix out = matmul(x, w);
    for (auto& row : out) {
        for (size_t j = 0; j < b.size(); ++j) row[j] += b[j];
    }
    return out;
}

inline std::vector<double> col_mean(const Matrix& x) {
    std::vector<double> out(x[0].size(), 0.0);
    for (const auto& row : x) {
        for (size_t j = 0; j < row.size(); ++j) out[j] += row[j];
    }
    for (double& v : out) v /= static_cast<double>(x.size());
    return out;
}

inline std::vector<double> col_max(const Matrix& x) {
    std::vector<double> out = x[0];
    for (const auto& row : x) {
        for (size_t j = 0; j < row.size(); ++j) out[j] = std::max(out[j], row[j]);
    }
    return out;
}

// Sliding-window 1-D convolution over time with zero padding, depthwise
// (kernel[k][c]) or channel mixing (kernel3[k][i][o]).
inline Matrix conv1d_depthwise(const Matrix& x, const Matrix& kernel,
                               const std::vector<double>& bias) {
    const int64_t len = static_cast<int64_t>(x.size());
    const int64_t d = static_cast<int64_t>(x[0].size());
    const int64_t k = static_cast<int64_t>(kernel.size());
    const int64_t pad = (k - 1) / 2;
    Matrix out = make_matrix(len, d);
    for (int64_t t = 0; t < len; ++t) {
        for (int64_t c = 0; c < d; ++c) {
            double acc = bias[static_cast<size_t>(c)];
            for (int64_t dt = 0; dt < k; ++dt) {
                const int64_t src = t + dt - pad;
                if (src < 0 || src >= len) continue;
                acc += x[static_cast<size_t>(src)][static_cast<size_t>(c)] *
                       kernel[static_cast<size_t>(dt)][static_cast<size_t>(c)];
            }
            out[static_cast<size_t>(t)][static_cast<size_t>(c)] = acc;
        }
    }
    return out;
}

inline std::vector<double> sigmoid_gate_fuse(const std::vector<double>& v_local,
                                             const std::vector<double>& v_global,
                                             const Matrix& w, const std::vector<double>& b) {
    const size_t d = v_local.size();
    std::vector<double> out(d);
    for (size_t j = 0; j < d; ++j) {
        double z = b[j];
        for (size_t i = 0; i < d; ++i) z += v_local[i] * w[i][j];
        for (size_t i = 0; i < d; ++i) z += v_global[i] * w[d + i][j];
        const double g = 1.0 / (1.0 + std::exp(-z));
        out[j] = g * v_local[j] + (1.0 - g) * v_global[j];
    }
    return out;
}

// Naive double-loop same-shape 2-D convolution of one [N, N] map with a 3x3
// kernel and scalar bias.
inline Matrix conv2d_3x3(const Matrix& map, const Matrix& kernel, double bias) {
    const int64_t n = static_cast<int64_t>(map.size());
    Matrix out = make_matrix(n, n, bias);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            for (int64_t di = -1; di <= 1; ++di) {
                for (int64_t dj = -1; dj <= 1; ++dj) {
                    const int64_t si = i + di, sj = j + dj;
                    if (si < 0 || si >= n || sj < 0 || sj >= n) continue;
                    out[static_cast<size_t>(i)][static_cast<size_t>(j)] +=
                        map[static_cast<size_t>(si)][static_cast<size_t>(sj)] *
                        kernel[static_cast<size_t>(di + 1)][static_cast<size_t>(dj + 1)];
                }
            }
        }
    }
    return out;
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    std::vector<double> out(logits.size());
    double denom = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        denom += out[i];
    }
    for (double& v : out) v /= denom;
    return out;
}

// Vanilla multi-head self-attention: per-head projections of z [N, D] by
// wq/wk/wv [H][D][dh] (optional biases), scaled dot-product softmax over keys,
// per-head value aggregation, concatenation, output projection. This is the
// reference the convolution-augmented block must reduce to.
struct VanillaAttentionParams {
    std::vector<Matrix> wq, wk, wv;            // H x [D, dh]
    std::vector<std::vector<double>> bq, bk, bv;  // optional, H x [dh]
    Matrix out_w;                              // [D, D]
    std::vector<double> out_b;                 // [D]
};

inline Matrix vanilla_multihead_attention(const Matrix& z, const VanillaAttentionParams& p,
                                          bool causal) {
    const size_t n = z.size();
    const size_t h = p.wq.size();
    const size_t dh = p.wq[0][0].size();
    Matrix concat = make_matrix(n, h * dh);
    for (size_t head = 0; head < h; ++head) {
        Matrix q = matmul(z, p.wq[head]);
        Matrix k = matmul(z, p.wk[head]);
        Matrix v = matmul(z, p.wv[head]);
        if (!p.bq.empty()) {
            for (size_t i = 0; i < n; ++i) {
                for (size_t j = 0; j < dh; ++j) {
                    q[i][j] += p.bq[head][j];
                    k[i][j] += p.bk[head][j];
                    v[i][j] += p.bv[head][j];
                }
            }
        }
        const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
        for (size_t i = 0; i < n; ++i) {
            std::vector<double> logits(n, -1e30);
            const size_t limit = causal ? i + 1 : n;
            for (size_t j = 0; j < limit; ++j) {
                double acc = 0.0;
                for (size_t t = 0; t < dh; ++t) acc += q[i][t] * k[j][t];
                logits[j] = acc * inv;
            }
            std::vector<double> weights = softmax(logits);
            if (causal) {
                for (size_t j = i + 1; j < n; ++j) weights[j] = 0.0;
                double denom = 0.0;
                for (double w : weights) denom += w;
                for (double& w : weights) w /= denom;
            }
            for (size_t t = 0; t < dh; ++t) {
                double acc = 0.0;
                for (size_t j = 0; j < n; ++j) acc += weights[j] * v[j][t];
                concat[i][head * dh + t] = acc;
            }
        }
    }
    return affine(concat, p.out_w, p.out_b);
}

// Brute-force confusion-matrix metrics with the 0/0 -> 0 convention.
struct MetricOracle {
    double accuracy, macro_f1, f1_hate, precision_hate, recall_hate;
};

inline MetricOracle metrics(const std::vector<int>& pred, const std::vector<int>& label) {
    double tp = 0, fp = 0, tn = 0, fn = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == 1 && label[i] == 1) ++tp;
        if (pred[i] == 1 && label[i] == 0) ++fp;
        if (pred[i] == 0 && label[i] == 0) ++tn;
        if (pred[i] == 0 && label[i] == 1) ++fn;
    }
    auto div = [](double a, double b) { return b == 0.0 ? 0.0 : a / b; };
    MetricOracle m{};
    m.accuracy = div(tp + tn, tp + fp + tn + fn);
    m.precision_hate = div(tp, tp + fp);
    m.recall_hate = div(tp, tp + fn);
    m.f1_hate = div(2 * m.precision_hate * m.recall_hate, m.precision_hate + m.recall_hate);
    const double precision_non = div(tn, tn + fn);
    const double recall_non = div(tn, tn + fp);
    const double f1_non = div(2 * precision_non * recall_non, precision_non + recall_non);
    m.macro_f1 = 0.5 * (m.f1_hate + f1_non);
    return m;
}

// Ordinary least squares probe on {-1, +1} targets, fit by Gaussian
// elimination on the (lightly ridged) normal equations. The returned weight
// vector has the bias as its last entry.
inline std::vector<double> linear_probe_fit(const Matrix& features, const std::vector<int>& labels) {
    const size_t n = features.size();
    const size_t d = features[0].size() + 1;  // + bias column
    Matrix ata = make_matrix(d, d);
    std::vector<double> atb(d, 0.0);
    for (size_t s = 0; s < n; ++s) {
        std::vector<double> x(d, 1.0);
        for (size_t j = 0; j + 1 < d; ++j) x[j] = features[s][j];
        const double y = labels[s] == 1 ? 1.0 : -1.0;
        for (size_t i = 0; i < d; ++i) {
            for (size_t j = 0; j < d; ++j) ata[i][j] += x[i] * x[j];
            atb[i] += x[i] * y;
        }
    }
    for (size_t i = 0; i < d; ++i) ata[i][i] += 1e-6;
    for (size_t col = 0; col < d; ++col) {
        size_t pivot = col;
        for (size_t r = col + 1; r < d; ++r) {
            if (std::fabs(ata[r][col]) > std::fabs(ata[pivot][col])) pivot = r;
        }
        std::swap(ata[col], ata[pivot]);
        std::swap(atb[col], atb[pivot]);
        for (size_t r = col + 1; r < d; ++r) {
            const double f = ata[r][col] / ata[col][col];
            for (size_t c = col; c < d; ++c) ata[r][c] -= f * ata[col][c];
            atb[r] -= f * atb[col];
        }
    }
    std::vector<double> w(d, 0.0);
    for (size_t i = d; i-- > 0;) {
        double acc = atb[i];
        for (size_t j = i + 1; j < d; ++j) acc -= ata[i][j] * w[j];
        w[i] = acc / ata[i][i];
    }
    return w;
}

inline double linear_probe_score(const std::vector<double>& w, const Matrix& features,
                                 const std::vector<int>& labels) {
    size_t correct = 0;
    for (size_t s = 0; s < features.size(); ++s) {
        double score = w.back();
        for (size_t j = 0; j + 1 < w.size(); ++j) score += w[j] * features[s][j];
        if ((score > 0.0 ? 1 : 0) == labels[s]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(features.size());
}

inline double linear_probe_accuracy(const Matrix& features, const std::vector<int>& labels) {
    return linear_probe_score(linear_probe_fit(features, labels), features, labels);
}

// Central finite differences on a scalar function of the parameter store;
// compares sampled coordinates of every tensor. Acceptance rule:
// |fd - analytic| <= atol + rel_tol * max(|fd|, |analytic|). The absolute
// floor absorbs O(step^2) truncation noise on near-zero gradients without
// masking real sign or scale errors.
//
// A coordinate that fails at the base step is retried at step/10 and
// step/100: if the finite difference converges onto the analytic value the
// mismatch was the instrument (a kink from max-pool/ReLU within the base
// step, or extreme curvature near a normalization degeneracy), not the
// gradient; such coordinates count as refined, not failed. A wrong gradient
// does not pass this, since shrinking the step drives the difference toward
// the true derivative, away from a wrong one.
struct GradCheckResult {
    bool ok = true;
    std::string worst_param;
    double worst_rel_err = 0.0;
    int refined_coords = 0;
};

inline GradCheckResult gradient_check(ramf::ParamStore& params,
                                      const std::function<double()>& loss_value,
                                      const std::function<double()>& loss_and_backward,
                                      double step = 1e-4, double rel_tol = 1e-3,
                                      int max_coords_per_tensor = 24, uint64_t seed = 7,
                                      double atol = 1e-5) {
    ramf::Xoshiro256ss rng(seed);
    params.zero_grad();
    loss_and_backward();

    GradCheckResult result;
    for (const auto& entry : params.entries()) {
        const int64_t n = entry.var->val.numel();
        std::vector<int64_t> coords;
        if (n <= max_coords_per_tensor) {
            for (int64_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (int c = 0; c < max_coords_per_tensor; ++c) {
                coords.push_back(static_cast<int64_t>(rng.bounded(static_cast<uint64_t>(n))));
            }
        }
        for (int64_t idx : coords) {
            double& theta = entry.var->val.data[static_cast<size_t>(idx)];
            const double analytic = entry.var->grad.data.empty()
                                        ? 0.0
                                        : entry.var->grad.data[static_cast<size_t>(idx)];
            auto central_diff = [&](double h) {
                const double saved = theta;
                theta = saved + h;
                const double plus = loss_value();
                theta = saved - h;
                const double minus = loss_value();
                theta = saved;
                return (plus - minus) / (2.0 * h);
            };
            auto accept = [&](double fd) {
                return std::fabs(fd - analytic) <=
                       atol + rel_tol * std::max(std::fabs(fd), std::fabs(analytic));
            };
            const double fd = central_diff(step);
            bool pass = accept(fd);
            if (!pass) {
                const double fd10 = central_diff(step / 10.0);
                const double fd100 = central_diff(step / 100.0);
                const bool converging = std::fabs(fd100 - analytic) < std::fabs(fd10 - analytic) ||
                                        accept(fd10);
                if (converging && accept(fd100)) {
                    pass = true;
                    ++result.refined_coords;
                }
            }
            if (!pass) {
                const double err = std::fabs(fd - analytic);
                const double rel =
                    err / std::max(std::max(std::fabs(fd), std::fabs(analytic)), 1e-12);
                if (rel > result.worst_rel_err) {
                    result.worst_rel_err = rel;
                    result.worst_param = entry.name + "[" + std::to_string(idx) + "]";
                }
                result.ok = false;
            }
        }
    }
    return result;
}

}  // namespace oracle
