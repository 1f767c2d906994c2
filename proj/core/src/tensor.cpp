#include "ramf/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include "ramf/errors.hpp"

namespace ramf {

namespace {

std::atomic<uint64_t> g_node_counter{0};

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

Var make_node(Tensor val, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto node = std::make_shared<Node>();
    node->val = std::move(val);
    node->parents = std::move(parents);
    node->order = g_node_counter.fetch_add(1, std::memory_order_relaxed);
    for (const auto& p : node->parents) {
        if (p->requires_grad) {
            node->requires_grad = true;
            break;
        }
    }
    if (node->requires_grad) node->backprop = std::move(backprop);
    return node;
}

void accumulate(const Var& parent, const Tensor& delta) {
    if (!parent->requires_grad) return;
    Tensor& g = parent->ensure_grad();
    const size_t n = g.data.size();
    for (size_t i = 0; i < n; ++i) g.data[i] += delta.data[i];
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->val.same_shape(b->val)) {
        raise(ErrorKind::ShapeMismatch, std::string(op) + ": " + shape_str(a->val.shape) +
                                            " vs " + shape_str(b->val.shape));
    }
}

}  // namespace

Tensor::Tensor(std::vector<int64_t> shape_in)
    : shape(std::move(shape_in)), data(static_cast<size_t>(shape_numel(shape)), 0.0) {}

Tensor::Tensor(std::vector<int64_t> shape_in, std::vector<double> data_in)
    : shape(std::move(shape_in)), data(std::move(data_in)) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape)) {
        raise(ErrorKind::ShapeMismatch, "tensor data size does not match shape " + shape_str(shape));
    }
}

Tensor Tensor::zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor& Node::ensure_grad() {
    if (grad.data.empty()) grad = Tensor::zeros(val.shape);
    return grad;
}

Var make_leaf(Tensor value) {
    auto node = std::make_shared<Node>();
    node->val = std::move(value);
    node->requires_grad = true;
    node->order = g_node_counter.fetch_add(1, std::memory_order_relaxed);
    return node;
}

Var make_const(Tensor value) {
    auto node = std::make_shared<Node>();
    node->val = std::move(value);
    node->requires_grad = false;
    node->order = g_node_counter.fetch_add(1, std::memory_order_relaxed);
    return node;
}

void backward(const Var& loss) {
    if (loss->val.numel() != 1) {
        raise(ErrorKind::ShapeMismatch, "backward expects a scalar loss, got " + shape_str(loss->val.shape));
    }
    if (!loss->requires_grad) return;

    // Collect the reachable grad-requiring subgraph.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{loss.get()};
    seen.insert(loss.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->order > b->order; });

    loss->ensure_grad().data[0] += 1.0;
    for (Node* n : order) {
        if (n->backprop && !n->grad.data.empty()) n->backprop(*n);
    }
}

// --- elementwise -------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a->val;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->val.data[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        accumulate(a, n.grad);
        accumulate(b, n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a->val;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->val.data[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        accumulate(a, n.grad);
        if (b->requires_grad) {
            Tensor& g = b->ensure_grad();
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] -= n.grad.data[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a->val;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->val.data[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            Tensor& g = a->ensure_grad();
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i] * b->val.data[i];
        }
        if (b->requires_grad) {
            Tensor& g = b->ensure_grad();
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i] * a->val.data[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a->val;
    for (double& v : out.data) v *= s;
    return make_node(std::move(out), {a}, [a, s](Node& n) {
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += s * n.grad.data[i];
    });
}

Var relu(const Var& x) {
    Tensor out = x->val;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return make_node(std::move(out), {x}, [x](Node& n) {
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (size_t i = 0; i < g.data.size(); ++i) {
            if (x->val.data[i] > 0.0) g.data[i] += n.grad.data[i];
        }
    });
}

Var sigmoid(const Var& x) {
    Tensor out = x->val;
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return make_node(std::move(out), {x}, [x](Node& n) {
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (size_t i = 0; i < g.data.size(); ++i) {
            double s = n.val.data[i];
            g.data[i] += n.grad.data[i] * s * (1.0 - s);
        }
    });
}

Var tanh_op(const Var& x) {
    Tensor out = x->val;
    for (double& v : out.data) v = std::tanh(v);
    return make_node(std::move(out), {x}, [x](Node& n) {
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (size_t i = 0; i < g.data.size(); ++i) {
            double t = n.val.data[i];
            g.data[i] += n.grad.data[i] * (1.0 - t * t);
        }
    });
}

// --- structural ----------------------------------------------------------------

Var concat_vec(const std::vector<Var>& parts) {
    int64_t total = 0;
    for (const auto& p : parts) total += p->val.numel();
    Tensor out({total});
    int64_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->val.data.begin(), p->val.data.end(), out.data.begin() + off);
        off += p->val.numel();
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    return make_node(std::move(out), std::move(parents), [parts](Node& n) {
        int64_t off = 0;
        for (const auto& p : parts) {
            int64_t len = p->val.numel();
            if (p->requires_grad) {
                Tensor& g = p->ensure_grad();
                for (int64_t i = 0; i < len; ++i) g.data[i] += n.grad.data[off + i];
            }
            off += len;
        }
    });
}

Var slice_vec(const Var& x, int64_t start, int64_t len) {
    Tensor out({len});
    std::copy(x->val.data.begin() + start, x->val.data.begin() + start + len, out.data.begin());
    return make_node(std::move(out), {x}, [x, start, len](Node& n) {
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (int64_t i = 0; i < len; ++i) g.data[start + i] += n.grad.data[i];
    });
}

Var stack_rows(const std::vector<Var>& rows) {
    int64_t n_rows = static_cast<int64_t>(rows.size());
    int64_t d = rows.front()->val.numel();
    Tensor out({n_rows, d});
    for (int64_t i = 0; i < n_rows; ++i) {
        std::copy(rows[i]->val.data.begin(), rows[i]->val.data.end(), out.data.begin() + i * d);
    }
    std::vector<Var> parents(rows.begin(), rows.end());
    return make_node(std::move(out), std::move(parents), [rows, d](Node& n) {
        for (size_t i = 0; i < rows.size(); ++i) {
            if (!rows[i]->requires_grad) continue;
            Tensor& g = rows[i]->ensure_grad();
            for (int64_t j = 0; j < d; ++j) g.data[j] += n.grad.data[static_cast<int64_t>(i) * d + j];
        }
    });
}

Var row(const Var& x, int64_t i) {
    int64_t d = x->val.shape[1];
    Tensor out({d});
    std::copy(x->val.data.begin() + i * d, x->val.data.begin() + (i + 1) * d, out.data.begin());
    return make_node(std::move(out), {x}, [x, i, d](Node& n) {
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (int64_t j = 0; j < d; ++j) g.data[i * d + j] += n.grad.data[j];
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    int64_t n_rows = parts.front()->val.shape[0];
    int64_t total = 0;
    for (const auto& p : parts) total += p->val.shape[1];
    Tensor out({n_rows, total});
    int64_t off = 0;
    for (const auto& p : parts) {
        int64_t d = p->val.shape[1];
        for (int64_t r = 0; r < n_rows; ++r) {
            std::copy(p->val.data.begin() + r * d, p->val.data.begin() + (r + 1) * d,
                      out.data.begin() + r * total + off);
        }
        off += d;
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    return make_node(std::move(out), std::move(parents), [parts, n_rows, total](Node& n) {
        int64_t off = 0;
        for (const auto& p : parts) {
            int64_t d = p->val.shape[1];
            if (p->requires_grad) {
                Tensor& g = p->ensure_grad();
                for (int64_t r = 0; r < n_rows; ++r) {
                    for (int64_t j = 0; j < d; ++j) {
                        g.data[r * d + j] += n.grad.data[r * total + off + j];
                    }
                }
            }
            off += d;
        }
    });
}

// --- linear algebra -------------------------------------------------------------

namespace {

// out[m,n] += a[m,k] * b[k,n]; ikj order so the inner loop is contiguous.
void gemm_acc(const double* a, const double* b, double* out, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        double* out_row = out + i * n;
        const double* a_row = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const double av = a_row[p];
            if (av == 0.0) continue;
            const double* b_row = b + p * n;
            for (int64_t j = 0; j < n; ++j) out_row[j] += av * b_row[j];
        }
    }
}

// out[m,n] += a[m,k] * b[n,k]^T
void gemm_nt_acc(const double* a, const double* b, double* out, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* a_row = a + i * k;
        double* out_row = out + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* b_row = b + j * k;
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
            out_row[j] += acc;
        }
    }
}

// out[k,n] += a[m,k]^T * b[m,n]
void gemm_tn_acc(const double* a, const double* b, double* out, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* a_row = a + i * k;
        const double* b_row = b + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double av = a_row[p];
            if (av == 0.0) continue;
            double* out_row = out + p * n;
            for (int64_t j = 0; j < n; ++j) out_row[j] += av * b_row[j];
        }
    }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
    if (a->val.ndim() != 2 || b->val.ndim() != 2 || a->val.shape[1] != b->val.shape[0]) {
        raise(ErrorKind::ShapeMismatch,
              "matmul: " + shape_str(a->val.shape) + " x " + shape_str(b->val.shape));
    }
    const int64_t m = a->val.shape[0], k = a->val.shape[1], n = b->val.shape[1];
    Tensor out({m, n});
    gemm_acc(a->val.data.data(), b->val.data.data(), out.data.data(), m, k, n);
    return make_node(std::move(out), {a, b}, [a, b, m, k, n](Node& nd) {
        if (a->requires_grad) {
            gemm_nt_acc(nd.grad.data.data(), b->val.data.data(), a->ensure_grad().data.data(), m, n, k);
        }
        if (b->requires_grad) {
            gemm_tn_acc(a->val.data.data(), nd.grad.data.data(), b->ensure_grad().data.data(), m, k, n);
        }
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    if (a->val.ndim() != 2 || b->val.ndim() != 2 || a->val.shape[1] != b->val.shape[1]) {
        raise(ErrorKind::ShapeMismatch,
              "matmul_nt: " + shape_str(a->val.shape) + " x " + shape_str(b->val.shape) + "^T");
    }
    const int64_t m = a->val.shape[0], k = a->val.shape[1], n = b->val.shape[0];
    Tensor out({m, n});
    gemm_nt_acc(a->val.data.data(), b->val.data.data(), out.data.data(), m, k, n);
    return make_node(std::move(out), {a, b}, [a, b, m, k, n](Node& nd) {
        // y = a b^T: da = dy b ; db = dy^T a
        if (a->requires_grad) {
            gemm_acc(nd.grad.data.data(), b->val.data.data(), a->ensure_grad().data.data(), m, n, k);
        }
        if (b->requires_grad) {
            gemm_tn_acc(nd.grad.data.data(), a->val.data.data(), b->ensure_grad().data.data(), m, n, k);
        }
    });
}

Var affine(const Var& x, const Var& w, const Var& b) {
    if (x->val.ndim() != 2 || w->val.ndim() != 2 || x->val.shape[1] != w->val.shape[0] ||
        b->val.numel() != w->val.shape[1]) {
        raise(ErrorKind::ShapeMismatch, "affine: x " + shape_str(x->val.shape) + ", w " +
                                            shape_str(w->val.shape) + ", b " + shape_str(b->val.shape));
    }
    const int64_t rows = x->val.shape[0], in = x->val.shape[1], out_dim = w->val.shape[1];
    Tensor out({rows, out_dim});
    for (int64_t r = 0; r < rows; ++r) {
        std::copy(b->val.data.begin(), b->val.data.end(), out.data.begin() + r * out_dim);
    }
    gemm_acc(x->val.data.data(), w->val.data.data(), out.data.data(), rows, in, out_dim);
    return make_node(std::move(out), {x, w, b}, [x, w, b, rows, in, out_dim](Node& nd) {
        if (x->requires_grad) {
            gemm_nt_acc(nd.grad.data.data(), w->val.data.data(), x->ensure_grad().data.data(), rows,
                        out_dim, in);
        }
        if (w->requires_grad) {
            gemm_tn_acc(x->val.data.data(), nd.grad.data.data(), w->ensure_grad().data.data(), rows, in,
                        out_dim);
        }
        if (b->requires_grad) {
            Tensor& g = b->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t j = 0; j < out_dim; ++j) g.data[j] += nd.grad.data[r * out_dim + j];
            }
        }
    });
}

// --- sequence ops -----------------------------------------------------------------

Var conv1d_time(const Var& x, const Var& kernel, const Var& bias, bool channel_mixing) {
    const int64_t len = x->val.shape[0], d = x->val.shape[1];
    const int64_t k = kernel->val.shape[0];
    const int64_t pad = (k - 1) / 2;
    if (channel_mixing) {
        if (kernel->val.ndim() != 3 || kernel->val.shape[1] != d || kernel->val.shape[2] != d) {
            raise(ErrorKind::ShapeMismatch, "conv1d_time mixing kernel " + shape_str(kernel->val.shape));
        }
    } else if (kernel->val.ndim() != 2 || kernel->val.shape[1] != d) {
        raise(ErrorKind::ShapeMismatch, "conv1d_time depthwise kernel " + shape_str(kernel->val.shape));
    }
    Tensor out({len, d});
    for (int64_t t = 0; t < len; ++t) {
        for (int64_t j = 0; j < d; ++j) out.at2(t, j) = bias->val.data[j];
    }
    if (channel_mixing) {
        for (int64_t t = 0; t < len; ++t) {
            for (int64_t dt = 0; dt < k; ++dt) {
                int64_t src = t + dt - pad;
                if (src < 0 || src >= len) continue;
                const double* x_row = x->val.data.data() + src * d;
                const double* k_mat = kernel->val.data.data() + dt * d * d;
                double* out_row = out.data.data() + t * d;
                for (int64_t i = 0; i < d; ++i) {
                    const double xv = x_row[i];
                    if (xv == 0.0) continue;
                    const double* k_row = k_mat + i * d;
                    for (int64_t o = 0; o < d; ++o) out_row[o] += xv * k_row[o];
                }
            }
        }
    } else {
        for (int64_t t = 0; t < len; ++t) {
            for (int64_t dt = 0; dt < k; ++dt) {
                int64_t src = t + dt - pad;
                if (src < 0 || src >= len) continue;
                const double* x_row = x->val.data.data() + src * d;
                const double* k_row = kernel->val.data.data() + dt * d;
                double* out_row = out.data.data() + t * d;
                for (int64_t j = 0; j < d; ++j) out_row[j] += x_row[j] * k_row[j];
            }
        }
    }
    return make_node(std::move(out), {x, kernel, bias},
                     [x, kernel, bias, len, d, k, pad, channel_mixing](Node& nd) {
                         if (bias->requires_grad) {
                             Tensor& g = bias->ensure_grad();
                             for (int64_t t = 0; t < len; ++t) {
                                 for (int64_t j = 0; j < d; ++j) g.data[j] += nd.grad.at2(t, j);
                             }
                         }
                         for (int64_t t = 0; t < len; ++t) {
                             for (int64_t dt = 0; dt < k; ++dt) {
                                 int64_t src = t + dt - pad;
                                 if (src < 0 || src >= len) continue;
                                 if (channel_mixing) {
                                     for (int64_t i = 0; i < d; ++i) {
                                         const double xv = x->val.at2(src, i);
                                         for (int64_t o = 0; o < d; ++o) {
                                             const double go = nd.grad.at2(t, o);
                                             if (kernel->requires_grad) {
                                                 kernel->ensure_grad().data[(dt * d + i) * d + o] += xv * go;
                                             }
                                             if (x->requires_grad) {
                                                 x->ensure_grad().at2(src, i) +=
                                                     kernel->val.data[(dt * d + i) * d + o] * go;
                                             }
                                         }
                                     }
                                 } else {
                                     for (int64_t j = 0; j < d; ++j) {
                                         const double go = nd.grad.at2(t, j);
                                         if (kernel->requires_grad) {
                                             kernel->ensure_grad().at2(dt, j) += x->val.at2(src, j) * go;
                                         }
                                         if (x->requires_grad) {
                                             x->ensure_grad().at2(src, j) += kernel->val.at2(dt, j) * go;
                                         }
                                     }
                                 }
                             }
                         }
                     });
}

Var max_rows(const Var& x) {
    const int64_t len = x->val.shape[0], d = x->val.shape[1];
    Tensor out({d});
    auto argmax = std::make_shared<std::vector<int64_t>>(d, 0);
    for (int64_t j = 0; j < d; ++j) {
        double best = x->val.at2(0, j);
        int64_t best_t = 0;
        for (int64_t t = 1; t < len; ++t) {
            if (x->val.at2(t, j) > best) {
                best = x->val.at2(t, j);
                best_t = t;
            }
        }
        out.data[j] = best;
        (*argmax)[j] = best_t;
    }
    return make_node(std::move(out), {x}, [x, argmax, d](Node& nd) {
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (int64_t j = 0; j < d; ++j) g.at2((*argmax)[j], j) += nd.grad.data[j];
    });
}

Var mean_rows(const Var& x) {
    const int64_t len = x->val.shape[0], d = x->val.shape[1];
    Tensor out({d});
    for (int64_t t = 0; t < len; ++t) {
        for (int64_t j = 0; j < d; ++j) out.data[j] += x->val.at2(t, j);
    }
    const double inv = 1.0 / static_cast<double>(len);
    for (double& v : out.data) v *= inv;
    return make_node(std::move(out), {x}, [x, len, d, inv](Node& nd) {
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (int64_t t = 0; t < len; ++t) {
            for (int64_t j = 0; j < d; ++j) g.at2(t, j) += nd.grad.data[j] * inv;
        }
    });
}

// --- attention ops -------------------------------------------------------------------

Var stack_maps(const std::vector<Var>& maps) {
    const int64_t h = static_cast<int64_t>(maps.size());
    const int64_t n = maps.front()->val.shape[0];
    Tensor out({h, n, n});
    for (int64_t i = 0; i < h; ++i) {
        std::copy(maps[i]->val.data.begin(), maps[i]->val.data.end(), out.data.begin() + i * n * n);
    }
    std::vector<Var> parents(maps.begin(), maps.end());
    return make_node(std::move(out), std::move(parents), [maps, n](Node& nd) {
        for (size_t i = 0; i < maps.size(); ++i) {
            if (!maps[i]->requires_grad) continue;
            Tensor& g = maps[i]->ensure_grad();
            const int64_t off = static_cast<int64_t>(i) * n * n;
            for (int64_t j = 0; j < n * n; ++j) g.data[j] += nd.grad.data[off + j];
        }
    });
}

Var unstack_map(const Var& maps, int64_t h) {
    const int64_t n = maps->val.shape[1];
    Tensor out({n, n});
    const int64_t off = h * n * n;
    std::copy(maps->val.data.begin() + off, maps->val.data.begin() + off + n * n, out.data.begin());
    return make_node(std::move(out), {maps}, [maps, off, n](Node& nd) {
        if (!maps->requires_grad) return;
        Tensor& g = maps->ensure_grad();
        for (int64_t j = 0; j < n * n; ++j) g.data[off + j] += nd.grad.data[j];
    });
}

Var conv2d_shared(const Var& maps, const Var& kernel, const Var& bias) {
    if (kernel->val.shape != std::vector<int64_t>{3, 3}) {
        raise(ErrorKind::ShapeMismatch, "conv2d_shared expects a 3x3 kernel, got " +
                                            shape_str(kernel->val.shape));
    }
    const int64_t h = maps->val.shape[0], n = maps->val.shape[1];
    Tensor out({h, n, n});
    const double b = bias->val.data[0];
    for (int64_t hd = 0; hd < h; ++hd) {
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = 0; j < n; ++j) {
                double acc = b;
                for (int64_t di = -1; di <= 1; ++di) {
                    for (int64_t dj = -1; dj <= 1; ++dj) {
                        int64_t si = i + di, sj = j + dj;
                        if (si < 0 || si >= n || sj < 0 || sj >= n) continue;
                        acc += maps->val.at3(hd, si, sj) * kernel->val.at2(di + 1, dj + 1);
                    }
                }
                out.at3(hd, i, j) = acc;
            }
        }
    }
    return make_node(std::move(out), {maps, kernel, bias}, [maps, kernel, bias, h, n](Node& nd) {
        if (bias->requires_grad) {
            double acc = 0.0;
            for (double v : nd.grad.data) acc += v;
            bias->ensure_grad().data[0] += acc;
        }
        for (int64_t hd = 0; hd < h; ++hd) {
            for (int64_t i = 0; i < n; ++i) {
                for (int64_t j = 0; j < n; ++j) {
                    const double go = nd.grad.at3(hd, i, j);
                    if (go == 0.0) continue;
                    for (int64_t di = -1; di <= 1; ++di) {
                        for (int64_t dj = -1; dj <= 1; ++dj) {
                            int64_t si = i + di, sj = j + dj;
                            if (si < 0 || si >= n || sj < 0 || sj >= n) continue;
                            if (kernel->requires_grad) {
                                kernel->ensure_grad().at2(di + 1, dj + 1) += maps->val.at3(hd, si, sj) * go;
                            }
                            if (maps->requires_grad) {
                                maps->ensure_grad().at3(hd, si, sj) += kernel->val.at2(di + 1, dj + 1) * go;
                            }
                        }
                    }
                }
            }
        }
    });
}

Var conv2d_per_head(const Var& maps, const Var& kernels, const Var& biases) {
    const int64_t h = maps->val.shape[0], n = maps->val.shape[1];
    if (kernels->val.shape != std::vector<int64_t>{h, 3, 3} || biases->val.numel() != h) {
        raise(ErrorKind::ShapeMismatch, "conv2d_per_head kernels " + shape_str(kernels->val.shape));
    }
    Tensor out({h, n, n});
    for (int64_t hd = 0; hd < h; ++hd) {
        const double b = biases->val.data[hd];
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = 0; j < n; ++j) {
                double acc = b;
                for (int64_t di = -1; di <= 1; ++di) {
                    for (int64_t dj = -1; dj <= 1; ++dj) {
                        int64_t si = i + di, sj = j + dj;
                        if (si < 0 || si >= n || sj < 0 || sj >= n) continue;
                        acc += maps->val.at3(hd, si, sj) * kernels->val.at3(hd, di + 1, dj + 1);
                    }
                }
                out.at3(hd, i, j) = acc;
            }
        }
    }
    return make_node(std::move(out), {maps, kernels, biases}, [maps, kernels, biases, h, n](Node& nd) {
        for (int64_t hd = 0; hd < h; ++hd) {
            if (biases->requires_grad) {
                double acc = 0.0;
                for (int64_t i = 0; i < n * n; ++i) acc += nd.grad.data[hd * n * n + i];
                biases->ensure_grad().data[hd] += acc;
            }
            for (int64_t i = 0; i < n; ++i) {
                for (int64_t j = 0; j < n; ++j) {
                    const double go = nd.grad.at3(hd, i, j);
                    if (go == 0.0) continue;
                    for (int64_t di = -1; di <= 1; ++di) {
                        for (int64_t dj = -1; dj <= 1; ++dj) {
                            int64_t si = i + di, sj = j + dj;
                            if (si < 0 || si >= n || sj < 0 || sj >= n) continue;
                            if (kernels->requires_grad) {
                                kernels->ensure_grad().at3(hd, di + 1, dj + 1) +=
                                    maps->val.at3(hd, si, sj) * go;
                            }
                            if (maps->requires_grad) {
                                maps->ensure_grad().at3(hd, si, sj) +=
                                    kernels->val.at3(hd, di + 1, dj + 1) * go;
                            }
                        }
                    }
                }
            }
        }
    });
}

Var softmax_maps_masked(const Var& logits, const std::vector<uint8_t>& mask) {
    const int64_t h = logits->val.shape[0], n = logits->val.shape[1];
    if (!logits->val.all_finite()) {
        raise(ErrorKind::NonFiniteLogit, "attention logits overflowed before softmax");
    }
    if (!mask.empty() && static_cast<int64_t>(mask.size()) != n * n) {
        raise(ErrorKind::ShapeMismatch, "mask size does not match N*N");
    }
    constexpr double kMaskPenalty = -1e9;
    Tensor out({h, n, n});
    for (int64_t hd = 0; hd < h; ++hd) {
        for (int64_t i = 0; i < n; ++i) {
            double row_max = -1e300;
            for (int64_t j = 0; j < n; ++j) {
                double v = logits->val.at3(hd, i, j);
                if (!mask.empty() && mask[i * n + j]) v += kMaskPenalty;
                if (v > row_max) row_max = v;
            }
            double denom = 0.0;
            for (int64_t j = 0; j < n; ++j) {
                double v = logits->val.at3(hd, i, j);
                if (!mask.empty() && mask[i * n + j]) v += kMaskPenalty;
                double e = std::exp(v - row_max);
                out.at3(hd, i, j) = e;
                denom += e;
            }
            for (int64_t j = 0; j < n; ++j) {
                out.at3(hd, i, j) /= denom;
                // Masked probabilities are clamped to exactly zero.
                if (!mask.empty() && mask[i * n + j]) out.at3(hd, i, j) = 0.0;
            }
        }
    }
    return make_node(std::move(out), {logits}, [logits, h, n](Node& nd) {
        if (!logits->requires_grad) return;
        Tensor& g = logits->ensure_grad();
        for (int64_t hd = 0; hd < h; ++hd) {
            for (int64_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (int64_t j = 0; j < n; ++j) {
                    dot += nd.grad.at3(hd, i, j) * nd.val.at3(hd, i, j);
                }
                for (int64_t j = 0; j < n; ++j) {
                    const double a = nd.val.at3(hd, i, j);
                    g.at3(hd, i, j) += a * (nd.grad.at3(hd, i, j) - dot);
                }
            }
        }
    });
}

Var pair_mix(const Var& maps, const Var& mixers) {
    const int64_t h = maps->val.shape[0], n = maps->val.shape[1];
    if (h % 2 != 0) {
        raise(ErrorKind::OddHeadCount, "pair_mix requires an even head count, got " + std::to_string(h));
    }
    if (mixers->val.shape != std::vector<int64_t>{h / 2, 2, 2}) {
        raise(ErrorKind::ShapeMismatch, "pair_mix mixers " + shape_str(mixers->val.shape));
    }
    Tensor out({h, n, n});
    const int64_t plane = n * n;
    for (int64_t p = 0; p < h / 2; ++p) {
        const double m00 = mixers->val.at3(p, 0, 0), m01 = mixers->val.at3(p, 0, 1);
        const double m10 = mixers->val.at3(p, 1, 0), m11 = mixers->val.at3(p, 1, 1);
        const double* even = maps->val.data.data() + (2 * p) * plane;
        const double* odd = maps->val.data.data() + (2 * p + 1) * plane;
        double* out_even = out.data.data() + (2 * p) * plane;
        double* out_odd = out.data.data() + (2 * p + 1) * plane;
        for (int64_t i = 0; i < plane; ++i) {
            out_even[i] = m00 * even[i] + m01 * odd[i];
            out_odd[i] = m10 * even[i] + m11 * odd[i];
        }
    }
    return make_node(std::move(out), {maps, mixers}, [maps, mixers, h, plane](Node& nd) {
        for (int64_t p = 0; p < h / 2; ++p) {
            const double m00 = mixers->val.at3(p, 0, 0), m01 = mixers->val.at3(p, 0, 1);
            const double m10 = mixers->val.at3(p, 1, 0), m11 = mixers->val.at3(p, 1, 1);
            const double* even = maps->val.data.data() + (2 * p) * plane;
            const double* odd = maps->val.data.data() + (2 * p + 1) * plane;
            const double* g_even = nd.grad.data.data() + (2 * p) * plane;
            const double* g_odd = nd.grad.data.data() + (2 * p + 1) * plane;
            if (mixers->requires_grad) {
                Tensor& gm = mixers->ensure_grad();
                double d00 = 0, d01 = 0, d10 = 0, d11 = 0;
                for (int64_t i = 0; i < plane; ++i) {
                    d00 += g_even[i] * even[i];
                    d01 += g_even[i] * odd[i];
                    d10 += g_odd[i] * even[i];
                    d11 += g_odd[i] * odd[i];
                }
                gm.at3(p, 0, 0) += d00;
                gm.at3(p, 0, 1) += d01;
                gm.at3(p, 1, 0) += d10;
                gm.at3(p, 1, 1) += d11;
            }
            if (maps->requires_grad) {
                Tensor& gx = maps->ensure_grad();
                double* gx_even = gx.data.data() + (2 * p) * plane;
                double* gx_odd = gx.data.data() + (2 * p + 1) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    gx_even[i] += m00 * g_even[i] + m10 * g_odd[i];
                    gx_odd[i] += m01 * g_even[i] + m11 * g_odd[i];
                }
            }
        }
    });
}

// --- normalization / loss ---------------------------------------------------------

Var group_norm_rows(const Var& x, const Var& gamma, const Var& beta, int64_t groups, double eps) {
    const int64_t rows = x->val.shape[0], d = x->val.shape[1];
    if (d % groups != 0) {
        raise(ErrorKind::ShapeMismatch, "group_norm: channels " + std::to_string(d) +
                                            " not divisible by groups " + std::to_string(groups));
    }
    const int64_t gs = d / groups;
    Tensor out({rows, d});
    auto xhat = std::make_shared<Tensor>(Tensor::zeros({rows, d}));
    auto inv_std = std::make_shared<Tensor>(Tensor::zeros({rows, groups}));
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t g = 0; g < groups; ++g) {
            double mean = 0.0;
            for (int64_t c = g * gs; c < (g + 1) * gs; ++c) mean += x->val.at2(r, c);
            mean /= static_cast<double>(gs);
            double var = 0.0;
            for (int64_t c = g * gs; c < (g + 1) * gs; ++c) {
                double dvi = x->val.at2(r, c) - mean;
                var += dvi * dvi;
            }
            var /= static_cast<double>(gs);
            double istd = 1.0 / std::sqrt(var + eps);
            inv_std->at2(r, g) = istd;
            for (int64_t c = g * gs; c < (g + 1) * gs; ++c) {
                double xh = (x->val.at2(r, c) - mean) * istd;
                xhat->at2(r, c) = xh;
                out.at2(r, c) = gamma->val.data[c] * xh + beta->val.data[c];
            }
        }
    }
    return make_node(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat, inv_std, rows, d, groups, gs](Node& nd) {
                         if (gamma->requires_grad) {
                             Tensor& gg = gamma->ensure_grad();
                             for (int64_t r = 0; r < rows; ++r) {
                                 for (int64_t c = 0; c < d; ++c) {
                                     gg.data[c] += nd.grad.at2(r, c) * xhat->at2(r, c);
                                 }
                             }
                         }
                         if (beta->requires_grad) {
                             Tensor& gb = beta->ensure_grad();
                             for (int64_t r = 0; r < rows; ++r) {
                                 for (int64_t c = 0; c < d; ++c) gb.data[c] += nd.grad.at2(r, c);
                             }
                         }
                         if (!x->requires_grad) return;
                         Tensor& gx = x->ensure_grad();
                         for (int64_t r = 0; r < rows; ++r) {
                             for (int64_t g = 0; g < groups; ++g) {
                                 double mean_dy = 0.0, mean_dyxh = 0.0;
                                 for (int64_t c = g * gs; c < (g + 1) * gs; ++c) {
                                     double dy = nd.grad.at2(r, c) * gamma->val.data[c];
                                     mean_dy += dy;
                                     mean_dyxh += dy * xhat->at2(r, c);
                                 }
                                 mean_dy /= static_cast<double>(gs);
                                 mean_dyxh /= static_cast<double>(gs);
                                 const double istd = inv_std->at2(r, g);
                                 for (int64_t c = g * gs; c < (g + 1) * gs; ++c) {
                                     double dy = nd.grad.at2(r, c) * gamma->val.data[c];
                                     gx.at2(r, c) +=
                                         istd * (dy - mean_dy - xhat->at2(r, c) * mean_dyxh);
                                 }
                             }
                         }
                     });
}

Var cross_entropy_logits(const Var& logits, int64_t label) {
    const int64_t c = logits->val.numel();
    if (label < 0 || label >= c) {
        raise(ErrorKind::IndexOutOfRange, "label " + std::to_string(label) + " for " +
                                              std::to_string(c) + " classes");
    }
    double m = logits->val.data[0];
    for (int64_t i = 1; i < c; ++i) m = std::max(m, logits->val.data[i]);
    double denom = 0.0;
    for (int64_t i = 0; i < c; ++i) denom += std::exp(logits->val.data[i] - m);
    const double loss = std::log(denom) + m - logits->val.data[label];
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
    for (int64_t i = 0; i < c; ++i) (*probs)[i] = std::exp(logits->val.data[i] - m) / denom;
    Tensor out({1});
    out.data[0] = loss;
    return make_node(std::move(out), {logits}, [logits, probs, label, c](Node& nd) {
        if (!logits->requires_grad) return;
        Tensor& g = logits->ensure_grad();
        const double go = nd.grad.data[0];
        for (int64_t i = 0; i < c; ++i) {
            g.data[i] += go * ((*probs)[i] - (i == label ? 1.0 : 0.0));
        }
    });
}

Var sum_all(const Var& x) {
    Tensor out({1});
    for (double v : x->val.data) out.data[0] += v;
    return make_node(std::move(out), {x}, [x](Node& nd) {
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        const double go = nd.grad.data[0];
        for (double& v : g.data) v += go;
    });
}

Var add_n(const std::vector<Var>& terms) {
    Tensor out = terms.front()->val;
    for (size_t i = 1; i < terms.size(); ++i) {
        for (size_t j = 0; j < out.data.size(); ++j) out.data[j] += terms[i]->val.data[j];
    }
    std::vector<Var> parents(terms.begin(), terms.end());
    return make_node(std::move(out), std::move(parents), [terms](Node& nd) {
        for (const auto& t : terms) accumulate(t, nd.grad);
    });
}

// --- parameter store ----------------------------------------------------------------

Var ParamStore::add(const std::string& name, Tensor init) {
    for (const auto& e : entries_) {
        if (e.name == name) raise(ErrorKind::InvalidArgument, "duplicate parameter name " + name);
    }
    entries_.push_back({name, make_leaf(std::move(init))});
    return entries_.back().var;
}

Var ParamStore::find(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.name == name) return e.var;
    }
    raise(ErrorKind::InvalidArgument, "unknown parameter " + name);
}

int64_t ParamStore::param_count() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.var->val.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& e : entries_) {
        std::fill(e.var->grad.data.begin(), e.var->grad.data.end(), 0.0);
    }
}

std::vector<Tensor> ParamStore::snapshot_values() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.var->val);
    return out;
}

void ParamStore::restore_values(const std::vector<Tensor>& values) {
    if (values.size() != entries_.size()) {
        raise(ErrorKind::ShapeMismatch, "snapshot entry count mismatch");
    }
    for (size_t i = 0; i < values.size(); ++i) {
        if (!values[i].same_shape(entries_[i].var->val)) {
            raise(ErrorKind::ShapeMismatch, "snapshot shape mismatch at " + entries_[i].name);
        }
        entries_[i].var->val = values[i];
    }
}

AdamOptimizer::AdamOptimizer(const ParamStore& params, double lr) : lr_(lr) {
    for (const auto& e : params.entries()) {
        m_.push_back(Tensor::zeros(e.var->val.shape));
        v_.push_back(Tensor::zeros(e.var->val.shape));
    }
}

void AdamOptimizer::step(ParamStore& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const auto& entries = params.entries();
    for (size_t i = 0; i < entries.size(); ++i) {
        Node& node = *entries[i].var;
        if (node.grad.data.empty()) continue;
        for (size_t j = 0; j < node.val.data.size(); ++j) {
            const double g = node.grad.data[j];
            m_[i].data[j] = beta1_ * m_[i].data[j] + (1.0 - beta1_) * g;
            v_[i].data[j] = beta2_ * v_[i].data[j] + (1.0 - beta2_) * g * g;
            const double mhat = m_[i].data[j] / bc1;
            const double vhat = v_[i].data[j] / bc2;
            node.val.data[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::MissingRecord: return "MissingRecord";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::CorruptPayload: return "CorruptPayload";
        case ErrorKind::NonFiniteValue: return "NonFiniteValue";
        case ErrorKind::InvalidTarget: return "InvalidTarget";
        case ErrorKind::OddHeadCount: return "OddHeadCount";
        case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorKind::UnknownVariant: return "UnknownVariant";
        case ErrorKind::MissingModality: return "MissingModality";
        case ErrorKind::BackendUnavailable: return "BackendUnavailable";
        case ErrorKind::EmptyResponse: return "EmptyResponse";
        case ErrorKind::CacheCorruption: return "CacheCorruption";
        case ErrorKind::UnparseableVerdict: return "UnparseableVerdict";
        case ErrorKind::WrongFrameCount: return "WrongFrameCount";
        case ErrorKind::TooFewSamples: return "TooFewSamples";
        case ErrorKind::DivergedLoss: return "DivergedLoss";
        case ErrorKind::EmptyTestSet: return "EmptyTestSet";
        case ErrorKind::MissingPlaceholder: return "MissingPlaceholder";
        case ErrorKind::NonFiniteLogit: return "NonFiniteLogit";
        case ErrorKind::VariantWithoutLayer2: return "VariantWithoutLayer2";
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::IoError: return "IoError";
    }
    return "UnknownError";
}

}  // namespace ramf
