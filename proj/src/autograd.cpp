#include "phenoswin/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace phenoswin::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

thread_local bool g_grad_enabled = true;

ConstMatMap as_matrix(const Tensor& t) {
    return ConstMatMap(t.data().data(), t.dim(0), t.numel() / std::max<Index>(t.dim(0), 1));
}
MatMap as_matrix(Tensor& t) { return MatMap(t.data().data(), t.dim(0), t.numel() / std::max<Index>(t.dim(0), 1)); }

void require_2d(const Var& v, const char* op) {
    if (!v.defined() || v.value().rank() != 2)
        throw std::invalid_argument(std::string(op) + ": expected a 2-D input, got " +
                                    (v.defined() ? shape_string(v.shape()) : std::string("undefined")));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
}

Var make_result(Tensor value, const std::vector<Var>& inputs, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const Var& v : inputs)
            if (v.requires_grad()) any = true;
        if (any) {
            node->requires_grad = true;
            for (const Var& v : inputs)
                if (v.requires_grad()) node->parents.push_back(v.ptr());
            node->backward_fn = std::move(fn);
        }
    }
    return Var(std::move(node));
}

template <typename F>
Var unary_map(const Var& x, F&& f, std::function<double(double, double)> dfdx) {
    Tensor out(x.shape());
    const auto in = x.value().data();
    auto o = out.data();
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
    return make_result(std::move(out), {x}, [x, dfdx](Node& self) {
        Tensor& gx = x.node()->grad_buffer();
        const auto xin = x.value().data();
        const auto y = self.value.data();
        const auto g = self.grad.data();
        auto gxd = gx.data();
        for (std::size_t i = 0; i < g.size(); ++i) gxd[i] += g[i] * dfdx(xin[i], y[i]);
    });
}

}  // namespace

Tensor& Node::grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape());
    return grad;
}

Var Var::constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var Var::parameter(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

const Tensor& Var::grad() const { return node_->grad_buffer(); }

void Var::zero_grad() {
    if (node_) node_->grad = Tensor(node_->value.shape());
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) {
    if (!root.requires_grad()) return;
    if (root.value().numel() != 1) throw std::invalid_argument("backward: root must be a scalar");

    // Iterative post-order DFS.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
    visited.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) {
            n->grad_buffer();
            n->backward_fn(*n);
        }
    }
}

// ---- elementwise / shape ------------------------------------------------------

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    auto o = out.data();
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
    return make_result(std::move(out), {a, b}, [a, b](Node& self) {
        for (const Var* v : {&a, &b}) {
            if (!v->requires_grad()) continue;
            auto g = v->node()->grad_buffer().data();
            const auto s = self.grad.data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += s[i];
        }
    });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    auto o = out.data();
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
    return make_result(std::move(out), {a, b}, [a, b](Node& self) {
        const auto s = self.grad.data();
        if (a.requires_grad()) {
            auto g = a.node()->grad_buffer().data();
            const auto bv = b.value().data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += s[i] * bv[i];
        }
        if (b.requires_grad()) {
            auto g = b.node()->grad_buffer().data();
            const auto av = a.value().data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += s[i] * av[i];
        }
    });
}

Var scale(const Var& a, double s) {
    return unary_map(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var relu(const Var& x) {
    return unary_map(x, [](double v) { return v > 0.0 ? v : 0.0; },
                     [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    return unary_map(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [](double v, double) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v); });
}

Var sigmoid(const Var& x) {
    return unary_map(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                     [](double, double y) { return y * (1.0 - y); });
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return make_result(std::move(out), {x}, [x](Node& self) {
        auto g = x.node()->grad_buffer().data();
        const auto s = self.grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s[i];
    });
}

Var detach(const Var& x) { return Var::constant(x.value()); }

Var sum(const Var& x) {
    double total = 0.0;
    for (double v : x.value().data()) total += v;
    return make_result(Tensor({1}, total), {x}, [x](Node& self) {
        auto g = x.node()->grad_buffer().data();
        const double s = self.grad[0];
        for (double& v : g) v += s;
    });
}

// ---- linear algebra -----------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                                    shape_string(b.shape()));
    Tensor out({a.dim(0), b.dim(1)});
    as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value());
    return make_result(std::move(out), {a, b}, [a, b](Node& self) {
        auto g = as_matrix(std::as_const(self.grad));
        if (a.requires_grad()) as_matrix(a.node()->grad_buffer()).noalias() += g * as_matrix(b.value()).transpose();
        if (b.requires_grad()) as_matrix(b.node()->grad_buffer()).noalias() += as_matrix(a.value()).transpose() * g;
    });
}

Var affine(const Var& x, const Var& w, const Var& b) {
    require_2d(x, "affine");
    require_2d(w, "affine");
    if (x.dim(1) != w.dim(0))
        throw std::invalid_argument("affine: input width " + std::to_string(x.dim(1)) + " does not match weight " +
                                    shape_string(w.shape()));
    const Index out_dim = w.dim(1);
    if (b.defined() && b.value().numel() != out_dim)
        throw std::invalid_argument("affine: bias size does not match output width");
    Tensor out({x.dim(0), out_dim});
    auto o = as_matrix(out);
    o.noalias() = as_matrix(x.value()) * as_matrix(w.value());
    if (b.defined()) {
        Eigen::Map<const Eigen::RowVectorXd> bias(b.value().data().data(), out_dim);
        o.rowwise() += bias;
    }
    std::vector<Var> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    return make_result(std::move(out), inputs, [x, w, b](Node& self) {
        auto g = as_matrix(std::as_const(self.grad));
        if (x.requires_grad()) as_matrix(x.node()->grad_buffer()).noalias() += g * as_matrix(w.value()).transpose();
        if (w.requires_grad()) as_matrix(w.node()->grad_buffer()).noalias() += as_matrix(x.value()).transpose() * g;
        if (b.defined() && b.requires_grad()) {
            Eigen::Map<Eigen::RowVectorXd> gb(b.node()->grad_buffer().data().data(), g.cols());
            gb += g.colwise().sum();
        }
    });
}

// ---- row operations -------------------------------------------------------------

Var gather_rows(const Var& x, RowIndex index) {
    require_2d(x, "gather_rows");
    const Index n = x.dim(0);
    const Index c = x.dim(1);
    const Index m = static_cast<Index>(index->size());
    Tensor out({m, c});
    const double* src = x.value().data().data();
    double* dst = out.data().data();
    for (Index r = 0; r < m; ++r) {
        const Index s = (*index)[static_cast<std::size_t>(r)];
        if (s >= n) throw std::out_of_range("gather_rows: index out of range");
        if (s >= 0) std::copy_n(src + s * c, c, dst + r * c);
    }
    return make_result(std::move(out), {x}, [x, index, c](Node& self) {
        double* g = x.node()->grad_buffer().data().data();
        const double* s = self.grad.data().data();
        for (std::size_t r = 0; r < index->size(); ++r) {
            const Index src_row = (*index)[r];
            if (src_row < 0) continue;
            double* gr = g + src_row * c;
            const double* sr = s + static_cast<Index>(r) * c;
            for (Index k = 0; k < c; ++k) gr[k] += sr[k];
        }
    });
}

Var sparse_rows(const Var& x, SparseMapPtr map) {
    require_2d(x, "sparse_rows");
    if (x.dim(0) != map->in_rows)
        throw std::invalid_argument("sparse_rows: map expects " + std::to_string(map->in_rows) + " rows, got " +
                                    std::to_string(x.dim(0)));
    const Index c = x.dim(1);
    Tensor out({map->out_rows, c});
    const double* src = x.value().data().data();
    double* dst = out.data().data();
    for (Index r = 0; r < map->out_rows; ++r) {
        double* o = dst + r * c;
        for (Index e = map->row_start[r]; e < map->row_start[r + 1]; ++e) {
            const double w = map->weights[e];
            const double* in = src + map->cols[e] * c;
            for (Index k = 0; k < c; ++k) o[k] += w * in[k];
        }
    }
    return make_result(std::move(out), {x}, [x, map, c](Node& self) {
        double* g = x.node()->grad_buffer().data().data();
        const double* s = self.grad.data().data();
        for (Index r = 0; r < map->out_rows; ++r) {
            const double* sr = s + r * c;
            for (Index e = map->row_start[r]; e < map->row_start[r + 1]; ++e) {
                const double w = map->weights[e];
                double* gr = g + map->cols[e] * c;
                for (Index k = 0; k < c; ++k) gr[k] += w * sr[k];
            }
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const Index n = parts.front().dim(0);
    Index total = 0;
    for (const Var& p : parts) {
        require_2d(p, "concat_cols");
        if (p.dim(0) != n) throw std::invalid_argument("concat_cols: row counts differ");
        total += p.dim(1);
    }
    Tensor out({n, total});
    Index offset = 0;
    for (const Var& p : parts) {
        const Index c = p.dim(1);
        const double* src = p.value().data().data();
        double* dst = out.data().data();
        for (Index r = 0; r < n; ++r) std::copy_n(src + r * c, c, dst + r * total + offset);
        offset += c;
    }
    return make_result(std::move(out), parts, [parts, n, total](Node& self) {
        Index off = 0;
        const double* s = self.grad.data().data();
        for (const Var& p : parts) {
            const Index c = p.dim(1);
            if (p.requires_grad()) {
                double* g = p.node()->grad_buffer().data().data();
                for (Index r = 0; r < n; ++r)
                    for (Index k = 0; k < c; ++k) g[r * c + k] += s[r * total + off + k];
            }
            off += c;
        }
    });
}

Var mean_rows(const Var& x) {
    require_2d(x, "mean_rows");
    const Index n = x.dim(0);
    const Index c = x.dim(1);
    Tensor out({1, c});
    const double* src = x.value().data().data();
    for (Index r = 0; r < n; ++r)
        for (Index k = 0; k < c; ++k) out[k] += src[r * c + k];
    for (Index k = 0; k < c; ++k) out[k] /= static_cast<double>(n);
    return make_result(std::move(out), {x}, [x, n, c](Node& self) {
        double* g = x.node()->grad_buffer().data().data();
        const double inv = 1.0 / static_cast<double>(n);
        for (Index r = 0; r < n; ++r)
            for (Index k = 0; k < c; ++k) g[r * c + k] += self.grad[k] * inv;
    });
}

// ---- normalization ------------------------------------------------------------

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    require_2d(x, "layer_norm");
    const Index n = x.dim(0);
    const Index c = x.dim(1);
    if (gamma.value().numel() != c || beta.value().numel() != c)
        throw std::invalid_argument("layer_norm: affine parameters do not match channel count");
    Tensor out({n, c});
    auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n * c));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
    const double* src = x.value().data().data();
    const double* g = gamma.value().data().data();
    const double* b = beta.value().data().data();
    for (Index r = 0; r < n; ++r) {
        const double* row = src + r * c;
        double mean = 0.0;
        for (Index k = 0; k < c; ++k) mean += row[k];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (Index k = 0; k < c; ++k) var += (row[k] - mean) * (row[k] - mean);
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = inv;
        for (Index k = 0; k < c; ++k) {
            const double h = (row[k] - mean) * inv;
            (*xhat)[r * c + k] = h;
            out[r * c + k] = h * g[k] + b[k];
        }
    }
    return make_result(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, n, c](Node& self) {
        const double* s = self.grad.data().data();
        const double* gv = gamma.value().data().data();
        if (gamma.requires_grad() || beta.requires_grad()) {
            double* gg = gamma.requires_grad() ? gamma.node()->grad_buffer().data().data() : nullptr;
            double* gb = beta.requires_grad() ? beta.node()->grad_buffer().data().data() : nullptr;
            for (Index r = 0; r < n; ++r)
                for (Index k = 0; k < c; ++k) {
                    if (gg) gg[k] += s[r * c + k] * (*xhat)[r * c + k];
                    if (gb) gb[k] += s[r * c + k];
                }
        }
        if (x.requires_grad()) {
            double* gx = x.node()->grad_buffer().data().data();
            for (Index r = 0; r < n; ++r) {
                double m1 = 0.0, m2 = 0.0;
                for (Index k = 0; k < c; ++k) {
                    const double dh = s[r * c + k] * gv[k];
                    m1 += dh;
                    m2 += dh * (*xhat)[r * c + k];
                }
                m1 /= static_cast<double>(c);
                m2 /= static_cast<double>(c);
                for (Index k = 0; k < c; ++k) {
                    const double dh = s[r * c + k] * gv[k];
                    gx[r * c + k] += (*inv_std)[r] * (dh - m1 - (*xhat)[r * c + k] * m2);
                }
            }
        }
    });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, const BatchNormState& state) {
    require_2d(x, "batch_norm");
    const Index n = x.dim(0);
    const Index c = x.dim(1);
    if (gamma.value().numel() != c || beta.value().numel() != c)
        throw std::invalid_argument("batch_norm: affine parameters do not match channel count");
    const double* src = x.value().data().data();
    std::vector<double> mean(static_cast<std::size_t>(c), 0.0), var(static_cast<std::size_t>(c), 0.0);
    if (state.training) {
        for (Index r = 0; r < n; ++r)
            for (Index k = 0; k < c; ++k) mean[k] += src[r * c + k];
        for (Index k = 0; k < c; ++k) mean[k] /= static_cast<double>(n);
        for (Index r = 0; r < n; ++r)
            for (Index k = 0; k < c; ++k) {
                const double d = src[r * c + k] - mean[k];
                var[k] += d * d;
            }
        for (Index k = 0; k < c; ++k) var[k] /= static_cast<double>(n);
        if (state.running_mean && state.running_var && grad_enabled()) {
            const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
            for (Index k = 0; k < c; ++k) {
                (*state.running_mean)[k] = (1.0 - state.momentum) * (*state.running_mean)[k] + state.momentum * mean[k];
                (*state.running_var)[k] =
                    (1.0 - state.momentum) * (*state.running_var)[k] + state.momentum * var[k] * unbias;
            }
        }
    } else {
        if (!state.running_mean || !state.running_var)
            throw std::invalid_argument("batch_norm: inference mode requires running statistics");
        for (Index k = 0; k < c; ++k) {
            mean[k] = (*state.running_mean)[k];
            var[k] = (*state.running_var)[k];
        }
    }
    auto inv = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c));
    for (Index k = 0; k < c; ++k) (*inv)[k] = 1.0 / std::sqrt(var[k] + state.eps);
    auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n * c));
    Tensor out({n, c});
    const double* g = gamma.value().data().data();
    const double* b = beta.value().data().data();
    for (Index r = 0; r < n; ++r)
        for (Index k = 0; k < c; ++k) {
            const double h = (src[r * c + k] - mean[k]) * (*inv)[k];
            (*xhat)[r * c + k] = h;
            out[r * c + k] = h * g[k] + b[k];
        }
    const bool training = state.training;
    return make_result(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv, n, c, training](Node& self) {
        const double* s = self.grad.data().data();
        const double* gv = gamma.value().data().data();
        std::vector<double> sum_dy(static_cast<std::size_t>(c), 0.0), sum_dy_xhat(static_cast<std::size_t>(c), 0.0);
        for (Index r = 0; r < n; ++r)
            for (Index k = 0; k < c; ++k) {
                sum_dy[k] += s[r * c + k];
                sum_dy_xhat[k] += s[r * c + k] * (*xhat)[r * c + k];
            }
        if (gamma.requires_grad()) {
            double* gg = gamma.node()->grad_buffer().data().data();
            for (Index k = 0; k < c; ++k) gg[k] += sum_dy_xhat[k];
        }
        if (beta.requires_grad()) {
            double* gb = beta.node()->grad_buffer().data().data();
            for (Index k = 0; k < c; ++k) gb[k] += sum_dy[k];
        }
        if (x.requires_grad()) {
            double* gx = x.node()->grad_buffer().data().data();
            const double nn = static_cast<double>(n);
            for (Index r = 0; r < n; ++r)
                for (Index k = 0; k < c; ++k) {
                    const double dy = s[r * c + k];
                    if (training)
                        gx[r * c + k] += gv[k] * (*inv)[k] *
                                         (dy - sum_dy[k] / nn - (*xhat)[r * c + k] * sum_dy_xhat[k] / nn);
                    else
                        gx[r * c + k] += gv[k] * (*inv)[k] * dy;
                }
        }
    });
}

// ---- attention ----------------------------------------------------------------

Var window_attention(const Var& qkv, const Var& bias, const AttentionSpec& spec, Tensor* probe) {
    require_2d(qkv, "window_attention");
    const Index nw = spec.windows;
    const Index L = spec.slots;
    const Index heads = spec.heads;
    if (qkv.dim(0) != nw * L) throw std::invalid_argument("window_attention: row count does not match layout");
    if (qkv.dim(1) % 3 != 0) throw std::invalid_argument("window_attention: qkv width must be 3*C");
    const Index c = qkv.dim(1) / 3;
    if (c % heads != 0) throw std::invalid_argument("window_attention: channels not divisible by heads");
    const Index dh = c / heads;
    if (bias.defined() && (bias.dim(0) != L * L || bias.dim(1) != heads))
        throw std::invalid_argument("window_attention: bias must be [slots*slots, heads]");
    if (spec.allowed && static_cast<Index>(spec.allowed->size()) != nw * L * L)
        throw std::invalid_argument("window_attention: mask size does not match layout");
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
    const Index stride = 3 * c;

    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(nw * heads * L * L), 0.0);
    Tensor out({nw * L, c});
    const double* q_all = qkv.value().data().data();
    const double* bias_v = bias.defined() ? bias.value().data().data() : nullptr;
    RowMat scores(L, L);
    for (Index w = 0; w < nw; ++w) {
        const std::uint8_t* allow = spec.allowed ? spec.allowed->data() + w * L * L : nullptr;
        for (Index h = 0; h < heads; ++h) {
            const double* base = q_all + w * L * stride + h * dh;
            ConstStridedMap Q(base, L, dh, Eigen::OuterStride<>(stride));
            ConstStridedMap K(base + c, L, dh, Eigen::OuterStride<>(stride));
            ConstStridedMap V(base + 2 * c, L, dh, Eigen::OuterStride<>(stride));
            scores.noalias() = (Q * K.transpose()) * scale_factor;
            MatMap P(probs->data() + (w * heads + h) * L * L, L, L);
            for (Index i = 0; i < L; ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (Index j = 0; j < L; ++j) {
                    if (allow && !allow[i * L + j]) continue;
                    double s = scores(i, j);
                    if (bias_v) s += bias_v[(i * L + j) * heads + h];
                    scores(i, j) = s;
                    mx = std::max(mx, s);
                }
                if (mx == -std::numeric_limits<double>::infinity()) continue;  // row fully masked
                double z = 0.0;
                for (Index j = 0; j < L; ++j) {
                    if (allow && !allow[i * L + j]) continue;
                    const double e = std::exp(scores(i, j) - mx);
                    P(i, j) = e;
                    z += e;
                }
                for (Index j = 0; j < L; ++j) P(i, j) /= z;
            }
            StridedMap O(out.data().data() + w * L * c + h * dh, L, dh, Eigen::OuterStride<>(c));
            O.noalias() = P * V;
        }
    }
    if (probe) *probe = Tensor({nw, heads, L, L}, *probs);

    std::vector<Var> inputs{qkv};
    if (bias.defined()) inputs.push_back(bias);
    return make_result(std::move(out), inputs, [qkv, bias, probs, nw, L, heads, c, dh, stride, scale_factor](Node& self) {
        const double* q_all = qkv.value().data().data();
        double* gq_all = qkv.requires_grad() ? qkv.node()->grad_buffer().data().data() : nullptr;
        double* gbias = (bias.defined() && bias.requires_grad()) ? bias.node()->grad_buffer().data().data() : nullptr;
        RowMat dP(L, L), dS(L, L);
        for (Index w = 0; w < nw; ++w) {
            for (Index h = 0; h < heads; ++h) {
                const double* base = q_all + w * L * stride + h * dh;
                ConstStridedMap Q(base, L, dh, Eigen::OuterStride<>(stride));
                ConstStridedMap K(base + c, L, dh, Eigen::OuterStride<>(stride));
                ConstStridedMap V(base + 2 * c, L, dh, Eigen::OuterStride<>(stride));
                ConstMatMap P(probs->data() + (w * heads + h) * L * L, L, L);
                ConstStridedMap dO(self.grad.data().data() + w * L * c + h * dh, L, dh, Eigen::OuterStride<>(c));
                dP.noalias() = dO * V.transpose();
                for (Index i = 0; i < L; ++i) {
                    const double row_dot = P.row(i).dot(dP.row(i));
                    for (Index j = 0; j < L; ++j) dS(i, j) = P(i, j) * (dP(i, j) - row_dot);
                }
                if (gbias)
                    for (Index i = 0; i < L; ++i)
                        for (Index j = 0; j < L; ++j) gbias[(i * L + j) * heads + h] += dS(i, j);
                if (gq_all) {
                    double* gbase = gq_all + w * L * stride + h * dh;
                    StridedMap dQ(gbase, L, dh, Eigen::OuterStride<>(stride));
                    StridedMap dK(gbase + c, L, dh, Eigen::OuterStride<>(stride));
                    StridedMap dV(gbase + 2 * c, L, dh, Eigen::OuterStride<>(stride));
                    dQ.noalias() += (dS * K) * scale_factor;
                    dK.noalias() += (dS.transpose() * Q) * scale_factor;
                    dV.noalias() += P.transpose() * dO;
                }
            }
        }
    });
}

// ---- losses -------------------------------------------------------------------

Var l1_sum(const Var& pred, const Tensor& target) {
    if (pred.value().numel() != target.numel()) throw std::invalid_argument("l1_sum: size mismatch");
    double total = 0.0;
    const auto p = pred.value().data();
    const auto t = target.data();
    for (std::size_t i = 0; i < p.size(); ++i) total += std::abs(p[i] - t[i]);
    return make_result(Tensor({1}, total), {pred}, [pred, target](Node& self) {
        auto g = pred.node()->grad_buffer().data();
        const auto p = pred.value().data();
        const auto t = target.data();
        const double s = self.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double d = p[i] - t[i];
            g[i] += s * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
        }
    });
}

std::vector<double> per_row_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    const Index n = logits.dim(0);
    const Index k = logits.dim(1);
    if (static_cast<Index>(labels.size()) != n) throw std::invalid_argument("cross entropy: label count mismatch");
    std::vector<double> loss(static_cast<std::size_t>(n), 0.0);
    const double* x = logits.data().data();
    for (Index r = 0; r < n; ++r) {
        const int y = labels[r];
        if (y < 0 || y >= k) continue;
        const double* row = x + r * k;
        const double mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (Index j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        loss[r] = std::log(z) + mx - row[y];
    }
    return loss;
}

Var cross_entropy_mined(const Var& logits, const std::vector<int>& labels, const MiningOptions& options) {
    require_2d(logits, "cross_entropy_mined");
    const Index n = logits.dim(0);
    const Index k = logits.dim(1);
    if (static_cast<Index>(labels.size()) != n)
        throw std::invalid_argument("cross_entropy_mined: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(n) + " rows");
    if (options.keep_fraction <= 0.0 || options.keep_fraction > 1.0)
        throw std::invalid_argument("cross_entropy_mined: keep_fraction must be in (0, 1]");
    std::vector<Index> valid;
    for (Index r = 0; r < n; ++r) {
        const int y = labels[r];
        if (options.ignore_label && y == *options.ignore_label) continue;
        if (y < 0 || y >= k)
            throw std::invalid_argument("cross_entropy_mined: label " + std::to_string(y) + " outside 0.." +
                                        std::to_string(k - 1));
        valid.push_back(r);
    }
    if (valid.empty()) throw std::invalid_argument("cross_entropy_mined: every pixel is ignored");
    const auto loss = per_row_cross_entropy(logits.value(), labels);
    const auto p_valid = static_cast<Index>(valid.size());
    Index keep = static_cast<Index>(std::ceil(options.keep_fraction * static_cast<double>(p_valid) - 1e-12));
    keep = std::clamp<Index>(std::max(keep, options.min_kept), 1, p_valid);
    std::stable_sort(valid.begin(), valid.end(), [&](Index a, Index b) { return loss[a] > loss[b]; });
    auto kept = std::make_shared<std::vector<Index>>(valid.begin(), valid.begin() + keep);
    double total = 0.0;
    for (Index r : *kept) total += loss[r];
    return make_result(Tensor({1}, total / static_cast<double>(keep)), {logits}, [logits, labels, kept, k](Node& self) {
        double* g = logits.node()->grad_buffer().data().data();
        const double* x = logits.value().data().data();
        const double s = self.grad[0] / static_cast<double>(kept->size());
        for (Index r : *kept) {
            const double* row = x + r * k;
            const double mx = *std::max_element(row, row + k);
            double z = 0.0;
            for (Index j = 0; j < k; ++j) z += std::exp(row[j] - mx);
            for (Index j = 0; j < k; ++j) {
                const double p = std::exp(row[j] - mx) / z;
                g[r * k + j] += s * (p - (j == labels[r] ? 1.0 : 0.0));
            }
        }
    });
}

}  // namespace phenoswin::ag
