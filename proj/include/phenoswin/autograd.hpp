#pragma once

// Minimal reverse-mode automatic differentiation over 2-D row tensors.
//
// Every op records its inputs and a backward closure on the output node;
// `backward(root)` walks the recorded graph in reverse topological order.
// Rows are tokens/pixels and columns are channels throughout the model.

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "phenoswin/tensor.hpp"

namespace phenoswin::ag {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Tensor value);
    static Var parameter(Tensor value);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    Index dim(std::size_t axis) const { return node_->value.dim(axis); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    /// Gradient accumulated by the last backward pass (zeros if none reached this node).
    const Tensor& grad() const;
    void zero_grad();

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
void backward(const Var& root);

// Row gather: out[r] = x[index[r]], or zeros when index[r] < 0.
using RowIndex = std::shared_ptr<const std::vector<Index>>;

// Sparse row mixing: out[row] = sum_k weight_k * x[col_k] over the row's entries.
struct SparseRowMap {
    Index out_rows = 0;
    Index in_rows = 0;
    std::vector<Index> row_start;  // size out_rows + 1
    std::vector<Index> cols;
    std::vector<double> weights;
};
using SparseMapPtr = std::shared_ptr<const SparseRowMap>;

// ---- elementwise / shape ----------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& x);
Var gelu(const Var& x);
Var sigmoid(const Var& x);
Var reshape(const Var& x, Shape shape);
Var detach(const Var& x);
Var sum(const Var& x);

// ---- linear algebra ---------------------------------------------------------
Var matmul(const Var& a, const Var& b);
/// x[n, in] * w[in, out] + b[out]; `b` may be undefined.
Var affine(const Var& x, const Var& w, const Var& b);

// ---- row operations ---------------------------------------------------------
Var gather_rows(const Var& x, RowIndex index);
Var sparse_rows(const Var& x, SparseMapPtr map);
Var concat_cols(const std::vector<Var>& parts);
Var mean_rows(const Var& x);  // [n, C] -> [1, C]

// ---- normalization ----------------------------------------------------------
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

struct BatchNormState {
    Tensor* running_mean = nullptr;
    Tensor* running_var = nullptr;
    double momentum = 0.1;
    double eps = 1e-5;
    bool training = true;
};
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, const BatchNormState& state);

// ---- attention --------------------------------------------------------------

/// Window layout for masked multi-head attention over packed [windows * slots, 3C] qkv rows.
struct AttentionSpec {
    Index windows = 0;
    Index slots = 0;  // tokens per window (including padding slots)
    Index heads = 1;
    /// allowed[(w * slots + i) * slots + j] != 0 when query i may attend key j in window w.
    std::shared_ptr<const std::vector<std::uint8_t>> allowed;
};

/// Softmax(Q K^T / sqrt(d) + bias) V per window and head.
/// `bias` is [slots * slots, heads] or undefined. When `probe` is non-null the
/// attention probabilities are copied there, laid out [windows, heads, slots, slots].
Var window_attention(const Var& qkv, const Var& bias, const AttentionSpec& spec, Tensor* probe = nullptr);

// ---- losses -----------------------------------------------------------------

/// Sum of |pred - target| over all entries; the target carries no gradient.
Var l1_sum(const Var& pred, const Tensor& target);

struct MiningOptions {
    double keep_fraction = 1.0;
    Index min_kept = 1;
    std::optional<int> ignore_label;
};

/// Per-row softmax cross-entropy, averaged over the hardest rows.
Var cross_entropy_mined(const Var& logits, const std::vector<int>& labels, const MiningOptions& options);

/// Per-row cross-entropy values (no graph), exposed for oracles and reporting.
std::vector<double> per_row_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace phenoswin::ag
