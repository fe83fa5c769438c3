#pragma once

// Small reverse-mode automatic differentiation over dense Eigen matrices.
// Column vectors are n x 1 matrices. A Tape owns every intermediate value;
// Var is a handle into it. Gradients are only tracked for nodes that depend
// on a trainable leaf.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace lava::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Var {
    int id = -1;
    [[nodiscard]] bool valid() const { return id >= 0; }
};

class Tape {
public:
    using Backward = std::function<void(Tape&)>;

    /// Value that never receives a gradient.
    Var constant(Matrix value);
    /// Differentiable free input (used by gradient checks and tests).
    Var leaf(Matrix value);
    /// Binds parameter `index` of a store; repeated calls return the same Var.
    Var param(std::size_t index, const Matrix& value, bool trainable);

    [[nodiscard]] const Matrix& value(Var v) const { return nodes_[v.id].value; }
    [[nodiscard]] double scalar(Var v) const { return nodes_[v.id].value(0, 0); }
    [[nodiscard]] bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

    /// Gradient buffer of a node. Valid during and after backward().
    Matrix& grad(Var v);
    [[nodiscard]] const Matrix& grad(Var v) const { return nodes_[v.id].grad; }

    /// Seeds d(root)/d(root) = seed and propagates to every tracked node.
    void backward(Var root, double seed = 1.0);

    /// Appends a node. `fn` is skipped during backward when no input needs grad.
    Var push(Matrix value, bool needs_grad, Backward fn);

    /// Adds gradients of bound trainable parameters into `grads` (indexed by
    /// parameter index, pre-sized by the caller).
    void accumulate_param_grads(std::vector<Matrix>& grads) const;

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        bool grad_ready = false;
        Backward backward;
    };
    std::vector<Node> nodes_;
    std::vector<int> param_vars_;
    std::vector<std::size_t> bound_params_;
};

inline bool any_grad(const Tape& t, std::initializer_list<Var> vs) {
    for (Var v : vs) {
        if (v.valid() && t.needs_grad(v)) return true;
    }
    return false;
}

// Linear algebra
Var matmul(Tape& t, Var a, Var b);
/// a^T b
Var matmul_tn(Tape& t, Var a, Var b);
/// W x + b
Var affine(Tape& t, Var w, Var x, Var b);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);

// Elementwise nonlinearities
Var sigmoid(Tape& t, Var a);
Var tanh(Tape& t, Var a);
Var exp(Tape& t, Var a);

// Reductions and reshaping
Var sum(Tape& t, Var a);
/// Weighted sum of scalars: sum_i w_i * s_i.
Var weighted_sum(Tape& t, std::span<const Var> scalars, std::span<const double> weights);
Var concat(Tape& t, std::span<const Var> parts);
Var hstack(Tape& t, std::span<const Var> columns);
Var slice(Tape& t, Var a, int start, int rows);
Var column(Tape& t, Var table, int j);
/// Fills a rows x cols matrix from a vector in row-major order.
Var reshape_rows(Tape& t, Var a, int rows, int cols);
/// Inverse of reshape_rows.
Var flatten_rows(Tape& t, Var a);
Var stop_gradient(Tape& t, Var a);
Var element(Tape& t, Var a, int row, int col);

// Probability
Var softmax(Tape& t, Var a);
Var log_softmax(Tape& t, Var a);
/// log softmax(a)[target] for a column vector a.
Var log_softmax_pick(Tape& t, Var logits, int target);

/// Fused gated recurrent unit step. Gate layout in the 3H rows is
/// [reset; update; candidate].
Var gru_step(Tape& t, Var x, Var h, Var wx, Var wh, Var bx, Var bh);

}  // namespace lava::ad
