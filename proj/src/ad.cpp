#include "lava/ad.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace lava::ad {

Var Tape::push(Matrix value, bool needs_grad, Backward fn) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    if (needs_grad) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, {}); }

Var Tape::leaf(Matrix value) { return push(std::move(value), true, {}); }

Var Tape::param(std::size_t index, const Matrix& value, bool trainable) {
    if (index >= param_vars_.size()) param_vars_.resize(index + 1, -1);
    if (param_vars_[index] >= 0) return Var{param_vars_[index]};
    Var v = push(value, trainable, {});
    param_vars_[index] = v.id;
    if (trainable) bound_params_.push_back(index);
    return v;
}

Matrix& Tape::grad(Var v) {
    Node& n = nodes_[v.id];
    if (!n.grad_ready) {
        n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
        n.grad_ready = true;
    }
    return n.grad;
}

void Tape::backward(Var root, double seed) {
    if (!nodes_[root.id].needs_grad) return;
    for (auto& n : nodes_) {
        if (n.needs_grad) {
            n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
            n.grad_ready = true;
        }
    }
    nodes_[root.id].grad.array() += seed;
    for (int i = root.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.needs_grad && n.backward) n.backward(*this);
    }
}

void Tape::accumulate_param_grads(std::vector<Matrix>& grads) const {
    for (std::size_t index : bound_params_) {
        const Node& n = nodes_[param_vars_[index]];
        if (!n.grad_ready) continue;
        grads[index] += n.grad;
    }
}

namespace {

template <class F>
Var unary(Tape& t, Var a, Matrix value, F&& local) {
    const bool ng = t.needs_grad(a);
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(value), ng, [a, out, local = std::forward<F>(local)](Tape& tp) {
        tp.grad(a) += local(tp, tp.grad(out));
    });
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
    Matrix v = t.value(a) * t.value(b);
    const bool ng = any_grad(t, {a, b});
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(v), ng, [a, b, out](Tape& tp) {
        const Matrix& g = tp.grad(out);
        if (tp.needs_grad(a)) tp.grad(a).noalias() += g * tp.value(b).transpose();
        if (tp.needs_grad(b)) tp.grad(b).noalias() += tp.value(a).transpose() * g;
    });
}

Var matmul_tn(Tape& t, Var a, Var b) {
    Matrix v = t.value(a).transpose() * t.value(b);
    const bool ng = any_grad(t, {a, b});
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(v), ng, [a, b, out](Tape& tp) {
        const Matrix& g = tp.grad(out);
        if (tp.needs_grad(a)) tp.grad(a).noalias() += tp.value(b) * g.transpose();
        if (tp.needs_grad(b)) tp.grad(b).noalias() += tp.value(a) * g;
    });
}

Var affine(Tape& t, Var w, Var x, Var b) {
    Matrix v = t.value(w) * t.value(x);
    v += t.value(b);
    const bool ng = any_grad(t, {w, x, b});
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(v), ng, [w, x, b, out](Tape& tp) {
        const Matrix& g = tp.grad(out);
        if (tp.needs_grad(w)) tp.grad(w).noalias() += g * tp.value(x).transpose();
        if (tp.needs_grad(x)) tp.grad(x).noalias() += tp.value(w).transpose() * g;
        if (tp.needs_grad(b)) tp.grad(b) += g;
    });
}

Var add(Tape& t, Var a, Var b) {
    Matrix v = t.value(a) + t.value(b);
    const bool ng = any_grad(t, {a, b});
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(v), ng, [a, b, out](Tape& tp) {
        const Matrix& g = tp.grad(out);
        if (tp.needs_grad(a)) tp.grad(a) += g;
        if (tp.needs_grad(b)) tp.grad(b) += g;
    });
}

Var sub(Tape& t, Var a, Var b) {
    Matrix v = t.value(a) - t.value(b);
    const bool ng = any_grad(t, {a, b});
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(v), ng, [a, b, out](Tape& tp) {
        const Matrix& g = tp.grad(out);
        if (tp.needs_grad(a)) tp.grad(a) += g;
        if (tp.needs_grad(b)) tp.grad(b) -= g;
    });
}

Var mul(Tape& t, Var a, Var b) {
    Matrix v = t.value(a).cwiseProduct(t.value(b));
    const bool ng = any_grad(t, {a, b});
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(v), ng, [a, b, out](Tape& tp) {
        const Matrix& g = tp.grad(out);
        if (tp.needs_grad(a)) tp.grad(a) += g.cwiseProduct(tp.value(b));
        if (tp.needs_grad(b)) tp.grad(b) += g.cwiseProduct(tp.value(a));
    });
}

Var scale(Tape& t, Var a, double s) {
    return unary(t, a, t.value(a) * s, [s](Tape&, const Matrix& g) -> Matrix { return g * s; });
}

Var sigmoid(Tape& t, Var a) {
    Matrix v = (1.0 + (-t.value(a).array()).exp()).inverse().matrix();
    Var out{static_cast<int>(t.size())};
    return unary(t, a, std::move(v), [out](Tape& tp, const Matrix& g) -> Matrix {
        const auto s = tp.value(out).array();
        return (g.array() * s * (1.0 - s)).matrix();
    });
}

Var tanh(Tape& t, Var a) {
    Matrix v = t.value(a).array().tanh().matrix();
    Var out{static_cast<int>(t.size())};
    return unary(t, a, std::move(v), [out](Tape& tp, const Matrix& g) -> Matrix {
        const auto y = tp.value(out).array();
        return (g.array() * (1.0 - y * y)).matrix();
    });
}

Var exp(Tape& t, Var a) {
    Matrix v = t.value(a).array().exp().matrix();
    Var out{static_cast<int>(t.size())};
    return unary(t, a, std::move(v), [out](Tape& tp, const Matrix& g) -> Matrix {
        return g.cwiseProduct(tp.value(out));
    });
}

Var sum(Tape& t, Var a) {
    Matrix v(1, 1);
    v(0, 0) = t.value(a).sum();
    const auto rows = t.value(a).rows();
    const auto cols = t.value(a).cols();
    return unary(t, a, std::move(v), [rows, cols](Tape&, const Matrix& g) -> Matrix {
        return Matrix::Constant(rows, cols, g(0, 0));
    });
}

Var weighted_sum(Tape& t, std::span<const Var> scalars, std::span<const double> weights) {
    assert(scalars.size() == weights.size());
    Matrix v = Matrix::Zero(1, 1);
    bool ng = false;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        v(0, 0) += weights[i] * t.scalar(scalars[i]);
        ng = ng || t.needs_grad(scalars[i]);
    }
    std::vector<Var> ins(scalars.begin(), scalars.end());
    std::vector<double> ws(weights.begin(), weights.end());
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(v), ng, [ins = std::move(ins), ws = std::move(ws), out](Tape& tp) {
        const double g = tp.grad(out)(0, 0);
        for (std::size_t i = 0; i < ins.size(); ++i) {
            if (tp.needs_grad(ins[i])) tp.grad(ins[i])(0, 0) += g * ws[i];
        }
    });
}

Var concat(Tape& t, std::span<const Var> parts) {
    Eigen::Index rows = 0;
    const Eigen::Index cols = t.value(parts.front()).cols();
    bool ng = false;
    for (Var p : parts) {
        rows += t.value(p).rows();
        ng = ng || t.needs_grad(p);
    }
    Matrix v(rows, cols);
    Eigen::Index r = 0;
    for (Var p : parts) {
        const Matrix& pv = t.value(p);
        v.middleRows(r, pv.rows()) = pv;
        r += pv.rows();
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(v), ng, [ins = std::move(ins), out](Tape& tp) {
        const Matrix& g = tp.grad(out);
        Eigen::Index row = 0;
        for (Var p : ins) {
            const Eigen::Index n = tp.value(p).rows();
            if (tp.needs_grad(p)) tp.grad(p) += g.middleRows(row, n);
            row += n;
        }
    });
}

Var hstack(Tape& t, std::span<const Var> columns) {
    const Eigen::Index rows = t.value(columns.front()).rows();
    Matrix v(rows, static_cast<Eigen::Index>(columns.size()));
    bool ng = false;
    for (std::size_t j = 0; j < columns.size(); ++j) {
        v.col(static_cast<Eigen::Index>(j)) = t.value(columns[j]).col(0);
        ng = ng || t.needs_grad(columns[j]);
    }
    std::vector<Var> ins(columns.begin(), columns.end());
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(v), ng, [ins = std::move(ins), out](Tape& tp) {
        const Matrix& g = tp.grad(out);
        for (std::size_t j = 0; j < ins.size(); ++j) {
            if (tp.needs_grad(ins[j])) tp.grad(ins[j]).col(0) += g.col(static_cast<Eigen::Index>(j));
        }
    });
}

Var slice(Tape& t, Var a, int start, int rows) {
    Matrix v = t.value(a).middleRows(start, rows);
    const auto total = t.value(a).rows();
    const auto cols = t.value(a).cols();
    return unary(t, a, std::move(v), [start, rows, total, cols](Tape&, const Matrix& g) -> Matrix {
        Matrix full = Matrix::Zero(total, cols);
        full.middleRows(start, rows) = g;
        return full;
    });
}

Var column(Tape& t, Var table, int j) {
    Matrix v = t.value(table).col(j);
    const bool ng = t.needs_grad(table);
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(v), ng, [table, j, out](Tape& tp) {
        tp.grad(table).col(j) += tp.grad(out).col(0);
    });
}

Var reshape_rows(Tape& t, Var a, int rows, int cols) {
    const Matrix& src = t.value(a);
    assert(src.size() == static_cast<Eigen::Index>(rows) * cols);
    Matrix v(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) v(r, c) = src(r * cols + c, 0);
    const bool ng = t.needs_grad(a);
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(v), ng, [a, rows, cols, out](Tape& tp) {
        const Matrix& g = tp.grad(out);
        Matrix& ga = tp.grad(a);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) ga(r * cols + c, 0) += g(r, c);
    });
}

Var flatten_rows(Tape& t, Var a) {
    const Matrix& src = t.value(a);
    const auto rows = src.rows();
    const auto cols = src.cols();
    Matrix v(rows * cols, 1);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) v(r * cols + c, 0) = src(r, c);
    const bool ng = t.needs_grad(a);
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(v), ng, [a, rows, cols, out](Tape& tp) {
        const Matrix& g = tp.grad(out);
        Matrix& ga = tp.grad(a);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) ga(r, c) += g(r * cols + c, 0);
    });
}

Var stop_gradient(Tape& t, Var a) { return t.constant(t.value(a)); }

Var element(Tape& t, Var a, int row, int col) {
    Matrix v(1, 1);
    v(0, 0) = t.value(a)(row, col);
    const auto rows = t.value(a).rows();
    const auto cols = t.value(a).cols();
    return unary(t, a, std::move(v), [row, col, rows, cols](Tape&, const Matrix& g) -> Matrix {
        Matrix full = Matrix::Zero(rows, cols);
        full(row, col) = g(0, 0);
        return full;
    });
}

Var softmax(Tape& t, Var a) {
    const Matrix& x = t.value(a);
    Matrix v = (x.array() - x.maxCoeff()).exp().matrix();
    v /= v.sum();
    Var out{static_cast<int>(t.size())};
    return unary(t, a, std::move(v), [out](Tape& tp, const Matrix& g) -> Matrix {
        const Matrix& s = tp.value(out);
        const double dot = s.cwiseProduct(g).sum();
        return (s.array() * (g.array() - dot)).matrix();
    });
}

Var log_softmax(Tape& t, Var a) {
    const Matrix& x = t.value(a);
    const double m = x.maxCoeff();
    const double lse = m + std::log((x.array() - m).exp().sum());
    Matrix v = (x.array() - lse).matrix();
    Var out{static_cast<int>(t.size())};
    return unary(t, a, std::move(v), [out](Tape& tp, const Matrix& g) -> Matrix {
        const Matrix p = tp.value(out).array().exp().matrix();
        return g - p * g.sum();
    });
}

Var log_softmax_pick(Tape& t, Var logits, int target) {
    const Matrix& x = t.value(logits);
    const double m = x.maxCoeff();
    const double lse = m + std::log((x.array() - m).exp().sum());
    Matrix v(1, 1);
    v(0, 0) = x(target, 0) - lse;
    return unary(t, logits, std::move(v), [logits, target, lse](Tape& tp, const Matrix& g) -> Matrix {
        Matrix p = (tp.value(logits).array() - lse).exp().matrix();
        p *= -g(0, 0);
        p(target, 0) += g(0, 0);
        return p;
    });
}

Var gru_step(Tape& t, Var x, Var h, Var wx, Var wh, Var bx, Var bh) {
    const Matrix& xv = t.value(x);
    const Matrix& hv = t.value(h);
    const Eigen::Index H = hv.rows();
    Matrix gx = t.value(wx) * xv + t.value(bx);
    Matrix gh = t.value(wh) * hv + t.value(bh);
    Matrix r = (1.0 + (-(gx.topRows(H) + gh.topRows(H)).array()).exp()).inverse().matrix();
    Matrix u = (1.0 + (-(gx.middleRows(H, H) + gh.middleRows(H, H)).array()).exp()).inverse().matrix();
    Matrix ghn = gh.bottomRows(H);
    Matrix n = (gx.bottomRows(H).array() + r.array() * ghn.array()).tanh().matrix();
    Matrix out_v = ((1.0 - u.array()) * n.array() + u.array() * hv.array()).matrix();
    const bool ng = any_grad(t, {x, h, wx, wh, bx, bh});
    Var out{static_cast<int>(t.size())};
    return t.push(std::move(out_v), ng,
                  [x, h, wx, wh, bx, bh, out, r = std::move(r), u = std::move(u), n = std::move(n),
                   ghn = std::move(ghn), H](Tape& tp) {
                      const Matrix& g = tp.grad(out);
                      const Matrix& hv = tp.value(h);
                      Matrix dgx(3 * H, 1);
                      Matrix dgh(3 * H, 1);
                      const auto ra = r.array();
                      const auto ua = u.array();
                      const auto na = n.array();
                      Eigen::ArrayXd dn_pre = g.array() * (1.0 - ua) * (1.0 - na * na);
                      Eigen::ArrayXd du_pre = g.array() * (hv.array() - na) * ua * (1.0 - ua);
                      Eigen::ArrayXd dr_pre = dn_pre * ghn.array() * ra * (1.0 - ra);
                      dgx.topRows(H) = dr_pre.matrix();
                      dgx.middleRows(H, H) = du_pre.matrix();
                      dgx.bottomRows(H) = dn_pre.matrix();
                      dgh.topRows(H) = dr_pre.matrix();
                      dgh.middleRows(H, H) = du_pre.matrix();
                      dgh.bottomRows(H) = (dn_pre * ra).matrix();
                      if (tp.needs_grad(x)) tp.grad(x).noalias() += tp.value(wx).transpose() * dgx;
                      if (tp.needs_grad(h)) {
                          tp.grad(h) += (g.array() * ua).matrix();
                          tp.grad(h).noalias() += tp.value(wh).transpose() * dgh;
                      }
                      if (tp.needs_grad(wx)) tp.grad(wx).noalias() += dgx * tp.value(x).transpose();
                      if (tp.needs_grad(wh)) tp.grad(wh).noalias() += dgh * hv.transpose();
                      if (tp.needs_grad(bx)) tp.grad(bx) += dgx;
                      if (tp.needs_grad(bh)) tp.grad(bh) += dgh;
                  });
}

}  // namespace lava::ad
