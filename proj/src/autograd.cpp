/*
 * Copyright 2026 The muscap Authors. All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "muscap/autograd.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include "muscap/error.hpp"

namespace muscap::ad {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

Tape &tape_of(const Var &a) { return *a.tape(); }

void require_same_tape(const Var &a, const Var &b) {
    if (a.tape() != b.tape() || a.tape() == nullptr) {
        throw ShapeError("autograd: operands belong to different tapes");
    }
}

void require_same_shape(const Var &a, const Var &b, const char *op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        std::ostringstream msg;
        msg << op << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x"
            << b.cols();
        throw ShapeError(msg.str());
    }
}

} // namespace

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

double sigmoid_value(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double bce_with_logits_value(double logit, double target) {
    // max(l, 0) - l*t + log(1 + exp(-|l|)) never exponentiates a positive number.
    return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::variable(Matrix value) { return record(std::move(value), true, nullptr); }

Var Tape::record(Matrix value, bool needs_grad, std::function<void(const Matrix &)> back) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    if (needs_grad) {
        node.back = std::move(back);
    }
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(const Var &v, const Matrix &g) {
    Node &node = nodes_[v.id()];
    if (!node.needs_grad) {
        return;
    }
    if (node.grad.size() == 0) {
        node.grad = g;
    } else {
        node.grad += g;
    }
}

void Tape::backward(const Var &root) {
    if (root.rows() != 1 || root.cols() != 1) {
        throw ShapeError("autograd: backward() without a seed requires a scalar root");
    }
    backward(root, Matrix::Ones(1, 1));
}

void Tape::backward(const Var &root, const Matrix &seed) {
    if (root.tape() != this) {
        throw ShapeError("autograd: root belongs to a different tape");
    }
    for (auto &node : nodes_) {
        node.grad.resize(0, 0);
    }
    accumulate(root, seed);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
        Node &node = nodes_[i];
        if (!node.needs_grad || node.grad.size() == 0 || !node.back) {
            continue;
        }
        // The callback may accumulate into earlier nodes only, so `node.grad`
        // stays valid while it runs.
        node.back(node.grad);
    }
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var &a, const Var &b) {
    require_same_tape(a, b);
    if (a.cols() != b.rows()) {
        std::ostringstream msg;
        msg << "matmul: inner dimensions differ (" << a.cols() << " vs " << b.rows() << ")";
        throw ShapeError(msg.str());
    }
    Tape &t = tape_of(a);
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    return t.record(a.value() * b.value(), ng, [a, b](const Matrix &g) {
        Tape &t = *a.tape();
        if (t.needs_grad(a)) {
            t.accumulate(a, g * b.value().transpose());
        }
        if (t.needs_grad(b)) {
            t.accumulate(b, a.value().transpose() * g);
        }
    });
}

Var transpose(const Var &a) {
    Tape &t = tape_of(a);
    return t.record(a.value().transpose(), t.needs_grad(a),
                    [a](const Matrix &g) { a.tape()->accumulate(a, g.transpose()); });
}

Var add(const Var &a, const Var &b) {
    require_same_tape(a, b);
    require_same_shape(a, b, "add");
    Tape &t = tape_of(a);
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    return t.record(a.value() + b.value(), ng, [a, b](const Matrix &g) {
        a.tape()->accumulate(a, g);
        a.tape()->accumulate(b, g);
    });
}

Var sub(const Var &a, const Var &b) {
    require_same_tape(a, b);
    require_same_shape(a, b, "sub");
    Tape &t = tape_of(a);
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    return t.record(a.value() - b.value(), ng, [a, b](const Matrix &g) {
        a.tape()->accumulate(a, g);
        a.tape()->accumulate(b, -g);
    });
}

Var add_row(const Var &m, const Var &row) {
    require_same_tape(m, row);
    if (row.rows() != 1 || row.cols() != m.cols()) {
        throw ShapeError("add_row: row vector width must match matrix width");
    }
    Tape &t = tape_of(m);
    Matrix out = m.value();
    out.rowwise() += row.value().row(0);
    const bool ng = t.needs_grad(m) || t.needs_grad(row);
    return t.record(std::move(out), ng, [m, row](const Matrix &g) {
        m.tape()->accumulate(m, g);
        if (m.tape()->needs_grad(row)) {
            m.tape()->accumulate(row, g.colwise().sum());
        }
    });
}

Var scale(const Var &a, double s) {
    Tape &t = tape_of(a);
    return t.record(a.value() * s, t.needs_grad(a),
                    [a, s](const Matrix &g) { a.tape()->accumulate(a, g * s); });
}

Var hadamard(const Var &a, const Var &b) {
    require_same_tape(a, b);
    require_same_shape(a, b, "hadamard");
    Tape &t = tape_of(a);
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    return t.record(a.value().cwiseProduct(b.value()), ng, [a, b](const Matrix &g) {
        Tape &t = *a.tape();
        if (t.needs_grad(a)) {
            t.accumulate(a, g.cwiseProduct(b.value()));
        }
        if (t.needs_grad(b)) {
            t.accumulate(b, g.cwiseProduct(a.value()));
        }
    });
}

Var sum(const Var &a) {
    Tape &t = tape_of(a);
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return t.record(std::move(out), t.needs_grad(a), [a](const Matrix &g) {
        a.tape()->accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
    });
}

// ---------------------------------------------------------------------------
// Shape

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ShapeError("concat_rows: no inputs");
    }
    Tape &t = tape_of(parts.front());
    const Eigen::Index cols = parts.front().cols();
    Eigen::Index rows = 0;
    bool ng = false;
    for (const Var &p : parts) {
        require_same_tape(parts.front(), p);
        if (p.cols() != cols) {
            throw ShapeError("concat_rows: column count mismatch");
        }
        rows += p.rows();
        ng = ng || t.needs_grad(p);
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (const Var &p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return t.record(std::move(out), ng, [inputs](const Matrix &g) {
        Eigen::Index at = 0;
        for (const Var &p : inputs) {
            if (p.tape()->needs_grad(p)) {
                p.tape()->accumulate(p, g.middleRows(at, p.rows()));
            }
            at += p.rows();
        }
    });
}

Var slice_rows(const Var &a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) {
        throw ShapeError("slice_rows: range out of bounds");
    }
    Tape &t = tape_of(a);
    return t.record(a.value().middleRows(start, count), t.needs_grad(a),
                    [a, start, count](const Matrix &g) {
                        Matrix full = Matrix::Zero(a.rows(), a.cols());
                        full.middleRows(start, count) = g;
                        a.tape()->accumulate(a, full);
                    });
}

// ---------------------------------------------------------------------------
// Nonlinearities

Var gelu(const Var &a) {
    Tape &t = tape_of(a);
    Matrix out = a.value().unaryExpr([](double x) { return gelu_value(x); });
    return t.record(std::move(out), t.needs_grad(a), [a](const Matrix &g) {
        a.tape()->accumulate(
            a, g.cwiseProduct(a.value().unaryExpr([](double x) { return gelu_derivative(x); })));
    });
}

Var sigmoid(const Var &a) {
    Tape &t = tape_of(a);
    Matrix out = a.value().unaryExpr([](double x) { return sigmoid_value(x); });
    Matrix saved = out;
    return t.record(std::move(out), t.needs_grad(a), [a, saved](const Matrix &g) {
        a.tape()->accumulate(a, g.cwiseProduct(saved.cwiseProduct((1.0 - saved.array()).matrix())));
    });
}

namespace {

// Row-wise softmax over the first `limit(i)` entries of row i; the remaining
// entries are exactly zero.
template <typename Limit> Matrix masked_softmax(const Matrix &x, Limit limit) {
    Matrix out = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Eigen::Index n = limit(i);
        const double mx = x.row(i).head(n).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            out(i, j) = std::exp(x(i, j) - mx);
            z += out(i, j);
        }
        out.row(i).head(n) /= z;
    }
    return out;
}

Var softmax_impl(const Var &a, Matrix probs) {
    Tape &t = tape_of(a);
    Matrix saved = probs;
    return t.record(std::move(probs), t.needs_grad(a), [a, saved](const Matrix &g) {
        Matrix dx(saved.rows(), saved.cols());
        for (Eigen::Index i = 0; i < saved.rows(); ++i) {
            const double dot = g.row(i).dot(saved.row(i));
            dx.row(i) = saved.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
        }
        a.tape()->accumulate(a, dx);
    });
}

} // namespace

Var softmax_rows(const Var &a) {
    const Eigen::Index cols = a.cols();
    return softmax_impl(a, masked_softmax(a.value(), [cols](Eigen::Index) { return cols; }));
}

Var causal_softmax_rows(const Var &scores) {
    if (scores.rows() != scores.cols()) {
        throw ShapeError("causal_softmax_rows: expects a square score matrix");
    }
    return softmax_impl(scores,
                        masked_softmax(scores.value(), [](Eigen::Index i) { return i + 1; }));
}

Var layer_norm_rows(const Var &a, double eps) {
    Tape &t = tape_of(a);
    const Matrix &x = a.value();
    const Eigen::Index n = x.cols();
    Matrix xhat(x.rows(), n);
    Eigen::VectorXd inv_std(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().mean();
        inv_std(i) = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = (x.row(i).array() - mean) * inv_std(i);
    }
    Matrix saved = xhat;
    return t.record(std::move(xhat), t.needs_grad(a), [a, saved, inv_std, n](const Matrix &g) {
        Matrix dx(saved.rows(), n);
        for (Eigen::Index i = 0; i < saved.rows(); ++i) {
            const double gsum = g.row(i).sum();
            const double gdot = g.row(i).dot(saved.row(i));
            dx.row(i) = (inv_std(i) / static_cast<double>(n)) *
                        (static_cast<double>(n) * g.row(i).array() - gsum -
                         saved.row(i).array() * gdot)
                            .matrix();
        }
        a.tape()->accumulate(a, dx);
    });
}

// ---------------------------------------------------------------------------
// Losses

Var cross_entropy_rows(const Var &logits, std::span<const int> targets) {
    const Matrix &x = logits.value();
    if (static_cast<Eigen::Index>(targets.size()) != x.rows() || targets.empty()) {
        throw ShapeError("cross_entropy_rows: need exactly one target per row");
    }
    Matrix probs(x.rows(), x.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const int target = targets[static_cast<std::size_t>(i)];
        if (target < 0 || target >= x.cols()) {
            throw ShapeError("cross_entropy_rows: target index out of range");
        }
        const double mx = x.row(i).maxCoeff();
        const double lse = mx + std::log((x.row(i).array() - mx).exp().sum());
        probs.row(i) = (x.row(i).array() - lse).exp().matrix();
        loss += lse - x(i, target);
    }
    const double rows = static_cast<double>(x.rows());
    Matrix out(1, 1);
    out(0, 0) = loss / rows;
    std::vector<int> tg(targets.begin(), targets.end());
    Tape &t = tape_of(logits);
    return t.record(std::move(out), t.needs_grad(logits),
                    [logits, probs, tg, rows](const Matrix &g) {
                        Matrix d = probs;
                        for (std::size_t i = 0; i < tg.size(); ++i) {
                            d(static_cast<Eigen::Index>(i), tg[i]) -= 1.0;
                        }
                        logits.tape()->accumulate(logits, d * (g(0, 0) / rows));
                    });
}

Var bce_with_logits(const Var &logits, const Matrix &targets) {
    const Matrix &x = logits.value();
    if (x.rows() != targets.rows() || x.cols() != targets.cols()) {
        throw ShapeError("bce_with_logits: logits and targets differ in shape");
    }
    const double n = static_cast<double>(x.size());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        loss += bce_with_logits_value(x(i), targets(i));
    }
    Matrix out(1, 1);
    out(0, 0) = loss / n;
    Tape &t = tape_of(logits);
    return t.record(std::move(out), t.needs_grad(logits), [logits, targets, n](const Matrix &g) {
        Matrix d = logits.value().unaryExpr([](double v) { return sigmoid_value(v); }) - targets;
        logits.tape()->accumulate(logits, d * (g(0, 0) / n));
    });
}

Var external_scalar(const Var &input, double value, Matrix grad_wrt_input) {
    if (grad_wrt_input.rows() != input.rows() || grad_wrt_input.cols() != input.cols()) {
        throw ShapeError("external_scalar: gradient shape must match input");
    }
    Tape &t = tape_of(input);
    Matrix out(1, 1);
    out(0, 0) = value;
    return t.record(std::move(out), t.needs_grad(input),
                    [input, gw = std::move(grad_wrt_input)](const Matrix &g) {
                        input.tape()->accumulate(input, gw * g(0, 0));
                    });
}

} // namespace muscap::ad
