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

#pragma once

// Minimal tape-based reverse-mode differentiation over dense matrices.
//
// A Tape records every operation applied to its Vars. Calling backward() on a
// scalar Var walks the tape in reverse and accumulates gradients into every
// node that was created from a variable leaf. Constant leaves and anything
// derived purely from constants receive no gradient and cost nothing on the
// backward pass.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace muscap {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

namespace ad {

class Tape;

class Var {
  public:
    Var() = default;

    Tape *tape() const { return tape_; }
    std::size_t id() const { return id_; }

    const Matrix &value() const;
    const Matrix &grad() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }

  private:
    friend class Tape;
    Var(Tape *tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape *tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
  public:
    Tape() = default;
    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;

    Var constant(Matrix value);
    Var variable(Matrix value);

    // Records a node whose backward step is `back(upstream_grad)`. Only used by
    // the op implementations; `needs_grad` should be the OR over the inputs.
    Var record(Matrix value, bool needs_grad, std::function<void(const Matrix &)> back);

    bool needs_grad(const Var &v) const { return nodes_[v.id()].needs_grad; }
    const Matrix &value(const Var &v) const { return nodes_[v.id()].value; }
    const Matrix &grad(const Var &v) const { return nodes_[v.id()].grad; }

    // Adds `g` into the gradient buffer of `v` (no-op for constants).
    void accumulate(const Var &v, const Matrix &g);

    /// Backpropagates from a 1x1 root.
    void backward(const Var &root);
    /// Backpropagates from an arbitrary node with the given seed gradient.
    void backward(const Var &root, const Matrix &seed);

    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        std::function<void(const Matrix &)> back;
    };
    std::deque<Node> nodes_;
};

inline const Matrix &Var::value() const { return tape_->value(*this); }
inline const Matrix &Var::grad() const { return tape_->grad(*this); }

// Linear algebra.
Var matmul(const Var &a, const Var &b);
Var transpose(const Var &a);
Var add(const Var &a, const Var &b);
Var sub(const Var &a, const Var &b);
Var add_row(const Var &m, const Var &row); // broadcast 1xC row over every row of m
Var scale(const Var &a, double s);
Var hadamard(const Var &a, const Var &b);
Var sum(const Var &a);

// Shape.
Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var &a, Eigen::Index start, Eigen::Index count);

// Nonlinearities.
Var gelu(const Var &a);
Var sigmoid(const Var &a);
Var softmax_rows(const Var &a);
Var causal_softmax_rows(const Var &scores);
Var layer_norm_rows(const Var &a, double eps = 1e-5);

// Losses (scalar outputs).
Var cross_entropy_rows(const Var &logits, std::span<const int> targets);
Var bce_with_logits(const Var &logits, const Matrix &targets);

// A scalar whose value and gradient with respect to `input` were computed
// elsewhere (e.g. by an external language model).
Var external_scalar(const Var &input, double value, Matrix grad_wrt_input);

// Scalar helpers shared with code that does not go through the tape.
double gelu_value(double x);
double gelu_derivative(double x);
double sigmoid_value(double x);
double bce_with_logits_value(double logit, double target);

} // namespace ad
} // namespace muscap
