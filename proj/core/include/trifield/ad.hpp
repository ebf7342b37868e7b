// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "trifield/tensor.hpp"

namespace trifield::ad {

// Reverse-mode tape over dense double tensors. A Tape is built fresh for
// every training step; Vars are indices into it. Backward reaches exactly
// the ancestors of the seeded nodes, so unused branches cost nothing.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    Var input(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return input(std::move(value), false); }
    Var scalar(double x) { return constant(Tensor({1}, {x})); }

    // elementwise
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    Var add_scalar(Var a, double s);
    Var exp_elem(Var a);
    Var silu(Var a);
    Var detach(Var a);

    // shape plumbing
    Var reshape(Var a, std::vector<int> shape);
    Var concat_last(Var a, Var b);            // along the last axis
    Var slice_last(Var a, int c0, int c1);    // [c0, c1) of the last axis
    Var concat_cols(Var a, Var b);            // [H,W,C] along W
    Var slice_cols(Var a, int j0, int j1);

    Var gather_rows(Var x, std::vector<int> index);  // x[N,D] -> [index.size(),D]

    // dense layers
    Var linear(Var x, Var w, Var b);          // x[N,D], w[Dout,D], b[Dout]
    Var matmul(Var a, Var b);                 // [N,K] x [K,M]
    Var matmul_bt(Var a, Var b);              // [N,K] x [M,K]^T -> [N,M]
    Var softmax_rows(Var a);                  // [N,M]

    // spatial layers on [H,W,C]
    Var conv2d(Var x, Var w, Var b, int stride = 1);  // w[Cout,Cin,k,k], same padding
    Var group_norm(Var x, int groups, Var gamma, Var beta, double eps = 1e-5);
    Var upsample_nearest2(Var x);
    Var avg_pool2(Var x);
    Var mul_channel(Var x, Var s);            // s[C] broadcast over H,W
    Var add_channel(Var x, Var b);            // b[C] broadcast over H,W
    Var mean_rows(Var x);                     // [H,W,C] -> [1,W,C]
    Var mean_cols(Var x);                     // [H,W,C] -> [H,1,C]
    Var broadcast_rows(Var x, int h);         // [1,W,C] -> [h,W,C]
    Var broadcast_cols(Var x, int w);         // [H,1,C] -> [H,w,C]

    // reductions
    Var sum_all(Var a);                       // -> [1]
    Var mean_all(Var a);                      // -> [1]
    Var mse(Var a, const Tensor& target);     // mean (a - t)^2 -> [1]

    const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].val; }
    double scalar_value(Var v) const { return value(v)[0]; }

    // Seeds d(root)/d(root) = 1 plus any extra (node, gradient) pairs, then
    // propagates to every ancestor that requires grad.
    void backward(Var root, const std::vector<std::pair<Var, Tensor>>& extra = {});
    const Tensor& grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].requires_grad; }

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor val;
        Tensor grad;  // allocated lazily during backward
        bool requires_grad = false;
        std::vector<int> parents;
        std::function<void(Tape&, int)> backfn;  // adds into parents' grads
    };

    std::deque<Node> nodes_;  // stable references under push_back

    int push(Tensor val, std::vector<int> parents, std::function<void(Tape&, int)> backfn);
    Tensor& grad_buf(int id);
    friend struct BackAccess;
};

}  // namespace trifield::ad
