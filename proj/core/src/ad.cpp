// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include "trifield/ad.hpp"

#include <cmath>
#include <stdexcept>

namespace trifield::ad {

namespace {

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

void check_rank3(const Tensor& t, const char* op) {
    if (t.rank() != 3) throw std::invalid_argument(std::string(op) + ": expected [H,W,C]");
}

}  // namespace

// Accessor used by backward closures; nullptr when the parent needs no grad.
struct BackAccess {
    static Tensor* gptr(Tape& t, int id) {
        auto& n = t.nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad) return nullptr;
        return &t.grad_buf(id);
    }
    static const Tensor& val(Tape& t, int id) { return t.nodes_[static_cast<size_t>(id)].val; }
    static const Tensor& grad(Tape& t, int id) { return t.nodes_[static_cast<size_t>(id)].grad; }
};

using BA = BackAccess;

int Tape::push(Tensor val, std::vector<int> parents, std::function<void(Tape&, int)> backfn) {
    Node n;
    n.val = std::move(val);
    n.parents = std::move(parents);
    for (int p : n.parents)
        if (nodes_[static_cast<size_t>(p)].requires_grad) n.requires_grad = true;
    n.backfn = std::move(backfn);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Tape::grad_buf(int id) {
    auto& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.numel() == 0 && n.val.numel() > 0) n.grad = Tensor(n.val.shape);
    return n.grad;
}

Var Tape::input(Tensor value, bool requires_grad) {
    Node n;
    n.val = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::grad(Var v) const {
    const auto& n = nodes_[static_cast<size_t>(v.id)];
    static const Tensor empty;
    return n.grad.numel() ? n.grad : empty;
}

void Tape::backward(Var root, const std::vector<std::pair<Var, Tensor>>& extra) {
    auto& rn = nodes_[static_cast<size_t>(root.id)];
    if (rn.val.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    for (auto& n : nodes_) n.grad = Tensor{};  // reset from any previous sweep
    grad_buf(root.id)[0] = 1.0;
    for (const auto& [v, g] : extra) {
        auto& n = nodes_[static_cast<size_t>(v.id)];
        if (g.shape != n.val.shape) throw std::invalid_argument("backward: extra grad shape mismatch");
        Tensor& buf = grad_buf(v.id);
        for (int64_t i = 0; i < g.numel(); ++i) buf[i] += g[i];
    }
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
        auto& n = nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad || !n.backfn || n.grad.numel() == 0) continue;
        n.backfn(*this, id);
    }
}

// ---- elementwise ----

Var Tape::add(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.shape != tb.shape) throw std::invalid_argument("add: shape mismatch");
    Tensor out(ta.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = ta[i] + tb[i];
    const int pa = a.id, pb = b.id;
    return {push(std::move(out), {pa, pb}, [pa, pb](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        if (Tensor* ga = BA::gptr(t, pa))
            for (int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
        if (Tensor* gb = BA::gptr(t, pb))
            for (int64_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i];
    })};
}

Var Tape::sub(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.shape != tb.shape) throw std::invalid_argument("sub: shape mismatch");
    Tensor out(ta.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = ta[i] - tb[i];
    const int pa = a.id, pb = b.id;
    return {push(std::move(out), {pa, pb}, [pa, pb](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        if (Tensor* ga = BA::gptr(t, pa))
            for (int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
        if (Tensor* gb = BA::gptr(t, pb))
            for (int64_t i = 0; i < g.numel(); ++i) (*gb)[i] -= g[i];
    })};
}

Var Tape::mul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.shape != tb.shape) throw std::invalid_argument("mul: shape mismatch");
    Tensor out(ta.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = ta[i] * tb[i];
    const int pa = a.id, pb = b.id;
    return {push(std::move(out), {pa, pb}, [pa, pb](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        const Tensor& va = BA::val(t, pa);
        const Tensor& vb = BA::val(t, pb);
        if (Tensor* ga = BA::gptr(t, pa))
            for (int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * vb[i];
        if (Tensor* gb = BA::gptr(t, pb))
            for (int64_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * va[i];
    })};
}

Var Tape::scale(Var a, double s) {
    const Tensor& ta = value(a);
    Tensor out(ta.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = ta[i] * s;
    const int pa = a.id;
    return {push(std::move(out), {pa}, [pa, s](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        if (Tensor* ga = BA::gptr(t, pa))
            for (int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * s;
    })};
}

Var Tape::add_scalar(Var a, double s) {
    const Tensor& ta = value(a);
    Tensor out(ta.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = ta[i] + s;
    const int pa = a.id;
    return {push(std::move(out), {pa}, [pa](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        if (Tensor* ga = BA::gptr(t, pa))
            for (int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
    })};
}

Var Tape::exp_elem(Var a) {
    const Tensor& ta = value(a);
    Tensor out(ta.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(ta[i]);
    const int pa = a.id;
    return {push(std::move(out), {pa}, [pa](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        const Tensor& y = BA::val(t, self);
        if (Tensor* ga = BA::gptr(t, pa))
            for (int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * y[i];
    })};
}

Var Tape::silu(Var a) {
    const Tensor& ta = value(a);
    Tensor out(ta.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = ta[i] * sigmoid(ta[i]);
    const int pa = a.id;
    return {push(std::move(out), {pa}, [pa](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        const Tensor& x = BA::val(t, pa);
        if (Tensor* ga = BA::gptr(t, pa))
            for (int64_t i = 0; i < g.numel(); ++i) {
                const double s = sigmoid(x[i]);
                (*ga)[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
            }
    })};
}

Var Tape::detach(Var a) {
    return input(value(a), false);
}

// ---- shape plumbing ----

Var Tape::reshape(Var a, std::vector<int> shape) {
    const Tensor& ta = value(a);
    if (Tensor::numel_of(shape) != ta.numel()) throw std::invalid_argument("reshape: numel mismatch");
    Tensor out(std::move(shape), ta.v);
    const int pa = a.id;
    return {push(std::move(out), {pa}, [pa](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        if (Tensor* ga = BA::gptr(t, pa))
            for (int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
    })};
}

Var Tape::concat_last(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != tb.rank()) throw std::invalid_argument("concat_last: rank mismatch");
    for (int i = 0; i + 1 < ta.rank(); ++i)
        if (ta.dim(i) != tb.dim(i)) throw std::invalid_argument("concat_last: shape mismatch");
    const int ca = ta.dim(ta.rank() - 1), cb = tb.dim(tb.rank() - 1);
    std::vector<int> shape = ta.shape;
    shape.back() = ca + cb;
    Tensor out(shape);
    const int64_t rows = ta.numel() / ca;
    for (int64_t r = 0; r < rows; ++r) {
        for (int c = 0; c < ca; ++c) out[r * (ca + cb) + c] = ta[r * ca + c];
        for (int c = 0; c < cb; ++c) out[r * (ca + cb) + ca + c] = tb[r * cb + c];
    }
    const int pa = a.id, pb = b.id;
    return {push(std::move(out), {pa, pb}, [pa, pb, ca, cb, rows](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        if (Tensor* ga = BA::gptr(t, pa))
            for (int64_t r = 0; r < rows; ++r)
                for (int c = 0; c < ca; ++c) (*ga)[r * ca + c] += g[r * (ca + cb) + c];
        if (Tensor* gb = BA::gptr(t, pb))
            for (int64_t r = 0; r < rows; ++r)
                for (int c = 0; c < cb; ++c) (*gb)[r * cb + c] += g[r * (ca + cb) + ca + c];
    })};
}

Var Tape::slice_last(Var a, int c0, int c1) {
    const Tensor& ta = value(a);
    const int C = ta.dim(ta.rank() - 1);
    if (c0 < 0 || c1 > C || c0 >= c1) throw std::invalid_argument("slice_last: bad range");
    std::vector<int> shape = ta.shape;
    shape.back() = c1 - c0;
    Tensor out(shape);
    const int64_t rows = ta.numel() / C;
    const int w = c1 - c0;
    for (int64_t r = 0; r < rows; ++r)
        for (int c = 0; c < w; ++c) out[r * w + c] = ta[r * C + c0 + c];
    const int pa = a.id;
    return {push(std::move(out), {pa}, [pa, c0, C, w, rows](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        if (Tensor* ga = BA::gptr(t, pa))
            for (int64_t r = 0; r < rows; ++r)
                for (int c = 0; c < w; ++c) (*ga)[r * C + c0 + c] += g[r * w + c];
    })};
}

Var Tape::concat_cols(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    check_rank3(ta, "concat_cols");
    check_rank3(tb, "concat_cols");
    if (ta.dim(0) != tb.dim(0) || ta.dim(2) != tb.dim(2))
        throw std::invalid_argument("concat_cols: shape mismatch");
    const int H = ta.dim(0), Wa = ta.dim(1), Wb = tb.dim(1), C = ta.dim(2);
    Tensor out({H, Wa + Wb, C});
    for (int i = 0; i < H; ++i) {
        for (int j = 0; j < Wa; ++j)
            for (int c = 0; c < C; ++c) out.at(i, j, c) = ta.at(i, j, c);
        for (int j = 0; j < Wb; ++j)
            for (int c = 0; c < C; ++c) out.at(i, Wa + j, c) = tb.at(i, j, c);
    }
    const int pa = a.id, pb = b.id;
    return {push(std::move(out), {pa, pb}, [pa, pb, H, Wa, Wb, C](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        if (Tensor* ga = BA::gptr(t, pa))
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < Wa; ++j)
                    for (int c = 0; c < C; ++c) ga->at(i, j, c) += g.at(i, j, c);
        if (Tensor* gb = BA::gptr(t, pb))
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < Wb; ++j)
                    for (int c = 0; c < C; ++c) gb->at(i, j, c) += g.at(i, Wa + j, c);
    })};
}

Var Tape::slice_cols(Var a, int j0, int j1) {
    const Tensor& ta = value(a);
    check_rank3(ta, "slice_cols");
    const int H = ta.dim(0), W = ta.dim(1), C = ta.dim(2);
    if (j0 < 0 || j1 > W || j0 >= j1) throw std::invalid_argument("slice_cols: bad range");
    const int w = j1 - j0;
    Tensor out({H, w, C});
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < w; ++j)
            for (int c = 0; c < C; ++c) out.at(i, j, c) = ta.at(i, j0 + j, c);
    const int pa = a.id;
    return {push(std::move(out), {pa}, [pa, H, w, C, j0](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        if (Tensor* ga = BA::gptr(t, pa))
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < w; ++j)
                    for (int c = 0; c < C; ++c) ga->at(i, j0 + j, c) += g.at(i, j, c);
    })};
}

Var Tape::gather_rows(Var x, std::vector<int> index) {
    const Tensor& tx = value(x);
    if (tx.rank() != 2) throw std::invalid_argument("gather_rows: expected [N,D]");
    const int N = tx.dim(0), D = tx.dim(1);
    for (int i : index)
        if (i < 0 || i >= N) throw std::invalid_argument("gather_rows: index out of range");
    Tensor out({static_cast<int>(index.size()), D});
    for (size_t r = 0; r < index.size(); ++r)
        for (int d = 0; d < D; ++d) out.at(static_cast<int>(r), d) = tx.at(index[r], d);
    const int px = x.id;
    return {push(std::move(out), {px}, [px, index = std::move(index), D](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        if (Tensor* gx = BA::gptr(t, px))
            for (size_t r = 0; r < index.size(); ++r)
                for (int d = 0; d < D; ++d) gx->at(index[r], d) += g.at(static_cast<int>(r), d);
    })};
}

// ---- dense layers ----

Var Tape::linear(Var x, Var w, Var b) {
    const Tensor& tx = value(x);
    const Tensor& tw = value(w);
    const Tensor& tb = value(b);
    if (tx.rank() != 2 || tw.rank() != 2 || tb.rank() != 1)
        throw std::invalid_argument("linear: expected x[N,D], w[Dout,D], b[Dout]");
    const int N = tx.dim(0), D = tx.dim(1), Dout = tw.dim(0);
    if (tw.dim(1) != D || tb.dim(0) != Dout) throw std::invalid_argument("linear: width mismatch");
    Tensor out({N, Dout});
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < Dout; ++o) {
            double s = tb[o];
            for (int d = 0; d < D; ++d) s += tw.at(o, d) * tx.at(n, d);
            out.at(n, o) = s;
        }
    const int px = x.id, pw = w.id, pb = b.id;
    return {push(std::move(out), {px, pw, pb}, [px, pw, pb, N, D, Dout](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        const Tensor& vx = BA::val(t, px);
        const Tensor& vw = BA::val(t, pw);
        Tensor* gx = BA::gptr(t, px);
        Tensor* gw = BA::gptr(t, pw);
        Tensor* gb = BA::gptr(t, pb);
        for (int n = 0; n < N; ++n)
            for (int o = 0; o < Dout; ++o) {
                const double go = g.at(n, o);
                if (go == 0.0) continue;
                if (gb) (*gb)[o] += go;
                for (int d = 0; d < D; ++d) {
                    if (gx) gx->at(n, d) += go * vw.at(o, d);
                    if (gw) gw->at(o, d) += go * vx.at(n, d);
                }
            }
    })};
}

Var Tape::matmul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0))
        throw std::invalid_argument("matmul: shape mismatch");
    const int N = ta.dim(0), K = ta.dim(1), M = tb.dim(1);
    Tensor out({N, M});
    for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k) {
            const double av = ta.at(n, k);
            for (int m = 0; m < M; ++m) out.at(n, m) += av * tb.at(k, m);
        }
    const int pa = a.id, pb = b.id;
    return {push(std::move(out), {pa, pb}, [pa, pb, N, K, M](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        const Tensor& va = BA::val(t, pa);
        const Tensor& vb = BA::val(t, pb);
        Tensor* ga = BA::gptr(t, pa);
        Tensor* gb = BA::gptr(t, pb);
        for (int n = 0; n < N; ++n)
            for (int m = 0; m < M; ++m) {
                const double go = g.at(n, m);
                if (go == 0.0) continue;
                for (int k = 0; k < K; ++k) {
                    if (ga) ga->at(n, k) += go * vb.at(k, m);
                    if (gb) gb->at(k, m) += go * va.at(n, k);
                }
            }
    })};
}

Var Tape::matmul_bt(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(1))
        throw std::invalid_argument("matmul_bt: shape mismatch");
    const int N = ta.dim(0), K = ta.dim(1), M = tb.dim(0);
    Tensor out({N, M});
    for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m) {
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += ta.at(n, k) * tb.at(m, k);
            out.at(n, m) = s;
        }
    const int pa = a.id, pb = b.id;
    return {push(std::move(out), {pa, pb}, [pa, pb, N, K, M](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        const Tensor& va = BA::val(t, pa);
        const Tensor& vb = BA::val(t, pb);
        Tensor* ga = BA::gptr(t, pa);
        Tensor* gb = BA::gptr(t, pb);
        for (int n = 0; n < N; ++n)
            for (int m = 0; m < M; ++m) {
                const double go = g.at(n, m);
                if (go == 0.0) continue;
                for (int k = 0; k < K; ++k) {
                    if (ga) ga->at(n, k) += go * vb.at(m, k);
                    if (gb) gb->at(m, k) += go * va.at(n, k);
                }
            }
    })};
}

Var Tape::softmax_rows(Var a) {
    const Tensor& ta = value(a);
    if (ta.rank() != 2) throw std::invalid_argument("softmax_rows: expected [N,M]");
    const int N = ta.dim(0), M = ta.dim(1);
    Tensor out({N, M});
    for (int n = 0; n < N; ++n) {
        double mx = -1e300;
        for (int m = 0; m < M; ++m) mx = std::max(mx, ta.at(n, m));
        double z = 0.0;
        for (int m = 0; m < M; ++m) {
            out.at(n, m) = std::exp(ta.at(n, m) - mx);
            z += out.at(n, m);
        }
        for (int m = 0; m < M; ++m) out.at(n, m) /= z;
    }
    const int pa = a.id;
    return {push(std::move(out), {pa}, [pa, N, M](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        const Tensor& y = BA::val(t, self);
        if (Tensor* ga = BA::gptr(t, pa))
            for (int n = 0; n < N; ++n) {
                double dot = 0.0;
                for (int m = 0; m < M; ++m) dot += g.at(n, m) * y.at(n, m);
                for (int m = 0; m < M; ++m)
                    ga->at(n, m) += y.at(n, m) * (g.at(n, m) - dot);
            }
    })};
}

// ---- spatial layers ----

Var Tape::conv2d(Var x, Var w, Var b, int stride) {
    const Tensor& tx = value(x);
    const Tensor& tw = value(w);
    const Tensor& tb = value(b);
    check_rank3(tx, "conv2d");
    if (tw.rank() != 4) throw std::invalid_argument("conv2d: w must be [Cout,Cin,k,k]");
    const int H = tx.dim(0), W = tx.dim(1), Cin = tx.dim(2);
    const int Cout = tw.dim(0), k = tw.dim(2);
    if (tw.dim(1) != Cin || tw.dim(3) != k || tb.dim(0) != Cout)
        throw std::invalid_argument("conv2d: shape mismatch");
    const int pad = k / 2;
    const int Ho = (H + 2 * pad - k) / stride + 1;
    const int Wo = (W + 2 * pad - k) / stride + 1;
    Tensor out({Ho, Wo, Cout});
    for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j)
            for (int o = 0; o < Cout; ++o) {
                double s = tb[o];
                for (int di = 0; di < k; ++di) {
                    const int xi = i * stride + di - pad;
                    if (xi < 0 || xi >= H) continue;
                    for (int dj = 0; dj < k; ++dj) {
                        const int xj = j * stride + dj - pad;
                        if (xj < 0 || xj >= W) continue;
                        const double* xr = &tx.v[(static_cast<size_t>(xi) * W + xj) * Cin];
                        const double* wr = &tw.v[((static_cast<size_t>(o) * Cin) * k + di) * k + dj];
                        // w layout [Cout,Cin,k,k]: stride between cin entries is k*k
                        for (int c = 0; c < Cin; ++c) s += xr[c] * wr[static_cast<size_t>(c) * k * k];
                    }
                }
                out.at(i, j, o) = s;
            }
    const int px = x.id, pw = w.id, pb = b.id;
    return {push(std::move(out), {px, pw, pb},
                 [px, pw, pb, H, W, Cin, Cout, k, pad, stride, Ho, Wo](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        const Tensor& vx = BA::val(t, px);
        const Tensor& vw = BA::val(t, pw);
        Tensor* gx = BA::gptr(t, px);
        Tensor* gw = BA::gptr(t, pw);
        Tensor* gb = BA::gptr(t, pb);
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j)
                for (int o = 0; o < Cout; ++o) {
                    const double go = g.at(i, j, o);
                    if (go == 0.0) continue;
                    if (gb) (*gb)[o] += go;
                    for (int di = 0; di < k; ++di) {
                        const int xi = i * stride + di - pad;
                        if (xi < 0 || xi >= H) continue;
                        for (int dj = 0; dj < k; ++dj) {
                            const int xj = j * stride + dj - pad;
                            if (xj < 0 || xj >= W) continue;
                            const size_t xoff = (static_cast<size_t>(xi) * W + xj) * Cin;
                            const size_t woff = ((static_cast<size_t>(o) * Cin) * k + di) * k + dj;
                            for (int c = 0; c < Cin; ++c) {
                                if (gx) gx->v[xoff + c] += go * vw.v[woff + static_cast<size_t>(c) * k * k];
                                if (gw) gw->v[woff + static_cast<size_t>(c) * k * k] += go * vx.v[xoff + c];
                            }
                        }
                    }
                }
    })};
}

Var Tape::group_norm(Var x, int groups, Var gamma, Var beta, double eps) {
    const Tensor& tx = value(x);
    check_rank3(tx, "group_norm");
    const int H = tx.dim(0), W = tx.dim(1), C = tx.dim(2);
    if (C % groups != 0) throw std::invalid_argument("group_norm: C not divisible by groups");
    const Tensor& tg = value(gamma);
    const Tensor& tb = value(beta);
    if (tg.dim(0) != C || tb.dim(0) != C) throw std::invalid_argument("group_norm: affine size");
    const int cg = C / groups;
    Tensor out({H, W, C});
    std::vector<double> mu(static_cast<size_t>(groups)), inv_sd(static_cast<size_t>(groups));
    const double n_per = static_cast<double>(H) * W * cg;
    for (int gI = 0; gI < groups; ++gI) {
        double m = 0.0;
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
                for (int c = gI * cg; c < (gI + 1) * cg; ++c) m += tx.at(i, j, c);
        m /= n_per;
        double v = 0.0;
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
                for (int c = gI * cg; c < (gI + 1) * cg; ++c) {
                    const double d = tx.at(i, j, c) - m;
                    v += d * d;
                }
        v /= n_per;
        mu[static_cast<size_t>(gI)] = m;
        inv_sd[static_cast<size_t>(gI)] = 1.0 / std::sqrt(v + eps);
    }
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            for (int c = 0; c < C; ++c) {
                const int gI = c / cg;
                out.at(i, j, c) = (tx.at(i, j, c) - mu[static_cast<size_t>(gI)]) *
                                      inv_sd[static_cast<size_t>(gI)] * tg[c] +
                                  tb[c];
            }
    const int px = x.id, pg = gamma.id, pb = beta.id;
    return {push(std::move(out), {px, pg, pb},
                 [px, pg, pb, H, W, C, cg, groups, mu, inv_sd, n_per](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        const Tensor& vx = BA::val(t, px);
        const Tensor& vg = BA::val(t, pg);
        Tensor* gx = BA::gptr(t, px);
        Tensor* ggamma = BA::gptr(t, pg);
        Tensor* gbeta = BA::gptr(t, pb);
        for (int gI = 0; gI < groups; ++gI) {
            const double m = mu[static_cast<size_t>(gI)];
            const double isd = inv_sd[static_cast<size_t>(gI)];
            // accumulate means of (dy*gamma) and (dy*gamma*xhat) over the group
            double s1 = 0.0, s2 = 0.0;
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j)
                    for (int c = gI * cg; c < (gI + 1) * cg; ++c) {
                        const double xh = (vx.at(i, j, c) - m) * isd;
                        const double dyg = g.at(i, j, c) * vg[c];
                        s1 += dyg;
                        s2 += dyg * xh;
                        if (ggamma) (*ggamma)[c] += g.at(i, j, c) * xh;
                        if (gbeta) (*gbeta)[c] += g.at(i, j, c);
                    }
            if (gx) {
                const double m1 = s1 / n_per, m2 = s2 / n_per;
                for (int i = 0; i < H; ++i)
                    for (int j = 0; j < W; ++j)
                        for (int c = gI * cg; c < (gI + 1) * cg; ++c) {
                            const double xh = (vx.at(i, j, c) - m) * isd;
                            const double dyg = g.at(i, j, c) * vg[c];
                            gx->at(i, j, c) += isd * (dyg - m1 - xh * m2);
                        }
            }
        }
    })};
}

Var Tape::upsample_nearest2(Var x) {
    const Tensor& tx = value(x);
    check_rank3(tx, "upsample_nearest2");
    const int H = tx.dim(0), W = tx.dim(1), C = tx.dim(2);
    Tensor out({2 * H, 2 * W, C});
    for (int i = 0; i < 2 * H; ++i)
        for (int j = 0; j < 2 * W; ++j)
            for (int c = 0; c < C; ++c) out.at(i, j, c) = tx.at(i / 2, j / 2, c);
    const int px = x.id;
    return {push(std::move(out), {px}, [px, H, W, C](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        if (Tensor* gx = BA::gptr(t, px))
            for (int i = 0; i < 2 * H; ++i)
                for (int j = 0; j < 2 * W; ++j)
                    for (int c = 0; c < C; ++c) gx->at(i / 2, j / 2, c) += g.at(i, j, c);
    })};
}

Var Tape::avg_pool2(Var x) {
    const Tensor& tx = value(x);
    check_rank3(tx, "avg_pool2");
    const int H = tx.dim(0), W = tx.dim(1), C = tx.dim(2);
    if (H % 2 || W % 2) throw std::invalid_argument("avg_pool2: odd spatial dims");
    Tensor out({H / 2, W / 2, C});
    for (int i = 0; i < H / 2; ++i)
        for (int j = 0; j < W / 2; ++j)
            for (int c = 0; c < C; ++c)
                out.at(i, j, c) = 0.25 * (tx.at(2 * i, 2 * j, c) + tx.at(2 * i + 1, 2 * j, c) +
                                          tx.at(2 * i, 2 * j + 1, c) + tx.at(2 * i + 1, 2 * j + 1, c));
    const int px = x.id;
    return {push(std::move(out), {px}, [px, H, W, C](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        if (Tensor* gx = BA::gptr(t, px))
            for (int i = 0; i < H / 2; ++i)
                for (int j = 0; j < W / 2; ++j)
                    for (int c = 0; c < C; ++c) {
                        const double q = 0.25 * g.at(i, j, c);
                        gx->at(2 * i, 2 * j, c) += q;
                        gx->at(2 * i + 1, 2 * j, c) += q;
                        gx->at(2 * i, 2 * j + 1, c) += q;
                        gx->at(2 * i + 1, 2 * j + 1, c) += q;
                    }
    })};
}

Var Tape::mul_channel(Var x, Var s) {
    const Tensor& tx = value(x);
    const Tensor& ts = value(s);
    check_rank3(tx, "mul_channel");
    const int H = tx.dim(0), W = tx.dim(1), C = tx.dim(2);
    if (ts.rank() != 1 || ts.dim(0) != C) throw std::invalid_argument("mul_channel: bad scale");
    Tensor out({H, W, C});
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            for (int c = 0; c < C; ++c) out.at(i, j, c) = tx.at(i, j, c) * ts[c];
    const int px = x.id, ps = s.id;
    return {push(std::move(out), {px, ps}, [px, ps, H, W, C](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        const Tensor& vx = BA::val(t, px);
        const Tensor& vs = BA::val(t, ps);
        Tensor* gx = BA::gptr(t, px);
        Tensor* gs = BA::gptr(t, ps);
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
                for (int c = 0; c < C; ++c) {
                    const double go = g.at(i, j, c);
                    if (gx) gx->at(i, j, c) += go * vs[c];
                    if (gs) (*gs)[c] += go * vx.at(i, j, c);
                }
    })};
}

Var Tape::add_channel(Var x, Var b) {
    const Tensor& tx = value(x);
    const Tensor& tb = value(b);
    check_rank3(tx, "add_channel");
    const int H = tx.dim(0), W = tx.dim(1), C = tx.dim(2);
    if (tb.rank() != 1 || tb.dim(0) != C) throw std::invalid_argument("add_channel: bad bias");
    Tensor out({H, W, C});
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            for (int c = 0; c < C; ++c) out.at(i, j, c) = tx.at(i, j, c) + tb[c];
    const int px = x.id, pb = b.id;
    return {push(std::move(out), {px, pb}, [px, pb, H, W, C](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        Tensor* gx = BA::gptr(t, px);
        Tensor* gb = BA::gptr(t, pb);
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
                for (int c = 0; c < C; ++c) {
                    if (gx) gx->at(i, j, c) += g.at(i, j, c);
                    if (gb) (*gb)[c] += g.at(i, j, c);
                }
    })};
}

Var Tape::mean_rows(Var x) {
    const Tensor& tx = value(x);
    check_rank3(tx, "mean_rows");
    const int H = tx.dim(0), W = tx.dim(1), C = tx.dim(2);
    Tensor out({1, W, C});
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            for (int c = 0; c < C; ++c) out.at(0, j, c) += tx.at(i, j, c) / H;
    const int px = x.id;
    return {push(std::move(out), {px}, [px, H, W, C](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        if (Tensor* gx = BA::gptr(t, px))
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j)
                    for (int c = 0; c < C; ++c) gx->at(i, j, c) += g.at(0, j, c) / H;
    })};
}

Var Tape::mean_cols(Var x) {
    const Tensor& tx = value(x);
    check_rank3(tx, "mean_cols");
    const int H = tx.dim(0), W = tx.dim(1), C = tx.dim(2);
    Tensor out({H, 1, C});
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            for (int c = 0; c < C; ++c) out.at(i, 0, c) += tx.at(i, j, c) / W;
    const int px = x.id;
    return {push(std::move(out), {px}, [px, H, W, C](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        if (Tensor* gx = BA::gptr(t, px))
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j)
                    for (int c = 0; c < C; ++c) gx->at(i, j, c) += g.at(i, 0, c) / W;
    })};
}

Var Tape::broadcast_rows(Var x, int h) {
    const Tensor& tx = value(x);
    check_rank3(tx, "broadcast_rows");
    if (tx.dim(0) != 1) throw std::invalid_argument("broadcast_rows: expected [1,W,C]");
    const int W = tx.dim(1), C = tx.dim(2);
    Tensor out({h, W, C});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < W; ++j)
            for (int c = 0; c < C; ++c) out.at(i, j, c) = tx.at(0, j, c);
    const int px = x.id;
    return {push(std::move(out), {px}, [px, h, W, C](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        if (Tensor* gx = BA::gptr(t, px))
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < W; ++j)
                    for (int c = 0; c < C; ++c) gx->at(0, j, c) += g.at(i, j, c);
    })};
}

Var Tape::broadcast_cols(Var x, int w) {
    const Tensor& tx = value(x);
    check_rank3(tx, "broadcast_cols");
    if (tx.dim(1) != 1) throw std::invalid_argument("broadcast_cols: expected [H,1,C]");
    const int H = tx.dim(0), C = tx.dim(2);
    Tensor out({H, w, C});
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < w; ++j)
            for (int c = 0; c < C; ++c) out.at(i, j, c) = tx.at(i, 0, c);
    const int px = x.id;
    return {push(std::move(out), {px}, [px, H, w, C](Tape& t, int self) {
        const Tensor& g = BA::grad(t, self);
        if (Tensor* gx = BA::gptr(t, px))
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < w; ++j)
                    for (int c = 0; c < C; ++c) gx->at(i, 0, c) += g.at(i, j, c);
    })};
}

// ---- reductions ----

Var Tape::sum_all(Var a) {
    const Tensor& ta = value(a);
    double s = 0.0;
    for (int64_t i = 0; i < ta.numel(); ++i) s += ta[i];
    const int pa = a.id;
    return {push(Tensor({1}, {s}), {pa}, [pa](Tape& t, int self) {
        const double g = BA::grad(t, self)[0];
        if (Tensor* ga = BA::gptr(t, pa))
            for (int64_t i = 0; i < ga->numel(); ++i) (*ga)[i] += g;
    })};
}

Var Tape::mean_all(Var a) {
    const Tensor& ta = value(a);
    const double inv = 1.0 / static_cast<double>(ta.numel());
    double s = 0.0;
    for (int64_t i = 0; i < ta.numel(); ++i) s += ta[i];
    const int pa = a.id;
    return {push(Tensor({1}, {s * inv}), {pa}, [pa, inv](Tape& t, int self) {
        const double g = BA::grad(t, self)[0] * inv;
        if (Tensor* ga = BA::gptr(t, pa))
            for (int64_t i = 0; i < ga->numel(); ++i) (*ga)[i] += g;
    })};
}

Var Tape::mse(Var a, const Tensor& target) {
    const Tensor& ta = value(a);
    if (ta.shape != target.shape) throw std::invalid_argument("mse: shape mismatch");
    const double inv = 1.0 / static_cast<double>(ta.numel());
    double s = 0.0;
    for (int64_t i = 0; i < ta.numel(); ++i) {
        const double d = ta[i] - target[i];
        s += d * d;
    }
    const int pa = a.id;
    Tensor tcopy = target;
    return {push(Tensor({1}, {s * inv}), {pa}, [pa, inv, tcopy](Tape& t, int self) {
        const double g = BA::grad(t, self)[0];
        const Tensor& va = BA::val(t, pa);
        if (Tensor* ga = BA::gptr(t, pa))
            for (int64_t i = 0; i < ga->numel(); ++i)
                (*ga)[i] += g * 2.0 * inv * (va[i] - tcopy[i]);
    })};
}

}  // namespace trifield::ad
