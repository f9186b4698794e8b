// autodiff.hpp - minimal tape-based reverse-mode differentiation over Mat<T>.
//
// A Tape owns value/grad buffers per node and a list of backward closures.
// Ops compute values eagerly; a closure is recorded only when some input
// requires a gradient, so pure-inference graphs carry no backward state.
// Parameters are leased from a ParamStore by name and deduplicated, which
// makes repeated uses of one parameter accumulate gradients naturally.
#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mat.hpp"

namespace jamflow {

template <typename T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Mat<T> value;
        Mat<T> grad;
        Mat<T> adam_m;
        Mat<T> adam_v;
    };

    int add(const std::string& name, Mat<T> init) {
        if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
        Entry e;
        e.name = name;
        e.grad = Mat<T>(init.rows, init.cols);
        e.adam_m = Mat<T>(init.rows, init.cols);
        e.adam_v = Mat<T>(init.rows, init.cols);
        e.value = std::move(init);
        entries_.push_back(std::move(e));
        const int id = static_cast<int>(entries_.size()) - 1;
        index_[name] = id;
        return id;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    int id_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
        return it->second;
    }

    Entry& entry(int id) { return entries_[static_cast<size_t>(id)]; }
    const Entry& entry(int id) const { return entries_[static_cast<size_t>(id)]; }
    Mat<T>& value(const std::string& name) { return entries_[static_cast<size_t>(id_of(name))].value; }
    const Mat<T>& value(const std::string& name) const { return entries_[static_cast<size_t>(id_of(name))].value; }
    Mat<T>& grad(const std::string& name) { return entries_[static_cast<size_t>(id_of(name))].grad; }

    int count() const { return static_cast<int>(entries_.size()); }

    size_t scalar_count() const {
        size_t n = 0;
        for (const Entry& e : entries_) n += e.value.size();
        return n;
    }

    void zero_grads() {
        for (Entry& e : entries_)
            for (T& g : e.grad.v) g = T(0);
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> index_;
};

template <typename T>
class Tape {
public:
    explicit Tape(const ParamStore<T>* store = nullptr) : store_(store) {}

    int constant(Mat<T> m) { return make(std::move(m), false); }

    int param(const std::string& name) {
        if (!store_) throw std::logic_error("Tape: no parameter store bound");
        auto it = param_nodes_.find(name);
        if (it != param_nodes_.end()) return it->second;
        const int id = make(store_->value(name), true);
        param_nodes_[name] = id;
        return id;
    }

    const Mat<T>& val(int id) const { return nodes_[static_cast<size_t>(id)].val; }
    const Mat<T>& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
    bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs; }

    // ---- elementwise and broadcast ----------------------------------------

    int add(int a, int b) {
        const Mat<T>&A = val(a), &B = val(b);
        check_same_shape(A, B, "add");
        Mat<T> out = A;
        for (size_t i = 0; i < out.size(); ++i) out.v[i] += B.v[i];
        return unary_binary(std::move(out), a, b, [this](int o, int x, int y) {
            const Mat<T>& g = grad(o);
            if (needs_grad(x))
                for (size_t i = 0; i < g.size(); ++i) mut(x).v[i] += g.v[i];
            if (needs_grad(y))
                for (size_t i = 0; i < g.size(); ++i) mut(y).v[i] += g.v[i];
        });
    }

    int sub(int a, int b) {
        const Mat<T>&A = val(a), &B = val(b);
        check_same_shape(A, B, "sub");
        Mat<T> out = A;
        for (size_t i = 0; i < out.size(); ++i) out.v[i] -= B.v[i];
        return unary_binary(std::move(out), a, b, [this](int o, int x, int y) {
            const Mat<T>& g = grad(o);
            if (needs_grad(x))
                for (size_t i = 0; i < g.size(); ++i) mut(x).v[i] += g.v[i];
            if (needs_grad(y))
                for (size_t i = 0; i < g.size(); ++i) mut(y).v[i] -= g.v[i];
        });
    }

    int mul(int a, int b) {
        const Mat<T>&A = val(a), &B = val(b);
        check_same_shape(A, B, "mul");
        Mat<T> out = A;
        for (size_t i = 0; i < out.size(); ++i) out.v[i] *= B.v[i];
        return unary_binary(std::move(out), a, b, [this](int o, int x, int y) {
            const Mat<T>& g = grad(o);
            if (needs_grad(x)) {
                const Mat<T>& B2 = val(y);
                for (size_t i = 0; i < g.size(); ++i) mut(x).v[i] += g.v[i] * B2.v[i];
            }
            if (needs_grad(y)) {
                const Mat<T>& A2 = val(x);
                for (size_t i = 0; i < g.size(); ++i) mut(y).v[i] += g.v[i] * A2.v[i];
            }
        });
    }

    int scale(int a, T s) {
        Mat<T> out = val(a);
        for (T& x : out.v) x *= s;
        const int id = make(std::move(out), needs_grad(a));
        if (nodes_[static_cast<size_t>(id)].needs)
            ops_.push_back([this, id, a, s] {
                const Mat<T>& g = grad(id);
                for (size_t i = 0; i < g.size(); ++i) mut(a).v[i] += s * g.v[i];
            });
        return id;
    }

    // a (n x m) + row (1 x m), broadcast over rows
    int add_rowvec(int a, int r) {
        const Mat<T>&A = val(a), &R = val(r);
        if (R.rows != 1 || R.cols != A.cols) throw std::invalid_argument("add_rowvec: need 1 x cols row vector");
        Mat<T> out = A;
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < A.cols; ++j) out.at(i, j) += R.at(0, j);
        return unary_binary(std::move(out), a, r, [this](int o, int x, int y) {
            const Mat<T>& g = grad(o);
            if (needs_grad(x))
                for (size_t i = 0; i < g.size(); ++i) mut(x).v[i] += g.v[i];
            if (needs_grad(y)) {
                Mat<T>& gr = mut(y);
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) gr.at(0, j) += g.at(i, j);
            }
        });
    }

    int tile_rows(int r, int n) {
        const Mat<T>& R = val(r);
        if (R.rows != 1) throw std::invalid_argument("tile_rows: need a row vector");
        Mat<T> out(n, R.cols);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < R.cols; ++j) out.at(i, j) = R.at(0, j);
        const int id = make(std::move(out), needs_grad(r));
        if (nodes_[static_cast<size_t>(id)].needs)
            ops_.push_back([this, id, r] {
                const Mat<T>& g = grad(id);
                Mat<T>& gr = mut(r);
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) gr.at(0, j) += g.at(i, j);
            });
        return id;
    }

    // ---- linear algebra ----------------------------------------------------

    int matmul(int a, int b) {
        Mat<T> out = matmul_nn(val(a), val(b));
        return unary_binary(std::move(out), a, b, [this](int o, int x, int y) {
            const Mat<T>& g = grad(o);
            if (needs_grad(x)) gemm_nt_acc(g, val(y), mut(x));  // dA += g B^T
            if (needs_grad(y)) gemm_tn_acc(val(x), g, mut(y));  // dB += A^T g
        });
    }

    // a (n x k) * b(m x k)^T -> n x m; the layout used by all linear layers
    int matmul_nt(int a, int b) {
        Mat<T> out = jamflow::matmul_nt(val(a), val(b));
        return unary_binary(std::move(out), a, b, [this](int o, int x, int y) {
            const Mat<T>& g = grad(o);
            if (needs_grad(x)) gemm_nn_acc(g, val(y), mut(x));  // dA += g B
            if (needs_grad(y)) gemm_tn_acc(g, val(x), mut(y));  // dB += g^T A
        });
    }

    int slice_cols(int a, int c0, int n) {
        const Mat<T>& A = val(a);
        if (c0 < 0 || n < 0 || c0 + n > A.cols) throw std::invalid_argument("slice_cols: range outside matrix");
        Mat<T> out(A.rows, n);
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < n; ++j) out.at(i, j) = A.at(i, c0 + j);
        const int id = make(std::move(out), needs_grad(a));
        if (nodes_[static_cast<size_t>(id)].needs)
            ops_.push_back([this, id, a, c0] {
                const Mat<T>& g = grad(id);
                Mat<T>& ga = mut(a);
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) ga.at(i, c0 + j) += g.at(i, j);
            });
        return id;
    }

    int concat_cols(const std::vector<int>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
        const int rows = val(parts[0]).rows;
        int cols = 0;
        bool needs = false;
        for (int p : parts) {
            if (val(p).rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
            cols += val(p).cols;
            needs = needs || needs_grad(p);
        }
        Mat<T> out(rows, cols);
        int off = 0;
        for (int p : parts) {
            const Mat<T>& P = val(p);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < P.cols; ++j) out.at(i, off + j) = P.at(i, j);
            off += P.cols;
        }
        const int id = make(std::move(out), needs);
        if (needs)
            ops_.push_back([this, id, parts] {
                const Mat<T>& g = grad(id);
                int o = 0;
                for (int p : parts) {
                    const int pc = val(p).cols;
                    if (needs_grad(p)) {
                        Mat<T>& gp = mut(p);
                        for (int i = 0; i < g.rows; ++i)
                            for (int j = 0; j < pc; ++j) gp.at(i, j) += g.at(i, o + j);
                    }
                    o += pc;
                }
            });
        return id;
    }

    // ---- nonlinearities ----------------------------------------------------

    int softmax_rows(int a) {
        const Mat<T>& A = val(a);
        Mat<T> out(A.rows, A.cols);
        for (int i = 0; i < A.rows; ++i) {
            const T* x = A.row(i);
            T* y = out.row(i);
            T mx = x[0];
            for (int j = 1; j < A.cols; ++j) mx = std::max(mx, x[j]);
            T sum = T(0);
            for (int j = 0; j < A.cols; ++j) {
                y[j] = std::exp(x[j] - mx);
                sum += y[j];
            }
            const T inv = T(1) / sum;
            for (int j = 0; j < A.cols; ++j) y[j] *= inv;
        }
        const int id = make(std::move(out), needs_grad(a));
        if (nodes_[static_cast<size_t>(id)].needs)
            ops_.push_back([this, id, a] {
                const Mat<T>&g = grad(id), &y = val(id);
                Mat<T>& ga = mut(a);
                for (int i = 0; i < g.rows; ++i) {
                    T dot = T(0);
                    for (int j = 0; j < g.cols; ++j) dot += g.at(i, j) * y.at(i, j);
                    for (int j = 0; j < g.cols; ++j) ga.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
                }
            });
        return id;
    }

    int silu(int a) {
        const Mat<T>& A = val(a);
        Mat<T> out(A.rows, A.cols);
        for (size_t i = 0; i < A.size(); ++i) {
            const T s = sigmoid(A.v[i]);
            out.v[i] = A.v[i] * s;
        }
        const int id = make(std::move(out), needs_grad(a));
        if (nodes_[static_cast<size_t>(id)].needs)
            ops_.push_back([this, id, a] {
                const Mat<T>&g = grad(id), &x = val(a);
                Mat<T>& ga = mut(a);
                for (size_t i = 0; i < g.size(); ++i) {
                    const T s = sigmoid(x.v[i]);
                    ga.v[i] += g.v[i] * s * (T(1) + x.v[i] * (T(1) - s));
                }
            });
        return id;
    }

    // y_ij = gain_j * x_ij / rms(x_i), rms over the row
    int rmsnorm_rows(int a, int gain, T eps) {
        const Mat<T>&A = val(a), &G = val(gain);
        if (G.rows != 1 || G.cols != A.cols) throw std::invalid_argument("rmsnorm_rows: gain must be 1 x cols");
        Mat<T> out(A.rows, A.cols);
        for (int i = 0; i < A.rows; ++i) {
            T ms = T(0);
            for (int j = 0; j < A.cols; ++j) ms += A.at(i, j) * A.at(i, j);
            const T inv = T(1) / std::sqrt(ms / T(A.cols) + eps);
            for (int j = 0; j < A.cols; ++j) out.at(i, j) = G.at(0, j) * A.at(i, j) * inv;
        }
        return unary_binary(std::move(out), a, gain, [this, eps](int o, int x, int y) {
            const Mat<T>&g = grad(o), &A2 = val(x), &G2 = val(y);
            const int n = A2.cols;
            for (int i = 0; i < A2.rows; ++i) {
                T ms = T(0);
                for (int j = 0; j < n; ++j) ms += A2.at(i, j) * A2.at(i, j);
                const T r2 = ms / T(n) + eps;
                const T inv = T(1) / std::sqrt(r2);
                if (needs_grad(y)) {
                    Mat<T>& gg = mut(y);
                    for (int j = 0; j < n; ++j) gg.at(0, j) += g.at(i, j) * A2.at(i, j) * inv;
                }
                if (needs_grad(x)) {
                    T dot = T(0);
                    for (int j = 0; j < n; ++j) dot += g.at(i, j) * G2.at(0, j) * A2.at(i, j);
                    const T c = dot * inv / (r2 * T(n));
                    Mat<T>& ga = mut(x);
                    for (int j = 0; j < n; ++j) ga.at(i, j) += g.at(i, j) * G2.at(0, j) * inv - A2.at(i, j) * c;
                }
            }
        });
    }

    // ---- structured ops ----------------------------------------------------

    int embed_rows(int table, const std::vector<int>& ids) {
        const Mat<T>& Tb = val(table);
        Mat<T> out(static_cast<int>(ids.size()), Tb.cols);
        for (size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= Tb.rows) throw std::invalid_argument("embed_rows: id out of range");
            for (int j = 0; j < Tb.cols; ++j) out.at(static_cast<int>(i), j) = Tb.at(ids[i], j);
        }
        const int id = make(std::move(out), needs_grad(table));
        if (nodes_[static_cast<size_t>(id)].needs)
            ops_.push_back([this, id, table, ids] {
                const Mat<T>& g = grad(id);
                Mat<T>& gt = mut(table);
                for (size_t i = 0; i < ids.size(); ++i)
                    for (int j = 0; j < g.cols; ++j) gt.at(ids[i], j) += g.at(static_cast<int>(i), j);
            });
        return id;
    }

    // x (L x Cin), w (Cout x Cin*K) with layout [ci*K + k], b (1 x Cout)
    int conv1d(int x, int w, int b, int kernel, int stride, int pad) {
        const Mat<T>&X = val(x), &W = val(w), &B = val(b);
        const int cin = X.cols;
        if (W.cols != cin * kernel) throw std::invalid_argument("conv1d: weight shape mismatch");
        const int cout = W.rows;
        if (B.rows != 1 || B.cols != cout) throw std::invalid_argument("conv1d: bias shape mismatch");
        if (stride < 1 || X.rows + 2 * pad < kernel) throw std::invalid_argument("conv1d: bad geometry");
        const int lout = (X.rows + 2 * pad - kernel) / stride + 1;
        Mat<T> out(lout, cout);
        for (int o = 0; o < lout; ++o)
            for (int co = 0; co < cout; ++co) {
                T acc = B.at(0, co);
                for (int k = 0; k < kernel; ++k) {
                    const int t = o * stride + k - pad;
                    if (t < 0 || t >= X.rows) continue;
                    for (int ci = 0; ci < cin; ++ci) acc += W.at(co, ci * kernel + k) * X.at(t, ci);
                }
                out.at(o, co) = acc;
            }
        const bool needs = needs_grad(x) || needs_grad(w) || needs_grad(b);
        const int id = make(std::move(out), needs);
        if (needs)
            ops_.push_back([this, id, x, w, b, kernel, stride, pad] {
                const Mat<T>&g = grad(id), &X2 = val(x), &W2 = val(w);
                const int cin = X2.cols, cout = W2.rows;
                for (int o = 0; o < g.rows; ++o) {
                    for (int k = 0; k < kernel; ++k) {
                        const int t = o * stride + k - pad;
                        if (t < 0 || t >= X2.rows) continue;
                        for (int co = 0; co < cout; ++co) {
                            const T go = g.at(o, co);
                            if (needs_grad(x)) {
                                Mat<T>& gx = mut(x);
                                for (int ci = 0; ci < cin; ++ci) gx.at(t, ci) += go * W2.at(co, ci * kernel + k);
                            }
                            if (needs_grad(w)) {
                                Mat<T>& gw = mut(w);
                                for (int ci = 0; ci < cin; ++ci) gw.at(co, ci * kernel + k) += go * X2.at(t, ci);
                            }
                        }
                    }
                    if (needs_grad(b)) {
                        Mat<T>& gb = mut(b);
                        for (int co = 0; co < cout; ++co) gb.at(0, co) += g.at(o, co);
                    }
                }
            });
        return id;
    }

    // depthwise, stride 1, same padding; w (C x K), b (1 x C)
    int dwconv1d(int x, int w, int b) {
        const Mat<T>&X = val(x), &W = val(w), &B = val(b);
        if (W.rows != X.cols || B.cols != X.cols || B.rows != 1)
            throw std::invalid_argument("dwconv1d: shape mismatch");
        const int kernel = W.cols;
        if (kernel % 2 == 0) throw std::invalid_argument("dwconv1d: kernel must be odd");
        const int pad = (kernel - 1) / 2;
        Mat<T> out(X.rows, X.cols);
        for (int t = 0; t < X.rows; ++t)
            for (int c = 0; c < X.cols; ++c) {
                T acc = B.at(0, c);
                for (int k = 0; k < kernel; ++k) {
                    const int s = t + k - pad;
                    if (s < 0 || s >= X.rows) continue;
                    acc += W.at(c, k) * X.at(s, c);
                }
                out.at(t, c) = acc;
            }
        const bool needs = needs_grad(x) || needs_grad(w) || needs_grad(b);
        const int id = make(std::move(out), needs);
        if (needs)
            ops_.push_back([this, id, x, w, b, kernel, pad] {
                const Mat<T>&g = grad(id), &X2 = val(x), &W2 = val(w);
                for (int t = 0; t < g.rows; ++t)
                    for (int c = 0; c < g.cols; ++c) {
                        const T go = g.at(t, c);
                        for (int k = 0; k < kernel; ++k) {
                            const int s = t + k - pad;
                            if (s < 0 || s >= X2.rows) continue;
                            if (needs_grad(x)) mut(x).at(s, c) += go * W2.at(c, k);
                            if (needs_grad(w)) mut(w).at(c, k) += go * X2.at(s, c);
                        }
                        if (needs_grad(b)) mut(b).at(0, c) += go;
                    }
            });
        return id;
    }

    // rotary position encoding applied per head: pair (2j, 2j+1) of each
    // head's columns rotated by pos * base^(-2j/head_dim)
    int rope(int x, int head_dim, T base) {
        const Mat<T>& X = val(x);
        if (head_dim < 2 || head_dim % 2 != 0 || X.cols % head_dim != 0)
            throw std::invalid_argument("rope: head_dim must be even and divide cols");
        const int half = head_dim / 2;
        std::vector<T> cs(static_cast<size_t>(X.rows) * half), sn(static_cast<size_t>(X.rows) * half);
        for (int i = 0; i < X.rows; ++i)
            for (int j = 0; j < half; ++j) {
                const T theta = T(i) * std::pow(base, -T(2 * j) / T(head_dim));
                cs[static_cast<size_t>(i) * half + j] = std::cos(theta);
                sn[static_cast<size_t>(i) * half + j] = std::sin(theta);
            }
        Mat<T> out(X.rows, X.cols);
        const int heads = X.cols / head_dim;
        for (int i = 0; i < X.rows; ++i)
            for (int h = 0; h < heads; ++h)
                for (int j = 0; j < half; ++j) {
                    const T c = cs[static_cast<size_t>(i) * half + j], s = sn[static_cast<size_t>(i) * half + j];
                    const T u = X.at(i, h * head_dim + 2 * j), v = X.at(i, h * head_dim + 2 * j + 1);
                    out.at(i, h * head_dim + 2 * j) = u * c - v * s;
                    out.at(i, h * head_dim + 2 * j + 1) = u * s + v * c;
                }
        const int id = make(std::move(out), needs_grad(x));
        if (nodes_[static_cast<size_t>(id)].needs)
            ops_.push_back([this, id, x, head_dim, half, heads, cs, sn] {
                const Mat<T>& g = grad(id);
                Mat<T>& gx = mut(x);
                for (int i = 0; i < g.rows; ++i)
                    for (int h = 0; h < heads; ++h)
                        for (int j = 0; j < half; ++j) {
                            const T c = cs[static_cast<size_t>(i) * half + j], s = sn[static_cast<size_t>(i) * half + j];
                            const T gu = g.at(i, h * head_dim + 2 * j), gv = g.at(i, h * head_dim + 2 * j + 1);
                            gx.at(i, h * head_dim + 2 * j) += gu * c + gv * s;
                            gx.at(i, h * head_dim + 2 * j + 1) += -gu * s + gv * c;
                        }
            });
        return id;
    }

    // ---- reductions --------------------------------------------------------

    int mean_all(int a) {
        const Mat<T>& A = val(a);
        if (A.empty()) throw std::invalid_argument("mean_all: empty matrix");
        T sum = T(0);
        for (const T& x : A.v) sum += x;
        Mat<T> out(1, 1);
        out.at(0, 0) = sum / T(A.size());
        const int id = make(std::move(out), needs_grad(a));
        if (nodes_[static_cast<size_t>(id)].needs)
            ops_.push_back([this, id, a] {
                const T g = grad(id).at(0, 0) / T(val(a).size());
                Mat<T>& ga = mut(a);
                for (T& x : ga.v) x += g;
            });
        return id;
    }

    // mean((a - b)^2) over all entries
    int mse(int a, int b) {
        const Mat<T>&A = val(a), &B = val(b);
        check_same_shape(A, B, "mse");
        T sum = T(0);
        for (size_t i = 0; i < A.size(); ++i) {
            const T d = A.v[i] - B.v[i];
            sum += d * d;
        }
        Mat<T> out(1, 1);
        out.at(0, 0) = sum / T(A.size());
        return unary_binary(std::move(out), a, b, [this](int o, int x, int y) {
            const T g = grad(o).at(0, 0) * T(2) / T(val(x).size());
            const Mat<T>&A2 = val(x), &B2 = val(y);
            if (needs_grad(x)) {
                Mat<T>& ga = mut(x);
                for (size_t i = 0; i < ga.size(); ++i) ga.v[i] += g * (A2.v[i] - B2.v[i]);
            }
            if (needs_grad(y)) {
                Mat<T>& gb = mut(y);
                for (size_t i = 0; i < gb.size(); ++i) gb.v[i] -= g * (A2.v[i] - B2.v[i]);
            }
        });
    }

    int logsigmoid(int a) {
        const Mat<T>& A = val(a);
        Mat<T> out(A.rows, A.cols);
        for (size_t i = 0; i < A.size(); ++i) {
            const T x = A.v[i];
            out.v[i] = (x >= T(0)) ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
        }
        const int id = make(std::move(out), needs_grad(a));
        if (nodes_[static_cast<size_t>(id)].needs)
            ops_.push_back([this, id, a] {
                const Mat<T>&g = grad(id), &x = val(a);
                Mat<T>& ga = mut(a);
                for (size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i] * sigmoid(-x.v[i]);
            });
        return id;
    }

    // ---- driver ------------------------------------------------------------

    void backward(int loss) {
        const Mat<T>& L = val(loss);
        if (L.rows != 1 || L.cols != 1) throw std::invalid_argument("backward: loss must be a 1x1 node");
        for (Node& n : nodes_)
            if (n.needs) n.grad = Mat<T>(n.val.rows, n.val.cols);
        if (!nodes_[static_cast<size_t>(loss)].needs)
            throw std::logic_error("backward: loss does not depend on any parameter");
        nodes_[static_cast<size_t>(loss)].grad.at(0, 0) = T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

    // scatter node gradients into a store (grad += scale * g), keyed by name
    void add_param_grads(ParamStore<T>& dst_store, T scale = T(1)) const {
        for (const auto& [name, id] : param_nodes_) {
            const Mat<T>& g = grad(id);
            if (g.empty()) continue;
            Mat<T>& dst = dst_store.grad(name);
            for (size_t i = 0; i < dst.size(); ++i) dst.v[i] += scale * g.v[i];
        }
    }

    void check_finite(int id, const std::string& context) const {
        if (!val(id).all_finite()) throw std::runtime_error("non-finite values: " + context);
    }

    static T sigmoid(T x) { return (x >= T(0)) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x)); }

private:
    struct Node {
        Mat<T> val;
        Mat<T> grad;
        bool needs = false;
    };

    int make(Mat<T> v, bool needs) {
        nodes_.push_back(Node{std::move(v), Mat<T>(), needs});
        return static_cast<int>(nodes_.size()) - 1;
    }

    Mat<T>& mut(int id) { return nodes_[static_cast<size_t>(id)].grad; }

    template <typename F>
    int unary_binary(Mat<T> out, int a, int b, F&& back) {
        const bool needs = needs_grad(a) || needs_grad(b);
        const int id = make(std::move(out), needs);
        if (needs) ops_.push_back([back = std::forward<F>(back), id, a, b] { back(id, a, b); });
        return id;
    }

    std::vector<Node> nodes_;
    std::vector<std::function<void()>> ops_;
    std::unordered_map<std::string, int> param_nodes_;
    const ParamStore<T>* store_;
};

}  // namespace jamflow
