#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "trajden/grid.hpp"

namespace trajden {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Define-by-run reverse-mode tape. Nodes own their forward values; leaves may
// bind an external grid so gradients land in parameter storage. A tape is
// single-worker; cross-scenario parallelism uses one tape per worker.
template <typename T>
class Tape {
  public:
    Var leaf(BasicGrid<T> g) {
        nodes_.push_back(Node{std::move(g), nullptr, {}, nullptr, {}});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    // Binds a long-lived grid (parameter). The grid must outlive the tape.
    Var param(BasicGrid<T>& g) {
        Node n;
        n.value = g;  // copy of the current value; grads flow to `external`
        n.external = &g;
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    const BasicGrid<T>& value(Var v) const { return nodes_[check(v)].value; }

    // Adjoint accumulator of a node, allocated on first touch.
    std::vector<T>& adj(Var v) {
        Node& n = nodes_[check(v)];
        if (n.adj.size() != n.value.data.size()) n.adj.assign(n.value.data.size(), T(0));
        return n.adj;
    }

    bool has_adj(Var v) const { return !nodes_[check(v)].adj.empty(); }

    using BackwardFn = std::function<void(Tape&, Var)>;

    Var make_node(BasicGrid<T> value, std::vector<Var> inputs, BackwardFn bwd) {
        Node n;
        n.value = std::move(value);
        n.inputs = std::move(inputs);
        n.backward = std::move(bwd);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    // Reverse pass from a scalar loss. Populates `grad` of every bound
    // external grid with requires_grad set.
    void backward(Var loss) {
        if (backward_done_)
            throw numeric_error("backward: tape already consumed; build a fresh tape");
        backward_done_ = true;
        Node& ln = nodes_[check(loss)];
        if (ln.value.numel() != 1) throw numeric_error("backward: loss must be a scalar");
        adj(loss)[0] = T(1);
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.adj.empty()) continue;  // nothing flowed here
            if (n.backward) n.backward(*this, Var{i});
            if (n.external && n.external->requires_grad) {
                n.external->ensure_grad();
                auto& g = n.external->grad;
                for (size_t k = 0; k < g.size(); ++k) g[k] += n.adj[k];
            }
        }
    }

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        BasicGrid<T> value;
        BasicGrid<T>* external = nullptr;
        std::vector<Var> inputs;
        BackwardFn backward;
        std::vector<T> adj;
    };

    int check(Var v) const {
        if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
            throw numeric_error("invalid tape variable");
        return v.id;
    }

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

template <typename T>
Var add(Tape<T>& tp, Var a, Var b) {
    const auto& A = tp.value(a);
    const auto& B = tp.value(b);
    check_same_shape(A, B, "add");
    BasicGrid<T> out(A.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = A.data[i] + B.data[i];
    return tp.make_node(std::move(out), {a, b}, [a, b](Tape<T>& t, Var self) {
        auto& g = t.adj(self);
        auto& da = t.adj(a);
        auto& db = t.adj(b);
        for (size_t i = 0; i < g.size(); ++i) {
            da[i] += g[i];
            db[i] += g[i];
        }
    });
}

template <typename T>
Var mul(Tape<T>& tp, Var a, Var b) {
    const auto& A = tp.value(a);
    const auto& B = tp.value(b);
    check_same_shape(A, B, "mul");
    BasicGrid<T> out(A.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = A.data[i] * B.data[i];
    return tp.make_node(std::move(out), {a, b}, [a, b](Tape<T>& t, Var self) {
        auto& g = t.adj(self);
        const auto& A = t.value(a);
        const auto& B = t.value(b);
        auto& da = t.adj(a);
        auto& db = t.adj(b);
        for (size_t i = 0; i < g.size(); ++i) {
            da[i] += g[i] * B.data[i];
            db[i] += g[i] * A.data[i];
        }
    });
}

template <typename T>
Var scale(Tape<T>& tp, Var a, double c) {
    const auto& A = tp.value(a);
    BasicGrid<T> out(A.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<T>(A.data[i] * c);
    return tp.make_node(std::move(out), {a}, [a, c](Tape<T>& t, Var self) {
        auto& g = t.adj(self);
        auto& da = t.adj(a);
        for (size_t i = 0; i < g.size(); ++i) da[i] += static_cast<T>(g[i] * c);
    });
}

template <typename T>
Var relu(Tape<T>& tp, Var a) {
    const auto& A = tp.value(a);
    BasicGrid<T> out(A.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = A.data[i] > T(0) ? A.data[i] : T(0);
    return tp.make_node(std::move(out), {a}, [a](Tape<T>& t, Var self) {
        auto& g = t.adj(self);
        const auto& A = t.value(a);
        auto& da = t.adj(a);
        for (size_t i = 0; i < g.size(); ++i)
            if (A.data[i] > T(0)) da[i] += g[i];
    });
}

template <typename T>
Var sum_all(Tape<T>& tp, Var a) {
    const auto& A = tp.value(a);
    double acc = 0.0;
    for (T v : A.data) acc += static_cast<double>(v);
    BasicGrid<T> out({1});
    out.data[0] = static_cast<T>(acc);
    return tp.make_node(std::move(out), {a}, [a](Tape<T>& t, Var self) {
        T g = t.adj(self)[0];
        auto& da = t.adj(a);
        for (auto& v : da) v += g;
    });
}

template <typename T>
Var reshape(Tape<T>& tp, Var a, std::vector<int> shape) {
    const auto& A = tp.value(a);
    BasicGrid<T> out(shape);
    require(out.numel() == A.numel(), "reshape: element count mismatch");
    out.data = A.data;
    return tp.make_node(std::move(out), {a}, [a](Tape<T>& t, Var self) {
        auto& g = t.adj(self);
        auto& da = t.adj(a);
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    });
}

template <typename T>
Var select_row(Tape<T>& tp, Var a, int row) {
    const auto& A = tp.value(a);
    require(A.rank() == 2, "select_row expects a matrix");
    if (row < 0 || row >= A.shape[0]) throw numeric_error("select_row: row out of range");
    const int M = A.shape[1];
    BasicGrid<T> out({M});
    for (int j = 0; j < M; ++j) out.data[j] = A.at(row, j);
    return tp.make_node(std::move(out), {a}, [a, row, M](Tape<T>& t, Var self) {
        auto& g = t.adj(self);
        auto& da = t.adj(a);
        for (int j = 0; j < M; ++j) da[static_cast<size_t>(row) * M + j] += g[j];
    });
}

template <typename T>
Var repeat_rows(Tape<T>& tp, Var a, int n) {
    const auto& A = tp.value(a);
    require(A.rank() == 1, "repeat_rows expects a vector");
    const int M = A.shape[0];
    BasicGrid<T> out({n, M});
    for (int r = 0; r < n; ++r)
        for (int j = 0; j < M; ++j) out.at(r, j) = A.data[j];
    return tp.make_node(std::move(out), {a}, [a, n, M](Tape<T>& t, Var self) {
        auto& g = t.adj(self);
        auto& da = t.adj(a);
        for (int r = 0; r < n; ++r)
            for (int j = 0; j < M; ++j) da[j] += g[static_cast<size_t>(r) * M + j];
    });
}

template <typename T>
Var concat(Tape<T>& tp, const std::vector<Var>& xs, int axis) {
    require(!xs.empty(), "concat: no inputs");
    const auto& first = tp.value(xs[0]);
    const int rank = first.rank();
    require(axis >= 0 && axis < rank, "concat: bad axis");
    std::vector<int> shape = first.shape;
    int total = 0;
    for (Var v : xs) {
        const auto& g = tp.value(v);
        require(g.rank() == rank, "concat: rank mismatch");
        for (int d = 0; d < rank; ++d)
            if (d != axis)
                require(g.shape[d] == shape[d], "concat: shape mismatch off the concat axis");
        total += g.shape[axis];
    }
    shape[axis] = total;
    size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<size_t>(shape[d]);
    for (int d = axis + 1; d < rank; ++d) inner *= static_cast<size_t>(shape[d]);

    BasicGrid<T> out(shape);
    std::vector<size_t> offsets;    // per input, offset (in elements) inside an outer block
    std::vector<size_t> in_blocks;  // per input, elements contributed per outer block
    {
        size_t off = 0;
        for (Var v : xs) {
            const size_t blk = static_cast<size_t>(tp.value(v).shape[axis]) * inner;
            offsets.push_back(off);
            in_blocks.push_back(blk);
            off += blk;
        }
    }
    const size_t out_block = static_cast<size_t>(total) * inner;
    for (size_t xi = 0; xi < xs.size(); ++xi) {
        const auto& g = tp.value(xs[xi]);
        for (size_t o = 0; o < outer; ++o)
            std::copy_n(g.data.data() + o * in_blocks[xi], in_blocks[xi],
                        out.data.data() + o * out_block + offsets[xi]);
    }
    auto inputs = xs;
    return tp.make_node(std::move(out), inputs,
                        [xs, offsets, in_blocks, outer, out_block](Tape<T>& t, Var self) {
                            auto& g = t.adj(self);
                            for (size_t xi = 0; xi < xs.size(); ++xi) {
                                auto& dx = t.adj(xs[xi]);
                                for (size_t o = 0; o < outer; ++o) {
                                    const T* src = g.data() + o * out_block + offsets[xi];
                                    T* dst = dx.data() + o * in_blocks[xi];
                                    for (size_t i = 0; i < in_blocks[xi]; ++i) dst[i] += src[i];
                                }
                            }
                        });
}

// ---------------------------------------------------------------------------
// Dense layers
// ---------------------------------------------------------------------------

// y = x W^T + b with W stored [out, in]; x is [in] or [batch, in].
template <typename T>
Var linear(Tape<T>& tp, Var x, Var W, Var b = Var{}) {
    const auto& X = tp.value(x);
    const auto& Wg = tp.value(W);
    require(Wg.rank() == 2, "linear: W must be [out,in]");
    const int out_dim = Wg.shape[0], in_dim = Wg.shape[1];
    const bool batched = X.rank() == 2;
    const int B = batched ? X.shape[0] : 1;
    const int xin = batched ? X.shape[1] : X.shape[0];
    if (xin != in_dim)
        throw numeric_error("linear: shape mismatch " + X.shape_str() + " vs " + Wg.shape_str());
    if (b.valid()) {
        const auto& bg = tp.value(b);
        require(bg.rank() == 1 && bg.shape[0] == out_dim, "linear: bias shape mismatch");
    }
    BasicGrid<T> out(batched ? std::vector<int>{B, out_dim} : std::vector<int>{out_dim});
    for (int bi = 0; bi < B; ++bi) {
        const T* xr = X.data.data() + static_cast<size_t>(bi) * in_dim;
        T* yr = out.data.data() + static_cast<size_t>(bi) * out_dim;
        for (int o = 0; o < out_dim; ++o) {
            const T* wr = Wg.data.data() + static_cast<size_t>(o) * in_dim;
            double acc = b.valid() ? static_cast<double>(tp.value(b).data[o]) : 0.0;
            for (int i = 0; i < in_dim; ++i) acc += static_cast<double>(xr[i]) * wr[i];
            yr[o] = static_cast<T>(acc);
        }
    }
    std::vector<Var> inputs = {x, W};
    if (b.valid()) inputs.push_back(b);
    return tp.make_node(std::move(out), inputs,
                        [x, W, b, B, in_dim, out_dim](Tape<T>& t, Var self) {
                            auto& g = t.adj(self);
                            const auto& X = t.value(x);
                            const auto& Wg = t.value(W);
                            auto& dx = t.adj(x);
                            auto& dW = t.adj(W);
                            for (int bi = 0; bi < B; ++bi) {
                                const T* gr = g.data() + static_cast<size_t>(bi) * out_dim;
                                const T* xr = X.data.data() + static_cast<size_t>(bi) * in_dim;
                                T* dxr = dx.data() + static_cast<size_t>(bi) * in_dim;
                                for (int o = 0; o < out_dim; ++o) {
                                    const T go = gr[o];
                                    if (go == T(0)) continue;
                                    const T* wr = Wg.data.data() + static_cast<size_t>(o) * in_dim;
                                    T* dwr = dW.data() + static_cast<size_t>(o) * in_dim;
                                    for (int i = 0; i < in_dim; ++i) {
                                        dxr[i] += go * wr[i];
                                        dwr[i] += go * xr[i];
                                    }
                                }
                            }
                            if (b.valid()) {
                                auto& db = t.adj(b);
                                for (int bi = 0; bi < B; ++bi) {
                                    const T* gr = g.data() + static_cast<size_t>(bi) * out_dim;
                                    for (int o = 0; o < out_dim; ++o) db[o] += gr[o];
                                }
                            }
                        });
}

namespace detail {

// Output-column range [lo, hi) keeping ix = ox*stride + k - 1 inside [0, n).
inline void conv_tap_range(int n, int n_out, int k, int stride, int* lo, int* hi) {
    const int offset = k - 1;
    const int first = offset < 0 ? (-offset + stride - 1) / stride : 0;
    const int last = (n - 1 - offset) / stride;
    *lo = std::max(0, first);
    *hi = std::min(n_out, last + 1);
}

// Eight-lane dot product with a fixed summation order; vectorizes without
// reassociation flags.
template <typename T>
inline double lane_dot(const T* a, const T* b, int n) {
    T lanes[8] = {};
    int i = 0;
    for (; i + 8 <= n; i += 8)
        for (int j = 0; j < 8; ++j) lanes[j] += a[i + j] * b[i + j];
    double tail = 0.0;
    for (; i < n; ++i) tail += static_cast<double>(a[i]) * b[i];
    const double s01 = static_cast<double>(lanes[0]) + lanes[1];
    const double s23 = static_cast<double>(lanes[2]) + lanes[3];
    const double s45 = static_cast<double>(lanes[4]) + lanes[5];
    const double s67 = static_cast<double>(lanes[6]) + lanes[7];
    return (s01 + s23) + (s45 + s67) + tail;
}

template <typename T>
inline double lane_sum(const T* a, int n) {
    T lanes[8] = {};
    int i = 0;
    for (; i + 8 <= n; i += 8)
        for (int j = 0; j < 8; ++j) lanes[j] += a[i + j];
    double tail = 0.0;
    for (; i < n; ++i) tail += static_cast<double>(a[i]);
    const double s01 = static_cast<double>(lanes[0]) + lanes[1];
    const double s23 = static_cast<double>(lanes[2]) + lanes[3];
    const double s45 = static_cast<double>(lanes[4]) + lanes[5];
    const double s67 = static_cast<double>(lanes[6]) + lanes[7];
    return (s01 + s23) + (s45 + s67) + tail;
}

}  // namespace detail

// 3x3 convolution, padding 1, stride 1 or 2. x [C,H,W], K [O,C,3,3], b [O].
template <typename T>
Var conv2d_3x3(Tape<T>& tp, Var x, Var K, Var b, int stride) {
    require(stride == 1 || stride == 2, "conv2d_3x3: stride must be 1 or 2");
    const auto& X = tp.value(x);
    const auto& Kg = tp.value(K);
    require(X.rank() == 3, "conv2d_3x3: input must be [C,H,W]");
    require(Kg.rank() == 4 && Kg.shape[2] == 3 && Kg.shape[3] == 3,
            "conv2d_3x3: kernel must be [O,C,3,3]");
    const int C = X.shape[0], H = X.shape[1], W = X.shape[2];
    const int O = Kg.shape[0];
    if (Kg.shape[1] != C)
        throw numeric_error("conv2d_3x3: shape mismatch " + X.shape_str() + " vs " +
                            Kg.shape_str());
    const int Ho = (H + 2 - 3) / stride + 1;
    const int Wo = (W + 2 - 3) / stride + 1;
    if (b.valid()) {
        const auto& bg = tp.value(b);
        require(bg.rank() == 1 && bg.shape[0] == O, "conv2d_3x3: bias shape mismatch");
    }

    BasicGrid<T> out({O, Ho, Wo});
    for (int o = 0; o < O; ++o) {
        T* oplane = out.data.data() + static_cast<size_t>(o) * Ho * Wo;
        if (b.valid()) {
            const T bias = tp.value(b).data[o];
            for (int i = 0; i < Ho * Wo; ++i) oplane[i] = bias;
        }
        for (int c = 0; c < C; ++c) {
            const T* xplane = X.data.data() + static_cast<size_t>(c) * H * W;
            for (int ky = 0; ky < 3; ++ky) {
                int oy_lo, oy_hi;
                detail::conv_tap_range(H, Ho, ky, stride, &oy_lo, &oy_hi);
                for (int kx = 0; kx < 3; ++kx) {
                    const T w = Kg.at(o, c, ky, kx);
                    if (w == T(0)) continue;
                    int ox_lo, ox_hi;
                    detail::conv_tap_range(W, Wo, kx, stride, &ox_lo, &ox_hi);
                    for (int oy = oy_lo; oy < oy_hi; ++oy) {
                        const T* xrow = xplane + static_cast<size_t>(oy * stride + ky - 1) * W +
                                        (ox_lo * stride + kx - 1);
                        T* orow = oplane + static_cast<size_t>(oy) * Wo;
                        if (stride == 1) {
                            for (int ox = ox_lo; ox < ox_hi; ++ox)
                                orow[ox] += w * xrow[ox - ox_lo];
                        } else {
                            for (int ox = ox_lo; ox < ox_hi; ++ox)
                                orow[ox] += w * xrow[2 * (ox - ox_lo)];
                        }
                    }
                }
            }
        }
    }

    std::vector<Var> inputs = {x, K};
    if (b.valid()) inputs.push_back(b);
    return tp.make_node(
        std::move(out), inputs, [x, K, b, C, H, W, O, Ho, Wo, stride](Tape<T>& t, Var self) {
            auto& g = t.adj(self);
            const auto& X = t.value(x);
            const auto& Kg = t.value(K);
            auto& dx = t.adj(x);
            auto& dK = t.adj(K);
            for (int o = 0; o < O; ++o) {
                const T* gplane = g.data() + static_cast<size_t>(o) * Ho * Wo;
                for (int c = 0; c < C; ++c) {
                    const T* xplane = X.data.data() + static_cast<size_t>(c) * H * W;
                    T* dxplane = dx.data() + static_cast<size_t>(c) * H * W;
                    for (int ky = 0; ky < 3; ++ky) {
                        int oy_lo, oy_hi;
                        detail::conv_tap_range(H, Ho, ky, stride, &oy_lo, &oy_hi);
                        for (int kx = 0; kx < 3; ++kx) {
                            const T w = Kg.at(o, c, ky, kx);
                            int ox_lo, ox_hi;
                            detail::conv_tap_range(W, Wo, kx, stride, &ox_lo, &ox_hi);
                            const int span = ox_hi - ox_lo;
                            if (span <= 0) continue;
                            T lanes[8] = {};
                            double tail = 0.0;
                            for (int oy = oy_lo; oy < oy_hi; ++oy) {
                                const size_t irow = static_cast<size_t>(oy * stride + ky - 1);
                                const int ix0 = ox_lo * stride + kx - 1;
                                const T* grow = gplane + static_cast<size_t>(oy) * Wo + ox_lo;
                                const T* xrow = xplane + irow * W + ix0;
                                T* dxrow = dxplane + irow * W + ix0;
                                if (stride == 1) {
                                    if (w != T(0))
                                        for (int i = 0; i < span; ++i) dxrow[i] += w * grow[i];
                                    int i = 0;
                                    for (; i + 8 <= span; i += 8)
                                        for (int j = 0; j < 8; ++j)
                                            lanes[j] += grow[i + j] * xrow[i + j];
                                    for (; i < span; ++i)
                                        tail += static_cast<double>(grow[i]) * xrow[i];
                                } else {
                                    if (w != T(0))
                                        for (int i = 0; i < span; ++i) dxrow[2 * i] += w * grow[i];
                                    int i = 0;
                                    for (; i + 8 <= span; i += 8)
                                        for (int j = 0; j < 8; ++j)
                                            lanes[j] += grow[i + j] * xrow[2 * (i + j)];
                                    for (; i < span; ++i)
                                        tail += static_cast<double>(grow[i]) * xrow[2 * i];
                                }
                            }
                            const double s01 = static_cast<double>(lanes[0]) + lanes[1];
                            const double s23 = static_cast<double>(lanes[2]) + lanes[3];
                            const double s45 = static_cast<double>(lanes[4]) + lanes[5];
                            const double s67 = static_cast<double>(lanes[6]) + lanes[7];
                            dK[((static_cast<size_t>(o) * C + c) * 3 + ky) * 3 + kx] +=
                                static_cast<T>((s01 + s23) + (s45 + s67) + tail);
                        }
                    }
                }
            }
            if (b.valid()) {
                auto& db = t.adj(b);
                for (int o = 0; o < O; ++o) {
                    const T* gplane = g.data() + static_cast<size_t>(o) * Ho * Wo;
                    db[o] += static_cast<T>(detail::lane_sum(gplane, Ho * Wo));
                }
            }
        });
}

// Global spatial mean: [C,H,W] -> [C].
template <typename T>
Var mean_pool(Tape<T>& tp, Var x) {
    const auto& X = tp.value(x);
    require(X.rank() == 3, "mean_pool expects [C,H,W]");
    const int C = X.shape[0];
    const size_t plane = static_cast<size_t>(X.shape[1]) * X.shape[2];
    BasicGrid<T> out({C});
    for (int c = 0; c < C; ++c) {
        const T* p = X.data.data() + c * plane;
        double acc = 0.0;
        for (size_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
        out.data[c] = static_cast<T>(acc / static_cast<double>(plane));
    }
    return tp.make_node(std::move(out), {x}, [x, C, plane](Tape<T>& t, Var self) {
        auto& g = t.adj(self);
        auto& dx = t.adj(x);
        for (int c = 0; c < C; ++c) {
            const T gc = static_cast<T>(static_cast<double>(g[c]) / static_cast<double>(plane));
            T* p = dx.data() + c * plane;
            for (size_t i = 0; i < plane; ++i) p[i] += gc;
        }
    });
}

// Window-averaging downsample: [C,H,W] -> [C,H/k,W/k]; k must divide H and W.
template <typename T>
Var avg_pool2d(Tape<T>& tp, Var x, int k) {
    const auto& X = tp.value(x);
    require(X.rank() == 3, "avg_pool2d expects [C,H,W]");
    const int C = X.shape[0], H = X.shape[1], W = X.shape[2];
    require(k > 0 && H % k == 0 && W % k == 0, "avg_pool2d: window must divide dims");
    const int Ho = H / k, Wo = W / k;
    const double inv = 1.0 / (static_cast<double>(k) * k);
    BasicGrid<T> out({C, Ho, Wo});
    for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                double acc = 0.0;
                for (int dy = 0; dy < k; ++dy)
                    for (int dx2 = 0; dx2 < k; ++dx2)
                        acc += static_cast<double>(X.at(c, oy * k + dy, ox * k + dx2));
                out.at(c, oy, ox) = static_cast<T>(acc * inv);
            }
    return tp.make_node(std::move(out), {x}, [x, C, Ho, Wo, k, inv](Tape<T>& t, Var self) {
        auto& g = t.adj(self);
        auto& dx = t.adj(x);
        const auto& X = t.value(x);
        const int W = X.shape[2];
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    const T gv = static_cast<T>(
                        static_cast<double>(g[(static_cast<size_t>(c) * Ho + oy) * Wo + ox]) *
                        inv);
                    for (int dy = 0; dy < k; ++dy) {
                        T* row = dx.data() + (static_cast<size_t>(c) * X.shape[1] + oy * k + dy) *
                                                 W +
                                 static_cast<size_t>(ox) * k;
                        for (int dx2 = 0; dx2 < k; ++dx2) row[dx2] += gv;
                    }
                }
    });
}

// ---------------------------------------------------------------------------
// Normalization and softmax family
// ---------------------------------------------------------------------------

constexpr int kAxisAll = -1;

namespace detail {

// Iterates slices for a softmax-like op along `axis`; axis == kAxisAll treats
// the whole tensor as one slice.
template <typename T, typename F>
void for_each_slice(const BasicGrid<T>& g, int axis, F&& fn) {
    if (axis == kAxisAll) {
        fn(0, 1, g.numel());
        return;
    }
    require(axis >= 0 && axis < g.rank(), "bad softmax axis");
    size_t outer = 1, inner = 1;
    const size_t n = static_cast<size_t>(g.shape[axis]);
    for (int d = 0; d < axis; ++d) outer *= static_cast<size_t>(g.shape[d]);
    for (int d = axis + 1; d < g.rank(); ++d) inner *= static_cast<size_t>(g.shape[d]);
    for (size_t o = 0; o < outer; ++o)
        for (size_t i = 0; i < inner; ++i) fn(o * n * inner + i, inner, n);
}

}  // namespace detail

template <typename T>
Var softmax(Tape<T>& tp, Var x, int axis = kAxisAll) {
    const auto& X = tp.value(x);
    BasicGrid<T> out(X.shape);
    detail::for_each_slice(X, axis, [&](size_t base, size_t strd, size_t n) {
        double m = -1e300;
        for (size_t i = 0; i < n; ++i) m = std::max(m, static_cast<double>(X.data[base + i * strd]));
        double sum = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double e = std::exp(static_cast<double>(X.data[base + i * strd]) - m);
            out.data[base + i * strd] = static_cast<T>(e);
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (size_t i = 0; i < n; ++i)
            out.data[base + i * strd] = static_cast<T>(out.data[base + i * strd] * inv);
    });
    return tp.make_node(std::move(out), {x}, [x, axis](Tape<T>& t, Var self) {
        auto& g = t.adj(self);
        const auto& Y = t.value(self);
        auto& dx = t.adj(x);
        detail::for_each_slice(Y, axis, [&](size_t base, size_t strd, size_t n) {
            double dot = 0.0;
            for (size_t i = 0; i < n; ++i)
                dot += static_cast<double>(g[base + i * strd]) * Y.data[base + i * strd];
            for (size_t i = 0; i < n; ++i) {
                const size_t k = base + i * strd;
                dx[k] += static_cast<T>(Y.data[k] * (static_cast<double>(g[k]) - dot));
            }
        });
    });
}

// Numerically stable log-softmax over the whole tensor.
template <typename T>
Var log_softmax(Tape<T>& tp, Var x) {
    const auto& X = tp.value(x);
    BasicGrid<T> out(X.shape);
    double m = -1e300;
    for (T v : X.data) m = std::max(m, static_cast<double>(v));
    double sum = 0.0;
    for (T v : X.data) sum += std::exp(static_cast<double>(v) - m);
    const double lse = m + std::log(sum);
    for (size_t i = 0; i < X.data.size(); ++i)
        out.data[i] = static_cast<T>(static_cast<double>(X.data[i]) - lse);
    return tp.make_node(std::move(out), {x}, [x](Tape<T>& t, Var self) {
        auto& g = t.adj(self);
        const auto& Y = t.value(self);
        auto& dx = t.adj(x);
        double gsum = 0.0;
        for (T v : g) gsum += static_cast<double>(v);
        for (size_t i = 0; i < g.size(); ++i)
            dx[i] += static_cast<T>(static_cast<double>(g[i]) -
                                    gsum * std::exp(static_cast<double>(Y.data[i])));
    });
}

// Affine-free layer norm. Matrices normalize per row; other ranks normalize
// over the whole tensor. eps 1e-5, biased variance.
template <typename T>
Var layer_norm(Tape<T>& tp, Var x) {
    const auto& X = tp.value(x);
    const bool rowwise = X.rank() == 2;
    const size_t rows = rowwise ? static_cast<size_t>(X.shape[0]) : 1;
    const size_t n = X.numel() / rows;
    constexpr double eps = 1e-5;
    BasicGrid<T> out(X.shape);
    std::vector<double> inv_sd(rows);
    for (size_t r = 0; r < rows; ++r) {
        const T* xr = X.data.data() + r * n;
        double mean = 0.0;
        for (size_t i = 0; i < n; ++i) mean += static_cast<double>(xr[i]);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double d = static_cast<double>(xr[i]) - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        inv_sd[r] = 1.0 / std::sqrt(var + eps);
        T* yr = out.data.data() + r * n;
        for (size_t i = 0; i < n; ++i)
            yr[i] = static_cast<T>((static_cast<double>(xr[i]) - mean) * inv_sd[r]);
    }
    return tp.make_node(std::move(out), {x}, [x, rows, n, inv_sd](Tape<T>& t, Var self) {
        auto& g = t.adj(self);
        const auto& Y = t.value(self);
        auto& dx = t.adj(x);
        for (size_t r = 0; r < rows; ++r) {
            const T* gr = g.data() + r * n;
            const T* yr = Y.data.data() + r * n;
            T* dxr = dx.data() + r * n;
            double gmean = 0.0, gydot = 0.0;
            for (size_t i = 0; i < n; ++i) {
                gmean += static_cast<double>(gr[i]);
                gydot += static_cast<double>(gr[i]) * yr[i];
            }
            gmean /= static_cast<double>(n);
            gydot /= static_cast<double>(n);
            for (size_t i = 0; i < n; ++i)
                dxr[i] += static_cast<T>(
                    inv_sd[r] * (static_cast<double>(gr[i]) - gmean - yr[i] * gydot));
        }
    });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Mean absolute difference. Gradient of |.| at 0 is taken as 0.
template <typename T>
Var l1_loss(Tape<T>& tp, Var pred, Var target) {
    const auto& P = tp.value(pred);
    const auto& Q = tp.value(target);
    check_same_shape(P, Q, "l1_loss");
    double acc = 0.0;
    for (size_t i = 0; i < P.data.size(); ++i)
        acc += std::abs(static_cast<double>(P.data[i]) - Q.data[i]);
    const size_t n = P.data.size();
    BasicGrid<T> out({1});
    out.data[0] = static_cast<T>(acc / static_cast<double>(n));
    return tp.make_node(std::move(out), {pred, target}, [pred, target, n](Tape<T>& t, Var self) {
        const T g = static_cast<T>(static_cast<double>(t.adj(self)[0]) / static_cast<double>(n));
        const auto& P = t.value(pred);
        const auto& Q = t.value(target);
        auto& dp = t.adj(pred);
        auto& dq = t.adj(target);
        for (size_t i = 0; i < P.data.size(); ++i) {
            double d = static_cast<double>(P.data[i]) - Q.data[i];
            T s = d > 0 ? g : (d < 0 ? static_cast<T>(-g) : T(0));
            dp[i] += s;
            dq[i] -= s;
        }
    });
}

// Sum over elements of the stabilized binary cross-entropy with logits:
// max(z,0) - z*y + log(1 + exp(-|z|)). Labels are typically a constant leaf.
template <typename T>
Var bce_with_logits(Tape<T>& tp, Var logits, Var labels) {
    const auto& Z = tp.value(logits);
    const auto& Y = tp.value(labels);
    check_same_shape(Z, Y, "bce_with_logits");
    double acc = 0.0;
    for (size_t i = 0; i < Z.data.size(); ++i) {
        const double z = static_cast<double>(Z.data[i]);
        const double y = static_cast<double>(Y.data[i]);
        acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    BasicGrid<T> out({1});
    out.data[0] = static_cast<T>(acc);
    return tp.make_node(std::move(out), {logits, labels}, [logits, labels](Tape<T>& t, Var self) {
        const double g = static_cast<double>(t.adj(self)[0]);
        const auto& Z = t.value(logits);
        const auto& Y = t.value(labels);
        auto& dz = t.adj(logits);
        auto& dy = t.adj(labels);
        for (size_t i = 0; i < Z.data.size(); ++i) {
            const double z = static_cast<double>(Z.data[i]);
            const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                                      : std::exp(z) / (1.0 + std::exp(z));
            dz[i] += static_cast<T>(g * (sig - Y.data[i]));
            dy[i] += static_cast<T>(-g * z);
        }
    });
}

// -sum_i q_i * logsoftmax(s)_i against a fixed target distribution q.
template <typename T>
Var nll_from_logscores(Tape<T>& tp, Var logscores, Var target_dist) {
    const auto& S = tp.value(logscores);
    const auto& Q = tp.value(target_dist);
    check_same_shape(S, Q, "nll_from_logscores");
    double m = -1e300;
    for (T v : S.data) m = std::max(m, static_cast<double>(v));
    double sum = 0.0;
    for (T v : S.data) sum += std::exp(static_cast<double>(v) - m);
    const double lse = m + std::log(sum);
    double qsum = 0.0, qdot = 0.0;
    for (size_t i = 0; i < S.data.size(); ++i) {
        qsum += static_cast<double>(Q.data[i]);
        qdot += static_cast<double>(Q.data[i]) * S.data[i];
    }
    BasicGrid<T> out({1});
    out.data[0] = static_cast<T>(qsum * lse - qdot);
    return tp.make_node(
        std::move(out), {logscores, target_dist},
        [logscores, target_dist, lse, qsum](Tape<T>& t, Var self) {
            const double g = static_cast<double>(t.adj(self)[0]);
            const auto& S = t.value(logscores);
            const auto& Q = t.value(target_dist);
            auto& ds = t.adj(logscores);
            auto& dq = t.adj(target_dist);
            for (size_t i = 0; i < S.data.size(); ++i) {
                const double p = std::exp(static_cast<double>(S.data[i]) - lse);
                ds[i] += static_cast<T>(g * (qsum * p - Q.data[i]));
                dq[i] += static_cast<T>(g * (lse - S.data[i]));
            }
        });
}

// Convenience form: eps-smoothed one-hot target over the flattened tensor.
template <typename T>
Var nll_from_logscores(Tape<T>& tp, Var logscores, size_t target_index, double smoothing) {
    const auto& S = tp.value(logscores);
    require(smoothing >= 0.0 && smoothing < 0.5, "nll: smoothing must be in [0, 0.5)");
    if (target_index >= S.numel()) throw numeric_error("nll: target index out of range");
    BasicGrid<T> q(S.shape, static_cast<T>(smoothing / static_cast<double>(S.numel())));
    q.data[target_index] += static_cast<T>(1.0 - smoothing);
    return nll_from_logscores(tp, logscores, tp.leaf(std::move(q)));
}

}  // namespace trajden
