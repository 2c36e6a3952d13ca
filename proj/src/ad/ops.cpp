#include "eitphys/ad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "eitphys/parallel.hpp"

namespace eitphys::ad {

namespace {

template <typename T>
bool track(Tape<T>* tape, std::initializer_list<const TensorPtr<T>*> ins) {
    if (!tape) return false;
    for (const auto* p : ins) {
        if (*p && (*p)->requires_grad) return true;
    }
    return false;
}

template <typename T>
void check_same_shape(const char* op, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->shape == b->shape) return;
    for (size_t i = 0; i < std::max(a->rank(), b->rank()); ++i) {
        if (a->dim(i) != b->dim(i)) {
            throw ShapeError(std::string(op) + ": shapes " + a->shape_str() + " vs " +
                             b->shape_str() + " differ at axis " + std::to_string(i));
        }
    }
    throw ShapeError(std::string(op) + ": rank mismatch " + a->shape_str() + " vs " +
                     b->shape_str());
}

// Dot product via independent lane accumulators: the fixed-trip inner loop
// vectorizes without float reassociation, and the summation order is fixed,
// so results stay bit-deterministic.
template <typename T>
T dot_lanes(const T* a, const T* b, int64_t n) {
    constexpr int kLanes = 16;
    T acc[kLanes] = {};
    int64_t k = 0;
    for (; k + kLanes <= n; k += kLanes) {
        for (int l = 0; l < kLanes; ++l) acc[l] += a[k + l] * b[k + l];
    }
    T tail = T(0);
    for (; k < n; ++k) tail += a[k] * b[k];
    T total = tail;
    for (int l = 0; l < kLanes; ++l) total += acc[l];
    return total;
}

// out[m, n_chunk] = bias[n] + sum_k a[m,k] * w[n,k], parallel over n.
template <typename T>
void matmul_nt_bias(const T* a, const T* w, const T* bias, T* out, int64_t m_rows, int64_t k_dim,
                    int64_t n_cols) {
    parallel_for(n_cols, [&](int64_t n0, int64_t n1) {
        for (int64_t m = 0; m < m_rows; ++m) {
            const T* arow = a + m * k_dim;
            T* orow = out + m * n_cols;
            for (int64_t n = n0; n < n1; ++n) {
                orow[n] = (bias ? bias[n] : T(0)) + dot_lanes(arow, w + n * k_dim, k_dim);
            }
        }
    });
}

// dx[m,k] += sum_n dy[m,n] * w[n,k], parallel over m.
template <typename T>
void matmul_nn_acc(const T* dy, const T* w, T* dx, int64_t m_rows, int64_t k_dim, int64_t n_cols) {
    parallel_for(m_rows, [&](int64_t m0, int64_t m1) {
        for (int64_t m = m0; m < m1; ++m) {
            const T* dyrow = dy + m * n_cols;
            T* dxrow = dx + m * k_dim;
            for (int64_t n = 0; n < n_cols; ++n) {
                const T g = dyrow[n];
                if (g == T(0)) continue;
                const T* wrow = w + n * k_dim;
                for (int64_t k = 0; k < k_dim; ++k) dxrow[k] += g * wrow[k];
            }
        }
    });
}

// dw[n,k] += sum_m dy[m,n] * x[m,k], parallel over n.
template <typename T>
void matmul_tn_acc(const T* dy, const T* x, T* dw, int64_t m_rows, int64_t k_dim, int64_t n_cols) {
    parallel_for(n_cols, [&](int64_t n0, int64_t n1) {
        for (int64_t n = n0; n < n1; ++n) {
            T* dwrow = dw + n * k_dim;
            for (int64_t m = 0; m < m_rows; ++m) {
                const T g = dy[m * n_cols + n];
                if (g == T(0)) continue;
                const T* xrow = x + m * k_dim;
                for (int64_t k = 0; k < k_dim; ++k) dwrow[k] += g * xrow[k];
            }
        }
    });
}

template <typename T>
T sigmoid(T v) {
    return T(1) / (T(1) + std::exp(-v));
}

template <typename T>
void axpy(T* dst, const T* src, T a, int64_t n) {
    for (int64_t i = 0; i < n; ++i) dst[i] += a * src[i];
}

// Scratch for the im2row matrix, reused across conv calls on this thread.
template <typename T>
std::vector<T>& conv_scratch() {
    thread_local std::vector<T> buf;
    return buf;
}

struct ConvGeom {
    int64_t batch, cin, h, w, cout, k, s, p, oh, ow;
    int64_t plane() const { return oh * ow; }
    int64_t patch() const { return cin * k * k; }
};

// Patch matrix for a chunk of frames: row m = (frame * oh + r) * ow + c,
// column j = (ic * k + kh) * k + kw, zero outside the input. Column order
// matches the row-major weight layout [cout, cin, k, k].
template <typename T>
void build_im2row(const T* x, int64_t b0, int64_t bc, const ConvGeom& g, T* col) {
    parallel_for(bc, [&](int64_t f0, int64_t f1) {
        for (int64_t f = f0; f < f1; ++f) {
            const T* xframe = x + (b0 + f) * g.cin * g.h * g.w;
            T* base = col + f * g.plane() * g.patch();
            for (int64_t r = 0; r < g.oh; ++r) {
                for (int64_t c = 0; c < g.ow; ++c) {
                    T* crow = base + (r * g.ow + c) * g.patch();
                    int64_t j = 0;
                    for (int64_t ic = 0; ic < g.cin; ++ic) {
                        const T* xplane = xframe + ic * g.h * g.w;
                        for (int64_t kh = 0; kh < g.k; ++kh) {
                            const int64_t ih = r * g.s - g.p + kh;
                            if (ih < 0 || ih >= g.h) {
                                for (int64_t kw = 0; kw < g.k; ++kw) crow[j++] = T(0);
                                continue;
                            }
                            const T* xrow = xplane + ih * g.w;
                            for (int64_t kw = 0; kw < g.k; ++kw) {
                                const int64_t iw = c * g.s - g.p + kw;
                                crow[j++] = (iw >= 0 && iw < g.w) ? xrow[iw] : T(0);
                            }
                        }
                    }
                }
            }
        }
    });
}

inline int64_t conv_chunk_frames(const ConvGeom& g) {
    const int64_t per_frame = g.plane() * g.patch();
    return std::clamp<int64_t>(1000000 / std::max<int64_t>(1, per_frame), 1, g.batch);
}

// Wide planes keep the direct row kernels (long unit-stride rows vectorize
// on their own and skip the patch-matrix build); narrow planes go through
// im2row so every inner loop runs over a whole patch.
inline bool conv_use_direct(const ConvGeom& g) { return g.ow >= 32 && g.s == 1; }

// Lane-accumulated sum and sum-of-squares in double.
template <typename T>
void sum_sumsq_lanes(const T* x, int64_t n, double& sum_out, double& sq_out) {
    constexpr int kLanes = 8;
    double s[kLanes] = {}, q[kLanes] = {};
    int64_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        for (int l = 0; l < kLanes; ++l) {
            const double v = static_cast<double>(x[i + l]);
            s[l] += v;
            q[l] += v * v;
        }
    }
    double st = 0.0, qt = 0.0;
    for (; i < n; ++i) {
        const double v = static_cast<double>(x[i]);
        st += v;
        qt += v * v;
    }
    for (int l = 0; l < kLanes; ++l) {
        st += s[l];
        qt += q[l];
    }
    sum_out += st;
    sq_out += qt;
}

}  // namespace

template <typename T>
TensorPtr<T> conv2d(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& w,
                    const TensorPtr<T>& b, int stride, int padding) {
    if (x->rank() != 4) throw ShapeError("conv2d: input must be [B,C,H,W], got " + x->shape_str());
    if (w->rank() != 4) {
        throw ShapeError("conv2d: weight must be [Cout,Cin,k,k], got " + w->shape_str());
    }
    if (w->dim(2) != w->dim(3)) {
        throw ShapeError("conv2d: kernel must be square, got " + w->shape_str() +
                         " (axes 2 and 3 differ)");
    }
    if (stride < 1 || padding < 0 || w->dim(2) < 1) {
        throw ShapeError("conv2d: need k >= 1, stride >= 1, padding >= 0");
    }
    if (x->dim(1) != w->dim(1)) {
        throw ShapeError("conv2d: input channels (input axis 1: " + std::to_string(x->dim(1)) +
                         ") != weight in-channels (weight axis 1: " + std::to_string(w->dim(1)) +
                         ")");
    }
    if (b->rank() != 1 || b->dim(0) != w->dim(0)) {
        throw ShapeError("conv2d: bias axis 0 (" + std::to_string(b->dim(0)) +
                         ") != weight out-channels (weight axis 0: " + std::to_string(w->dim(0)) +
                         ")");
    }
    const int64_t batch = x->dim(0), cin = x->dim(1), h = x->dim(2), wdt = x->dim(3);
    const int64_t cout = w->dim(0), k = w->dim(2);
    const int64_t s = stride, p = padding;
    const int64_t h_span = h + 2 * p - k;
    const int64_t w_span = wdt + 2 * p - k;
    if (h_span < 0 || w_span < 0 || h_span % s != 0 || w_span % s != 0) {
        throw ShapeError("conv2d: (H + 2*padding - k)/stride + 1 is not a positive integer for "
                         "input axes 2,3 of " +
                         x->shape_str() + " with k=" + std::to_string(k) +
                         " stride=" + std::to_string(s) + " padding=" + std::to_string(p));
    }
    const int64_t oh = h_span / s + 1;
    const int64_t ow = w_span / s + 1;

    auto out = make_tensor<T>({batch, cout, oh, ow});
    const T* xd = x->data();
    const T* wd = w->data();
    const T* bd = b->data();
    T* od = out->data();

    const ConvGeom geom{batch, cin, h, wdt, cout, k, s, p, oh, ow};
    const int64_t plane = geom.plane(), patch = geom.patch();
    if (conv_use_direct(geom)) {
        parallel_for(batch * cout, [&](int64_t i0, int64_t i1) {
            for (int64_t i = i0; i < i1; ++i) {
                const int64_t bi = i / cout, oc = i % cout;
                T* oplane = od + (bi * cout + oc) * plane;
                std::fill(oplane, oplane + plane, bd[oc]);
                for (int64_t ic = 0; ic < cin; ++ic) {
                    const T* xplane = xd + (bi * cin + ic) * h * wdt;
                    const T* wbase = wd + (oc * cin + ic) * k * k;
                    for (int64_t kh = 0; kh < k; ++kh) {
                        for (int64_t kw = 0; kw < k; ++kw) {
                            const T wv = wbase[kh * k + kw];
                            const int64_t off_w = kw - p;
                            const int64_t lo = std::max<int64_t>(0, -off_w);
                            const int64_t hi = std::min(ow - 1, wdt - 1 - off_w);
                            for (int64_t r = 0; r < oh; ++r) {
                                const int64_t ih = r - p + kh;
                                if (ih < 0 || ih >= h) continue;
                                const T* xrow = xplane + ih * wdt + off_w;
                                T* orow = oplane + r * ow;
                                for (int64_t c = lo; c <= hi; ++c) orow[c] += wv * xrow[c];
                            }
                        }
                    }
                }
            }
        });
    } else {
        const int64_t chunk = conv_chunk_frames(geom);
        auto& col = conv_scratch<T>();
        col.resize(static_cast<size_t>(chunk * plane * patch));
        for (int64_t b0 = 0; b0 < batch; b0 += chunk) {
            const int64_t bc = std::min(chunk, batch - b0);
            build_im2row(xd, b0, bc, geom, col.data());
            parallel_for(bc * plane, [&](int64_t m0, int64_t m1) {
                for (int64_t m = m0; m < m1; ++m) {
                    const T* crow = col.data() + m * patch;
                    const int64_t bi = b0 + m / plane, px = m % plane;
                    for (int64_t oc = 0; oc < cout; ++oc) {
                        od[(bi * cout + oc) * plane + px] =
                            bd[oc] + dot_lanes(crow, wd + oc * patch, patch);
                    }
                }
            });
        }
    }

    if (track(tape, {&x, &w, &b})) {
        out->requires_grad = true;
        tape->record("conv2d", out, [x, w, b, out, geom]() {
            if (out->grad.empty()) return;
            const T* dy = out->grad.data();
            const T* xd = x->data();
            const T* wd = w->data();
            const int64_t plane = geom.plane(), patch = geom.patch();

            if (b->requires_grad) {
                b->ensure_grad();
                T* db = b->grad.data();
                for (int64_t oc = 0; oc < geom.cout; ++oc) {
                    double acc = 0.0;
                    for (int64_t bi = 0; bi < geom.batch; ++bi) {
                        double dummy = 0.0;
                        sum_sumsq_lanes(dy + (bi * geom.cout + oc) * plane, plane, acc, dummy);
                    }
                    db[oc] += static_cast<T>(acc);
                }
            }
            if (!w->requires_grad && !x->requires_grad) return;

            if (w->requires_grad) w->ensure_grad();
            if (x->requires_grad) x->ensure_grad();
            T* dw = w->requires_grad ? w->grad.data() : nullptr;
            T* dx = x->requires_grad ? x->grad.data() : nullptr;

            if (conv_use_direct(geom)) {
                if (dw) {
                    parallel_for(geom.cout, [&](int64_t c0, int64_t c1) {
                        for (int64_t oc = c0; oc < c1; ++oc) {
                            for (int64_t ic = 0; ic < geom.cin; ++ic) {
                                T* dwbase = dw + (oc * geom.cin + ic) * geom.k * geom.k;
                                for (int64_t kh = 0; kh < geom.k; ++kh) {
                                    for (int64_t kw = 0; kw < geom.k; ++kw) {
                                        const int64_t off_w = kw - geom.p;
                                        const int64_t lo = std::max<int64_t>(0, -off_w);
                                        const int64_t hi =
                                            std::min(geom.ow - 1, geom.w - 1 - off_w);
                                        T acc = T(0);
                                        for (int64_t bi = 0; bi < geom.batch; ++bi) {
                                            const T* dyplane =
                                                dy + (bi * geom.cout + oc) * plane;
                                            const T* xplane =
                                                xd + (bi * geom.cin + ic) * geom.h * geom.w;
                                            for (int64_t r = 0; r < geom.oh; ++r) {
                                                const int64_t ih = r - geom.p + kh;
                                                if (ih < 0 || ih >= geom.h) continue;
                                                acc += dot_lanes(dyplane + r * geom.ow + lo,
                                                                 xplane + ih * geom.w + off_w + lo,
                                                                 hi - lo + 1);
                                            }
                                        }
                                        dwbase[kh * geom.k + kw] += acc;
                                    }
                                }
                            }
                        }
                    });
                }
                if (dx) {
                    parallel_for(geom.batch, [&](int64_t f0, int64_t f1) {
                        for (int64_t bi = f0; bi < f1; ++bi) {
                            for (int64_t oc = 0; oc < geom.cout; ++oc) {
                                const T* dyplane = dy + (bi * geom.cout + oc) * plane;
                                for (int64_t ic = 0; ic < geom.cin; ++ic) {
                                    T* dxplane = dx + (bi * geom.cin + ic) * geom.h * geom.w;
                                    const T* wbase = wd + (oc * geom.cin + ic) * geom.k * geom.k;
                                    for (int64_t kh = 0; kh < geom.k; ++kh) {
                                        for (int64_t kw = 0; kw < geom.k; ++kw) {
                                            const T wv = wbase[kh * geom.k + kw];
                                            if (wv == T(0)) continue;
                                            const int64_t off_w = kw - geom.p;
                                            const int64_t lo = std::max<int64_t>(0, -off_w);
                                            const int64_t hi =
                                                std::min(geom.ow - 1, geom.w - 1 - off_w);
                                            for (int64_t r = 0; r < geom.oh; ++r) {
                                                const int64_t ih = r - geom.p + kh;
                                                if (ih < 0 || ih >= geom.h) continue;
                                                axpy(dxplane + ih * geom.w + off_w + lo,
                                                     dyplane + r * geom.ow + lo, wv, hi - lo + 1);
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
                return;
            }

            const int64_t chunk = conv_chunk_frames(geom);
            auto& col = conv_scratch<T>();
            col.resize(static_cast<size_t>(chunk * plane * patch));
            for (int64_t b0 = 0; b0 < geom.batch; b0 += chunk) {
                const int64_t bc = std::min(chunk, geom.batch - b0);
                if (dw) build_im2row(xd, b0, bc, geom, col.data());
                if (dw) {
                    parallel_for(geom.cout, [&](int64_t c0, int64_t c1) {
                        for (int64_t oc = c0; oc < c1; ++oc) {
                            T* dwrow = dw + oc * patch;
                            for (int64_t f = 0; f < bc; ++f) {
                                const T* dyplane = dy + ((b0 + f) * geom.cout + oc) * plane;
                                const T* cbase = col.data() + f * plane * patch;
                                for (int64_t px = 0; px < plane; ++px) {
                                    const T g = dyplane[px];
                                    if (g != T(0)) axpy(dwrow, cbase + px * patch, g, patch);
                                }
                            }
                        }
                    });
                }
                if (dx) {
                    // whole frames per worker: receptive fields overlap within
                    // a frame, never across frames
                    parallel_for(bc, [&](int64_t f0, int64_t f1) {
                        std::vector<T> dcol(static_cast<size_t>(patch));
                        for (int64_t f = f0; f < f1; ++f) {
                            const int64_t bi = b0 + f;
                            T* dxframe = dx + bi * geom.cin * geom.h * geom.w;
                            for (int64_t px = 0; px < plane; ++px) {
                                bool any = false;
                                for (int64_t oc = 0; oc < geom.cout; ++oc) {
                                    const T g = dy[(bi * geom.cout + oc) * plane + px];
                                    if (g == T(0)) continue;
                                    if (!any) std::fill(dcol.begin(), dcol.end(), T(0));
                                    axpy(dcol.data(), wd + oc * patch, g, patch);
                                    any = true;
                                }
                                if (!any) continue;
                                const int64_t r = px / geom.ow, c = px % geom.ow;
                                int64_t j = 0;
                                for (int64_t ic = 0; ic < geom.cin; ++ic) {
                                    T* dxplane = dxframe + ic * geom.h * geom.w;
                                    for (int64_t kh = 0; kh < geom.k; ++kh) {
                                        const int64_t ih = r * geom.s - geom.p + kh;
                                        if (ih < 0 || ih >= geom.h) {
                                            j += geom.k;
                                            continue;
                                        }
                                        T* dxrow = dxplane + ih * geom.w;
                                        for (int64_t kw = 0; kw < geom.k; ++kw, ++j) {
                                            const int64_t iw = c * geom.s - geom.p + kw;
                                            if (iw >= 0 && iw < geom.w) dxrow[iw] += dcol[j];
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> linear(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& w,
                    const TensorPtr<T>& b) {
    if (w->rank() != 2) throw ShapeError("linear: weight must be [N,K], got " + w->shape_str());
    if (x->rank() < 1) throw ShapeError("linear: input must have rank >= 1");
    const int64_t k_dim = x->shape.back();
    const int64_t n_cols = w->dim(0);
    if (k_dim != w->dim(1)) {
        throw ShapeError("linear: input last axis (" + std::to_string(k_dim) +
                         ") != weight axis 1 (" + std::to_string(w->dim(1)) + ")");
    }
    if (b && (b->rank() != 1 || b->dim(0) != n_cols)) {
        throw ShapeError("linear: bias axis 0 (" + std::to_string(b->dim(0)) +
                         ") != weight axis 0 (" + std::to_string(n_cols) + ")");
    }
    const int64_t m_rows = x->numel() / k_dim;
    std::vector<int64_t> out_shape = x->shape;
    out_shape.back() = n_cols;
    auto out = make_tensor<T>(std::move(out_shape));
    matmul_nt_bias(x->data(), w->data(), b ? b->data() : nullptr, out->data(), m_rows, k_dim,
                   n_cols);

    if (track(tape, {&x, &w, &b})) {
        out->requires_grad = true;
        tape->record("linear", out, [x, w, b, out, m_rows, k_dim, n_cols]() {
            if (out->grad.empty()) return;
            const T* dy = out->grad.data();
            if (b && b->requires_grad) {
                b->ensure_grad();
                T* db = b->grad.data();
                for (int64_t m = 0; m < m_rows; ++m) {
                    const T* dyrow = dy + m * n_cols;
                    for (int64_t n = 0; n < n_cols; ++n) db[n] += dyrow[n];
                }
            }
            if (w->requires_grad) {
                w->ensure_grad();
                matmul_tn_acc(dy, x->data(), w->grad.data(), m_rows, k_dim, n_cols);
            }
            if (x->requires_grad) {
                x->ensure_grad();
                matmul_nn_acc(dy, w->data(), x->grad.data(), m_rows, k_dim, n_cols);
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> relu(Tape<T>* tape, const TensorPtr<T>& x) {
    auto out = make_tensor<T>(x->shape);
    const int64_t n = x->numel();
    const T* xd = x->data();
    T* od = out->data();
    parallel_for(n, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) od[i] = xd[i] > T(0) ? xd[i] : T(0);
    });
    if (track(tape, {&x})) {
        out->requires_grad = true;
        tape->record("relu", out, [x, out]() {
            if (out->grad.empty()) return;
            x->ensure_grad();
            const T* dy = out->grad.data();
            const T* od = out->data();
            T* dx = x->grad.data();
            const int64_t n = out->numel();
            parallel_for(n, [&](int64_t i0, int64_t i1) {
                for (int64_t i = i0; i < i1; ++i) {
                    if (od[i] > T(0)) dx[i] += dy[i];
                }
            });
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> add(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    check_same_shape("add", a, b);
    auto out = make_tensor<T>(a->shape);
    const int64_t n = a->numel();
    const T* ad = a->data();
    const T* bd = b->data();
    T* od = out->data();
    parallel_for(n, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) od[i] = ad[i] + bd[i];
    });
    if (track(tape, {&a, &b})) {
        out->requires_grad = true;
        tape->record("add", out, [a, b, out]() {
            if (out->grad.empty()) return;
            const T* dy = out->grad.data();
            const int64_t n = out->numel();
            for (const auto& in : {a, b}) {
                if (!in->requires_grad) continue;
                in->ensure_grad();
                T* dst = in->grad.data();
                parallel_for(n, [&](int64_t i0, int64_t i1) {
                    for (int64_t i = i0; i < i1; ++i) dst[i] += dy[i];
                });
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> sub(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    check_same_shape("sub", a, b);
    auto out = make_tensor<T>(a->shape);
    const int64_t n = a->numel();
    const T* ad = a->data();
    const T* bd = b->data();
    T* od = out->data();
    for (int64_t i = 0; i < n; ++i) od[i] = ad[i] - bd[i];
    if (track(tape, {&a, &b})) {
        out->requires_grad = true;
        tape->record("sub", out, [a, b, out]() {
            if (out->grad.empty()) return;
            const T* dy = out->grad.data();
            const int64_t n = out->numel();
            if (a->requires_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < n; ++i) a->grad[i] += dy[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < n; ++i) b->grad[i] -= dy[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> abs_val(Tape<T>* tape, const TensorPtr<T>& x) {
    auto out = make_tensor<T>(x->shape);
    const int64_t n = x->numel();
    for (int64_t i = 0; i < n; ++i) out->value[i] = std::abs(x->value[i]);
    if (track(tape, {&x})) {
        out->requires_grad = true;
        tape->record("abs", out, [x, out]() {
            if (out->grad.empty()) return;
            x->ensure_grad();
            const int64_t n = out->numel();
            for (int64_t i = 0; i < n; ++i) {
                const T v = x->value[i];
                if (v > T(0)) {
                    x->grad[i] += out->grad[i];
                } else if (v < T(0)) {
                    x->grad[i] -= out->grad[i];
                }
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> mean_all(Tape<T>* tape, const TensorPtr<T>& x) {
    const int64_t n = x->numel();
    if (n == 0) throw UsageError("mean_all: empty tensor");
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(x->value[i]);
    auto out = from_vector<T>({1}, {static_cast<T>(acc / static_cast<double>(n))});
    if (track(tape, {&x})) {
        out->requires_grad = true;
        tape->record("mean", out, [x, out, n]() {
            if (out->grad.empty()) return;
            x->ensure_grad();
            const T g = out->grad[0] / static_cast<T>(n);
            for (int64_t i = 0; i < n; ++i) x->grad[i] += g;
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> sum_all(Tape<T>* tape, const TensorPtr<T>& x) {
    const int64_t n = x->numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(x->value[i]);
    auto out = from_vector<T>({1}, {static_cast<T>(acc)});
    if (track(tape, {&x})) {
        out->requires_grad = true;
        tape->record("sum", out, [x, out, n]() {
            if (out->grad.empty()) return;
            x->ensure_grad();
            const T g = out->grad[0];
            for (int64_t i = 0; i < n; ++i) x->grad[i] += g;
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> spatial_mean(Tape<T>* tape, const TensorPtr<T>& x) {
    if (x->rank() != 4) {
        throw ShapeError("spatial_mean: input must be [B,C,H,W], got " + x->shape_str());
    }
    const int64_t batch = x->dim(0), ch = x->dim(1), plane = x->dim(2) * x->dim(3);
    auto out = make_tensor<T>({batch, ch});
    const T* xd = x->data();
    for (int64_t i = 0; i < batch * ch; ++i) {
        double acc = 0.0;
        const T* src = xd + i * plane;
        for (int64_t j = 0; j < plane; ++j) acc += static_cast<double>(src[j]);
        out->value[i] = static_cast<T>(acc / static_cast<double>(plane));
    }
    if (track(tape, {&x})) {
        out->requires_grad = true;
        tape->record("spatial_mean", out, [x, out, batch, ch, plane]() {
            if (out->grad.empty()) return;
            x->ensure_grad();
            T* dx = x->grad.data();
            for (int64_t i = 0; i < batch * ch; ++i) {
                const T g = out->grad[i] / static_cast<T>(plane);
                T* dst = dx + i * plane;
                for (int64_t j = 0; j < plane; ++j) dst[j] += g;
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> concat_last(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->rank() != b->rank() || a->rank() < 1) {
        throw ShapeError("concat_last: rank mismatch " + a->shape_str() + " vs " + b->shape_str());
    }
    for (size_t i = 0; i + 1 < a->rank(); ++i) {
        if (a->dim(i) != b->dim(i)) {
            throw ShapeError("concat_last: leading axis " + std::to_string(i) + " differs: " +
                             a->shape_str() + " vs " + b->shape_str());
        }
    }
    const int64_t da = a->shape.back(), db = b->shape.back();
    const int64_t rows = a->numel() / da;
    std::vector<int64_t> out_shape = a->shape;
    out_shape.back() = da + db;
    auto out = make_tensor<T>(std::move(out_shape));
    for (int64_t m = 0; m < rows; ++m) {
        std::copy_n(a->data() + m * da, da, out->data() + m * (da + db));
        std::copy_n(b->data() + m * db, db, out->data() + m * (da + db) + da);
    }
    if (track(tape, {&a, &b})) {
        out->requires_grad = true;
        tape->record("concat", out, [a, b, out, rows, da, db]() {
            if (out->grad.empty()) return;
            const T* dy = out->grad.data();
            if (a->requires_grad) {
                a->ensure_grad();
                for (int64_t m = 0; m < rows; ++m) {
                    const T* src = dy + m * (da + db);
                    T* dst = a->grad.data() + m * da;
                    for (int64_t j = 0; j < da; ++j) dst[j] += src[j];
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int64_t m = 0; m < rows; ++m) {
                    const T* src = dy + m * (da + db) + da;
                    T* dst = b->grad.data() + m * db;
                    for (int64_t j = 0; j < db; ++j) dst[j] += src[j];
                }
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> reshape(Tape<T>* tape, const TensorPtr<T>& x, std::vector<int64_t> shape) {
    if (shape_numel(shape) != x->numel()) {
        throw ShapeError("reshape: cannot view " + x->shape_str() + " as requested shape");
    }
    auto out = std::make_shared<Tensor<T>>();
    out->shape = std::move(shape);
    out->value = x->value;
    if (track(tape, {&x})) {
        out->requires_grad = true;
        tape->record("reshape", out, [x, out]() {
            if (out->grad.empty()) return;
            x->ensure_grad();
            const int64_t n = x->numel();
            T* dst = x->grad.data();
            const T* dy = out->grad.data();
            parallel_for(n, [&](int64_t i0, int64_t i1) {
                for (int64_t i = i0; i < i1; ++i) dst[i] += dy[i];
            });
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> slice_time(Tape<T>* tape, const TensorPtr<T>& x, int64_t t) {
    if (x->rank() != 3) throw ShapeError("slice_time: input must be [B,T,D], got " + x->shape_str());
    const int64_t batch = x->dim(0), len = x->dim(1), d = x->dim(2);
    if (t < 0 || t >= len) {
        throw UsageError("slice_time: t=" + std::to_string(t) + " outside [0," +
                         std::to_string(len) + ")");
    }
    auto out = make_tensor<T>({batch, d});
    for (int64_t bi = 0; bi < batch; ++bi) {
        std::copy_n(x->data() + (bi * len + t) * d, d, out->data() + bi * d);
    }
    if (track(tape, {&x})) {
        out->requires_grad = true;
        tape->record("slice_time", out, [x, out, batch, len, d, t]() {
            if (out->grad.empty()) return;
            x->ensure_grad();
            for (int64_t bi = 0; bi < batch; ++bi) {
                const T* src = out->grad.data() + bi * d;
                T* dst = x->grad.data() + (bi * len + t) * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> stack_time(Tape<T>* tape, const std::vector<TensorPtr<T>>& steps) {
    if (steps.empty()) throw UsageError("stack_time: no steps");
    const int64_t batch = steps[0]->dim(0), d = steps[0]->dim(1);
    for (const auto& s : steps) {
        if (s->rank() != 2 || s->dim(0) != batch || s->dim(1) != d) {
            throw ShapeError("stack_time: step shape " + s->shape_str() + " != [" +
                             std::to_string(batch) + "," + std::to_string(d) + "]");
        }
    }
    const int64_t len = static_cast<int64_t>(steps.size());
    auto out = make_tensor<T>({batch, len, d});
    for (int64_t t = 0; t < len; ++t) {
        for (int64_t bi = 0; bi < batch; ++bi) {
            std::copy_n(steps[t]->data() + bi * d, d, out->data() + (bi * len + t) * d);
        }
    }
    bool any = false;
    for (const auto& s : steps) any = any || s->requires_grad;
    if (tape && any) {
        out->requires_grad = true;
        auto captured = steps;
        tape->record("stack_time", out, [captured, out, batch, len, d]() {
            if (out->grad.empty()) return;
            for (int64_t t = 0; t < len; ++t) {
                const auto& s = captured[t];
                if (!s->requires_grad) continue;
                s->ensure_grad();
                for (int64_t bi = 0; bi < batch; ++bi) {
                    const T* src = out->grad.data() + (bi * len + t) * d;
                    T* dst = s->grad.data() + bi * d;
                    for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                }
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> batch_norm2d(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                          const TensorPtr<T>& beta, std::vector<T>& running_mean,
                          std::vector<T>& running_var, bool training, T momentum, T eps) {
    if (x->rank() != 4) {
        throw ShapeError("batch_norm2d: input must be [B,C,H,W], got " + x->shape_str());
    }
    const int64_t batch = x->dim(0), ch = x->dim(1), plane = x->dim(2) * x->dim(3);
    if (gamma->numel() != ch || beta->numel() != ch ||
        static_cast<int64_t>(running_mean.size()) != ch ||
        static_cast<int64_t>(running_var.size()) != ch) {
        throw ShapeError("batch_norm2d: parameter size != channel count " + std::to_string(ch) +
                         " (input axis 1)");
    }
    const int64_t count = batch * plane;
    auto out = make_tensor<T>(x->shape);
    auto mean_c = std::make_shared<std::vector<T>>(ch);
    auto inv_c = std::make_shared<std::vector<T>>(ch);

    const T* xd = x->data();
    T* od = out->data();
    parallel_for(ch, [&](int64_t c0, int64_t c1) {
        for (int64_t c = c0; c < c1; ++c) {
            T mu, inv;
            if (training) {
                double sum = 0.0, sq = 0.0;
                for (int64_t bi = 0; bi < batch; ++bi) {
                    sum_sumsq_lanes(xd + (bi * ch + c) * plane, plane, sum, sq);
                }
                const double m = sum / static_cast<double>(count);
                const double var = std::max(0.0, sq / static_cast<double>(count) - m * m);
                mu = static_cast<T>(m);
                inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
                running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mu;
                running_var[c] = (T(1) - momentum) * running_var[c] + momentum * static_cast<T>(var);
            } else {
                mu = running_mean[c];
                inv = static_cast<T>(
                    1.0 / std::sqrt(static_cast<double>(running_var[c]) + static_cast<double>(eps)));
            }
            (*mean_c)[c] = mu;
            (*inv_c)[c] = inv;
            const T g = gamma->value[c], bshift = beta->value[c];
            for (int64_t bi = 0; bi < batch; ++bi) {
                const T* src = xd + (bi * ch + c) * plane;
                T* dst = od + (bi * ch + c) * plane;
                for (int64_t j = 0; j < plane; ++j) dst[j] = g * (src[j] - mu) * inv + bshift;
            }
        }
    });

    if (track(tape, {&x, &gamma, &beta})) {
        out->requires_grad = true;
        tape->record("batch_norm2d", out,
                     [x, gamma, beta, out, mean_c, inv_c, training, batch, ch, plane]() {
            if (out->grad.empty()) return;
            const int64_t count = batch * plane;
            const T* dy = out->grad.data();
            const T* xd = x->data();
            if (gamma->requires_grad) gamma->ensure_grad();
            if (beta->requires_grad) beta->ensure_grad();
            if (x->requires_grad) x->ensure_grad();
            parallel_for(ch, [&](int64_t c0, int64_t c1) {
                for (int64_t c = c0; c < c1; ++c) {
                    const T mu = (*mean_c)[c], inv = (*inv_c)[c];
                    double dsum = 0.0, dxhat_sum = 0.0;
                    for (int64_t bi = 0; bi < batch; ++bi) {
                        const T* dyr = dy + (bi * ch + c) * plane;
                        const T* xr = xd + (bi * ch + c) * plane;
                        constexpr int kLanes = 8;
                        double s[kLanes] = {}, xs[kLanes] = {};
                        int64_t j = 0;
                        for (; j + kLanes <= plane; j += kLanes) {
                            for (int l = 0; l < kLanes; ++l) {
                                const double g = static_cast<double>(dyr[j + l]);
                                s[l] += g;
                                xs[l] += g * static_cast<double>((xr[j + l] - mu) * inv);
                            }
                        }
                        for (; j < plane; ++j) {
                            const double g = static_cast<double>(dyr[j]);
                            dsum += g;
                            dxhat_sum += g * static_cast<double>((xr[j] - mu) * inv);
                        }
                        for (int l = 0; l < kLanes; ++l) {
                            dsum += s[l];
                            dxhat_sum += xs[l];
                        }
                    }
                    if (beta->requires_grad) beta->grad[c] += static_cast<T>(dsum);
                    if (gamma->requires_grad) gamma->grad[c] += static_cast<T>(dxhat_sum);
                    if (!x->requires_grad) continue;
                    const T g = gamma->value[c];
                    if (training) {
                        const T mean_dy = static_cast<T>(dsum / static_cast<double>(count));
                        const T mean_dyxhat = static_cast<T>(dxhat_sum / static_cast<double>(count));
                        for (int64_t bi = 0; bi < batch; ++bi) {
                            const T* dyr = dy + (bi * ch + c) * plane;
                            const T* xr = xd + (bi * ch + c) * plane;
                            T* dxr = x->grad.data() + (bi * ch + c) * plane;
                            for (int64_t j = 0; j < plane; ++j) {
                                const T xhat = (xr[j] - mu) * inv;
                                dxr[j] += g * inv * (dyr[j] - mean_dy - xhat * mean_dyxhat);
                            }
                        }
                    } else {
                        for (int64_t bi = 0; bi < batch; ++bi) {
                            const T* dyr = dy + (bi * ch + c) * plane;
                            T* dxr = x->grad.data() + (bi * ch + c) * plane;
                            for (int64_t j = 0; j < plane; ++j) dxr[j] += g * inv * dyr[j];
                        }
                    }
                }
            });
        });
    }
    return out;
}

template <typename T>
std::pair<TensorPtr<T>, TensorPtr<T>> lstm_step(Tape<T>* tape, const TensorPtr<T>& x,
                                                const TensorPtr<T>& h_prev,
                                                const TensorPtr<T>& c_prev,
                                                const LstmWeights<T>& w) {
    if (x->rank() != 2 || h_prev->rank() != 2 || c_prev->rank() != 2) {
        throw ShapeError("lstm_step: x, h_prev, c_prev must be rank 2");
    }
    const int64_t batch = x->dim(0), d_in = x->dim(1), hidden = h_prev->dim(1);
    if (h_prev->dim(0) != batch || c_prev->dim(0) != batch) {
        throw ShapeError("lstm_step: batch axis 0 differs between x (" + std::to_string(batch) +
                         ") and state (" + std::to_string(h_prev->dim(0)) + ")");
    }
    if (c_prev->dim(1) != hidden) {
        throw ShapeError("lstm_step: c_prev axis 1 (" + std::to_string(c_prev->dim(1)) +
                         ") != h_prev axis 1 (" + std::to_string(hidden) + ")");
    }
    if (w.wx->rank() != 2 || w.wx->dim(0) != 4 * hidden || w.wx->dim(1) != d_in) {
        throw ShapeError("lstm_step: wx must be [4H,D] = [" + std::to_string(4 * hidden) + "," +
                         std::to_string(d_in) + "], got " + w.wx->shape_str());
    }
    if (w.wh->rank() != 2 || w.wh->dim(0) != 4 * hidden || w.wh->dim(1) != hidden) {
        throw ShapeError("lstm_step: wh must be [4H,H], got " + w.wh->shape_str());
    }
    if (w.bias->numel() != 4 * hidden) {
        throw ShapeError("lstm_step: bias must be [4H], got " + w.bias->shape_str());
    }

    // Pre-activations for all four gates at once: [B, 4H].
    std::vector<T> pre(static_cast<size_t>(batch * 4 * hidden));
    matmul_nt_bias(x->data(), w.wx->data(), w.bias->data(), pre.data(), batch, d_in, 4 * hidden);
    {
        std::vector<T> hpart(static_cast<size_t>(batch * 4 * hidden));
        matmul_nt_bias(h_prev->data(), w.wh->data(), static_cast<const T*>(nullptr), hpart.data(),
                       batch, hidden, 4 * hidden);
        for (size_t i = 0; i < pre.size(); ++i) pre[i] += hpart[i];
    }

    auto h = make_tensor<T>({batch, hidden});
    auto c = make_tensor<T>({batch, hidden});
    auto gi = std::make_shared<std::vector<T>>(static_cast<size_t>(batch * hidden));
    auto gf = std::make_shared<std::vector<T>>(static_cast<size_t>(batch * hidden));
    auto gg = std::make_shared<std::vector<T>>(static_cast<size_t>(batch * hidden));
    auto go = std::make_shared<std::vector<T>>(static_cast<size_t>(batch * hidden));
    auto tanc = std::make_shared<std::vector<T>>(static_cast<size_t>(batch * hidden));

    for (int64_t bi = 0; bi < batch; ++bi) {
        const T* row = pre.data() + bi * 4 * hidden;
        for (int64_t j = 0; j < hidden; ++j) {
            const int64_t idx = bi * hidden + j;
            const T iv = sigmoid(row[j]);
            const T fv = sigmoid(row[hidden + j]);
            const T gv = std::tanh(row[2 * hidden + j]);
            const T ov = sigmoid(row[3 * hidden + j]);
            const T cv = fv * c_prev->value[idx] + iv * gv;
            const T tv = std::tanh(cv);
            (*gi)[idx] = iv;
            (*gf)[idx] = fv;
            (*gg)[idx] = gv;
            (*go)[idx] = ov;
            (*tanc)[idx] = tv;
            c->value[idx] = cv;
            h->value[idx] = ov * tv;
        }
    }

    if (track(tape, {&x, &h_prev, &c_prev, &w.wx, &w.wh, &w.bias})) {
        h->requires_grad = true;
        c->requires_grad = true;
        auto wx = w.wx, wh = w.wh, bias = w.bias;
        tape->record("lstm_step", h,
                     [x, h_prev, c_prev, wx, wh, bias, h, c, gi, gf, gg, go, tanc, batch, d_in,
                      hidden]() {
            const bool has_dh = !h->grad.empty();
            const bool has_dc = !c->grad.empty();
            if (!has_dh && !has_dc) return;
            std::vector<T> dpre(static_cast<size_t>(batch * 4 * hidden), T(0));
            if (c_prev->requires_grad) c_prev->ensure_grad();
            for (int64_t bi = 0; bi < batch; ++bi) {
                T* drow = dpre.data() + bi * 4 * hidden;
                for (int64_t j = 0; j < hidden; ++j) {
                    const int64_t idx = bi * hidden + j;
                    const T dh = has_dh ? h->grad[idx] : T(0);
                    const T dc_in = has_dc ? c->grad[idx] : T(0);
                    const T iv = (*gi)[idx], fv = (*gf)[idx], gv = (*gg)[idx], ov = (*go)[idx];
                    const T tv = (*tanc)[idx];
                    const T dct = dc_in + dh * ov * (T(1) - tv * tv);
                    drow[j] = dct * gv * iv * (T(1) - iv);
                    drow[hidden + j] = dct * c_prev->value[idx] * fv * (T(1) - fv);
                    drow[2 * hidden + j] = dct * iv * (T(1) - gv * gv);
                    drow[3 * hidden + j] = dh * tv * ov * (T(1) - ov);
                    if (c_prev->requires_grad) c_prev->grad[idx] += dct * fv;
                }
            }
            if (bias->requires_grad) {
                bias->ensure_grad();
                for (int64_t bi = 0; bi < batch; ++bi) {
                    const T* drow = dpre.data() + bi * 4 * hidden;
                    for (int64_t j = 0; j < 4 * hidden; ++j) bias->grad[j] += drow[j];
                }
            }
            if (wx->requires_grad) {
                wx->ensure_grad();
                matmul_tn_acc(dpre.data(), x->data(), wx->grad.data(), batch, d_in, 4 * hidden);
            }
            if (wh->requires_grad) {
                wh->ensure_grad();
                matmul_tn_acc(dpre.data(), h_prev->data(), wh->grad.data(), batch, hidden,
                              4 * hidden);
            }
            if (x->requires_grad) {
                x->ensure_grad();
                matmul_nn_acc(dpre.data(), wx->data(), x->grad.data(), batch, d_in, 4 * hidden);
            }
            if (h_prev->requires_grad) {
                h_prev->ensure_grad();
                matmul_nn_acc(dpre.data(), wh->data(), h_prev->grad.data(), batch, hidden,
                              4 * hidden);
            }
        });
    }
    return {h, c};
}

#define EITPHYS_INSTANTIATE_OPS(T)                                                              \
    template TensorPtr<T> conv2d<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&,         \
                                    const TensorPtr<T>&, int, int);                             \
    template TensorPtr<T> linear<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&,         \
                                    const TensorPtr<T>&);                                       \
    template TensorPtr<T> relu<T>(Tape<T>*, const TensorPtr<T>&);                               \
    template TensorPtr<T> add<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&);           \
    template TensorPtr<T> sub<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&);           \
    template TensorPtr<T> abs_val<T>(Tape<T>*, const TensorPtr<T>&);                            \
    template TensorPtr<T> mean_all<T>(Tape<T>*, const TensorPtr<T>&);                           \
    template TensorPtr<T> sum_all<T>(Tape<T>*, const TensorPtr<T>&);                            \
    template TensorPtr<T> spatial_mean<T>(Tape<T>*, const TensorPtr<T>&);                       \
    template TensorPtr<T> concat_last<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&);   \
    template TensorPtr<T> reshape<T>(Tape<T>*, const TensorPtr<T>&, std::vector<int64_t>);      \
    template TensorPtr<T> slice_time<T>(Tape<T>*, const TensorPtr<T>&, int64_t);                \
    template TensorPtr<T> stack_time<T>(Tape<T>*, const std::vector<TensorPtr<T>>&);            \
    template TensorPtr<T> batch_norm2d<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&,   \
                                          const TensorPtr<T>&, std::vector<T>&, std::vector<T>&, \
                                          bool, T, T);                                          \
    template std::pair<TensorPtr<T>, TensorPtr<T>> lstm_step<T>(                                \
        Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&, const TensorPtr<T>&,                \
        const LstmWeights<T>&);

EITPHYS_INSTANTIATE_OPS(float)
EITPHYS_INSTANTIATE_OPS(double)

#undef EITPHYS_INSTANTIATE_OPS

}  // namespace eitphys::ad
