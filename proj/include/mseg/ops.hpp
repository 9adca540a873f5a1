#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "mseg/graph.hpp"
#include "mseg/tensor.hpp"

namespace mseg {

enum class Padding { Same, Valid };

namespace detail {

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   Padding pad) {
    if (pad == Padding::Same) return (in + stride - 1) / stride;
    if (in < k) throw std::invalid_argument("valid convolution: input extent smaller than kernel");
    return (in - k) / stride + 1;
}

inline long pad_before(std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                       Padding pad) {
    if (pad == Padding::Valid) return 0;
    long total = static_cast<long>((out - 1) * stride + k) - static_cast<long>(in);
    return std::max(0L, total) / 2;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv_nd: spatial rank 2 or 3, layout [N, C, spatial...], kernel
// [OC, IC, k...], bias [OC].
// ---------------------------------------------------------------------------

template <class T>
int conv_nd(GraphT<T>& g, int input_id, int kernel_id, int bias_id,
            std::vector<std::size_t> stride, Padding pad) {
    const TensorT<T>& in = g.value(input_id);
    const TensorT<T>& ker = g.value(kernel_id);
    const TensorT<T>& bias = g.value(bias_id);
    const std::size_t nd = in.rank() - 2;
    if (nd != 2 && nd != 3)
        throw std::invalid_argument("conv_nd supports 2 or 3 spatial dims, input " +
                                    shape_str(in.shape));
    if (ker.rank() != nd + 2)
        throw std::invalid_argument("conv_nd kernel rank mismatch: input " + shape_str(in.shape) +
                                    " kernel " + shape_str(ker.shape));
    if (ker.shape[1] != in.shape[1])
        throw std::invalid_argument("conv_nd channel mismatch: input " + shape_str(in.shape) +
                                    " kernel " + shape_str(ker.shape));
    if (stride.empty()) stride.assign(nd, 1);
    if (stride.size() != nd) throw std::invalid_argument("conv_nd stride rank mismatch");
    if (bias.numel() != ker.shape[0])
        throw std::invalid_argument("conv_nd bias length must equal output channels");

    const std::size_t N = in.shape[0], IC = in.shape[1], OC = ker.shape[0];
    std::array<std::size_t, 3> S{1, 1, 1}, K{1, 1, 1}, O{1, 1, 1}, ST{1, 1, 1};
    std::array<long, 3> PB{0, 0, 0};
    for (std::size_t d = 0; d < nd; ++d) {
        S[d] = in.shape[2 + d];
        K[d] = ker.shape[2 + d];
        ST[d] = stride[d];
        O[d] = detail::conv_out_extent(S[d], K[d], ST[d], pad);
        PB[d] = detail::pad_before(S[d], O[d], K[d], ST[d], pad);
    }
    if (nd == 2) {
        S[0] = 1;
        O[0] = 1;
        K[0] = 1;
        ST[0] = 1;
        PB[0] = 0;
        // shift 2D extents into the depth-free slots
        S[1] = in.shape[2];
        S[2] = in.shape[3];
        K[1] = ker.shape[2];
        K[2] = ker.shape[3];
        ST[1] = stride[0];
        ST[2] = stride[1];
        O[1] = detail::conv_out_extent(S[1], K[1], ST[1], pad);
        O[2] = detail::conv_out_extent(S[2], K[2], ST[2], pad);
        PB[1] = detail::pad_before(S[1], O[1], K[1], ST[1], pad);
        PB[2] = detail::pad_before(S[2], O[2], K[2], ST[2], pad);
    }

    std::vector<std::size_t> out_shape{N, OC};
    if (nd == 3) out_shape.insert(out_shape.end(), {O[0], O[1], O[2]});
    else out_shape.insert(out_shape.end(), {O[1], O[2]});
    TensorT<T> out(out_shape);

    const std::size_t in_sp = S[0] * S[1] * S[2];
    const std::size_t out_sp = O[0] * O[1] * O[2];
    const std::size_t ker_sp = K[0] * K[1] * K[2];

    const T* X = in.data.data();
    const T* W = ker.data.data();
    const T* B = bias.data.data();
    T* Y = out.data.data();

    for (std::size_t n = 0; n < N; ++n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (long oc = 0; oc < static_cast<long>(OC); ++oc) {
            T* y = Y + (n * OC + oc) * out_sp;
            for (std::size_t i = 0; i < out_sp; ++i) y[i] = B[oc];
            for (std::size_t ic = 0; ic < IC; ++ic) {
                const T* x = X + (n * IC + ic) * in_sp;
                const T* w = W + (oc * IC + ic) * ker_sp;
                std::size_t oidx = 0;
                for (std::size_t od = 0; od < O[0]; ++od)
                    for (std::size_t oh = 0; oh < O[1]; ++oh)
                        for (std::size_t ow = 0; ow < O[2]; ++ow, ++oidx) {
                            T acc = T(0);
                            for (std::size_t kd = 0; kd < K[0]; ++kd) {
                                long id = static_cast<long>(od * ST[0] + kd) - PB[0];
                                if (id < 0 || id >= static_cast<long>(S[0])) continue;
                                for (std::size_t kh = 0; kh < K[1]; ++kh) {
                                    long ih = static_cast<long>(oh * ST[1] + kh) - PB[1];
                                    if (ih < 0 || ih >= static_cast<long>(S[1])) continue;
                                    const T* xrow = x + (id * S[1] + ih) * S[2];
                                    const T* wrow = w + (kd * K[1] + kh) * K[2];
                                    for (std::size_t kw = 0; kw < K[2]; ++kw) {
                                        long iw = static_cast<long>(ow * ST[2] + kw) - PB[2];
                                        if (iw < 0 || iw >= static_cast<long>(S[2])) continue;
                                        acc += wrow[kw] * xrow[iw];
                                    }
                                }
                            }
                            y[oidx] += acc;
                        }
            }
        }
    }

    NodeT<T> node;
    node.op = "conv";
    node.inputs = {input_id, kernel_id, bias_id};
    node.value = std::move(out);
    node.requires_grad = g.any_requires_grad(node.inputs);
    node.backward = [=](GraphT<T>& gr, NodeT<T>& self) {
        const TensorT<T>& gout = self.grad;
        const TensorT<T>& inv = gr.value(input_id);
        const TensorT<T>& kv = gr.value(kernel_id);
        const bool need_dx = gr.node(input_id).requires_grad;
        const bool need_dw = gr.node(kernel_id).requires_grad;
        const bool need_db = gr.node(bias_id).requires_grad;
        const T* GY = gout.data.data();
        const T* Xv = inv.data.data();
        const T* Wv = kv.data.data();
        if (need_db) {
            TensorT<T>& db = gr.grad(bias_id);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t oc = 0; oc < OC; ++oc) {
                    const T* gy = GY + (n * OC + oc) * out_sp;
                    T acc = T(0);
                    for (std::size_t i = 0; i < out_sp; ++i) acc += gy[i];
                    db[oc] += acc;
                }
        }
        if (need_dw) {
            TensorT<T>& dw = gr.grad(kernel_id);
            T* DW = dw.data.data();
            for (std::size_t n = 0; n < N; ++n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
                for (long oc = 0; oc < static_cast<long>(OC); ++oc) {
                    const T* gy = GY + (n * OC + oc) * out_sp;
                    for (std::size_t ic = 0; ic < IC; ++ic) {
                        const T* x = Xv + (n * IC + ic) * in_sp;
                        T* w = DW + (oc * IC + ic) * ker_sp;
                        std::size_t oidx = 0;
                        for (std::size_t od = 0; od < O[0]; ++od)
                            for (std::size_t oh = 0; oh < O[1]; ++oh)
                                for (std::size_t ow = 0; ow < O[2]; ++ow, ++oidx) {
                                    const T gv = gy[oidx];
                                    if (gv == T(0)) continue;
                                    for (std::size_t kd = 0; kd < K[0]; ++kd) {
                                        long id = static_cast<long>(od * ST[0] + kd) - PB[0];
                                        if (id < 0 || id >= static_cast<long>(S[0])) continue;
                                        for (std::size_t kh = 0; kh < K[1]; ++kh) {
                                            long ih = static_cast<long>(oh * ST[1] + kh) - PB[1];
                                            if (ih < 0 || ih >= static_cast<long>(S[1])) continue;
                                            const T* xrow = x + (id * S[1] + ih) * S[2];
                                            T* wrow = w + (kd * K[1] + kh) * K[2];
                                            for (std::size_t kw = 0; kw < K[2]; ++kw) {
                                                long iw =
                                                    static_cast<long>(ow * ST[2] + kw) - PB[2];
                                                if (iw < 0 || iw >= static_cast<long>(S[2]))
                                                    continue;
                                                wrow[kw] += gv * xrow[iw];
                                            }
                                        }
                                    }
                                }
                    }
                }
            }
        }
        if (need_dx) {
            TensorT<T>& dx = gr.grad(input_id);
            T* DX = dx.data.data();
            for (std::size_t n = 0; n < N; ++n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
                for (long ic = 0; ic < static_cast<long>(IC); ++ic) {
                    T* dxs = DX + (n * IC + ic) * in_sp;
                    for (std::size_t oc = 0; oc < OC; ++oc) {
                        const T* gy = GY + (n * OC + oc) * out_sp;
                        const T* w = Wv + (oc * IC + ic) * ker_sp;
                        std::size_t oidx = 0;
                        for (std::size_t od = 0; od < O[0]; ++od)
                            for (std::size_t oh = 0; oh < O[1]; ++oh)
                                for (std::size_t ow = 0; ow < O[2]; ++ow, ++oidx) {
                                    const T gv = gy[oidx];
                                    if (gv == T(0)) continue;
                                    for (std::size_t kd = 0; kd < K[0]; ++kd) {
                                        long id = static_cast<long>(od * ST[0] + kd) - PB[0];
                                        if (id < 0 || id >= static_cast<long>(S[0])) continue;
                                        for (std::size_t kh = 0; kh < K[1]; ++kh) {
                                            long ih = static_cast<long>(oh * ST[1] + kh) - PB[1];
                                            if (ih < 0 || ih >= static_cast<long>(S[1])) continue;
                                            T* xrow = dxs + (id * S[1] + ih) * S[2];
                                            const T* wrow = w + (kd * K[1] + kh) * K[2];
                                            for (std::size_t kw = 0; kw < K[2]; ++kw) {
                                                long iw =
                                                    static_cast<long>(ow * ST[2] + kw) - PB[2];
                                                if (iw < 0 || iw >= static_cast<long>(S[2]))
                                                    continue;
                                                xrow[iw] += gv * wrow[kw];
                                            }
                                        }
                                    }
                                }
                    }
                }
            }
        }
    };
    return g.add(std::move(node));
}

// ---------------------------------------------------------------------------
// maxpool_nd: gradient routed to the first-occurring argmax of each window.
// ---------------------------------------------------------------------------

template <class T>
int maxpool_nd(GraphT<T>& g, int input_id, std::vector<std::size_t> window,
               std::vector<std::size_t> stride) {
    const TensorT<T>& in = g.value(input_id);
    const std::size_t nd = in.rank() - 2;
    if (nd != 2 && nd != 3) throw std::invalid_argument("maxpool_nd supports 2 or 3 spatial dims");
    if (window.size() == 1) window.assign(nd, window[0]);
    if (stride.empty()) stride = window;
    if (stride.size() == 1) stride.assign(nd, stride[0]);
    if (window.size() != nd || stride.size() != nd)
        throw std::invalid_argument("maxpool_nd window/stride rank mismatch");

    const std::size_t N = in.shape[0], C = in.shape[1];
    std::array<std::size_t, 3> S{1, 1, 1}, W{1, 1, 1}, O{1, 1, 1}, ST{1, 1, 1};
    for (std::size_t d = 0; d < nd; ++d) {
        S[3 - nd + d] = in.shape[2 + d];
        W[3 - nd + d] = window[d];
        ST[3 - nd + d] = stride[d];
    }
    for (std::size_t d = 0; d < 3; ++d) {
        if (W[d] > S[d])
            throw std::invalid_argument("maxpool window " + std::to_string(W[d]) +
                                        " larger than spatial extent " + std::to_string(S[d]));
        O[d] = (S[d] - W[d]) / ST[d] + 1;
    }

    std::vector<std::size_t> out_shape{N, C};
    for (std::size_t d = 3 - nd; d < 3; ++d) out_shape.push_back(O[d]);
    TensorT<T> out(out_shape);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());

    const std::size_t in_sp = S[0] * S[1] * S[2];
    const std::size_t out_sp = O[0] * O[1] * O[2];
    const T* X = in.data.data();
    T* Y = out.data.data();

    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const T* x = X + nc * in_sp;
        T* y = Y + nc * out_sp;
        std::size_t* am = argmax->data() + nc * out_sp;
        std::size_t oidx = 0;
        for (std::size_t od = 0; od < O[0]; ++od)
            for (std::size_t oh = 0; oh < O[1]; ++oh)
                for (std::size_t ow = 0; ow < O[2]; ++ow, ++oidx) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_i = 0;
                    for (std::size_t wd = 0; wd < W[0]; ++wd)
                        for (std::size_t wh = 0; wh < W[1]; ++wh)
                            for (std::size_t ww = 0; ww < W[2]; ++ww) {
                                std::size_t i = ((od * ST[0] + wd) * S[1] + oh * ST[1] + wh) * S[2] +
                                                ow * ST[2] + ww;
                                if (x[i] > best) {
                                    best = x[i];
                                    best_i = i;
                                }
                            }
                    y[oidx] = best;
                    am[oidx] = best_i;
                }
    }

    NodeT<T> node;
    node.op = "maxpool";
    node.inputs = {input_id};
    node.value = std::move(out);
    node.requires_grad = g.any_requires_grad(node.inputs);
    const std::size_t total_nc = N * C;
    node.backward = [=](GraphT<T>& gr, NodeT<T>& self) {
        if (!gr.node(input_id).requires_grad) return;
        TensorT<T>& dx = gr.grad(input_id);
        const TensorT<T>& gout = self.grad;
        for (std::size_t nc = 0; nc < total_nc; ++nc) {
            T* dxs = dx.data.data() + nc * in_sp;
            const T* gy = gout.data.data() + nc * out_sp;
            const std::size_t* am = argmax->data() + nc * out_sp;
            for (std::size_t i = 0; i < out_sp; ++i) dxs[am[i]] += gy[i];
        }
    };
    return g.add(std::move(node));
}

// ---------------------------------------------------------------------------
// upsample_linear_nd: integer factor, align-corners-false; backward is the
// transpose scatter of the interpolation weights.
// ---------------------------------------------------------------------------

namespace detail {

struct LinTap {
    std::size_t lo, hi;
    double w_hi;  // weight of hi; lo gets 1 - w_hi
};

inline std::vector<LinTap> linear_taps(std::size_t out, std::size_t in, std::size_t factor) {
    std::vector<LinTap> taps(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) / static_cast<double>(factor) - 0.5;
        double lo = std::floor(src);
        double frac = src - lo;
        long l = static_cast<long>(lo);
        long h = l + 1;
        l = std::clamp(l, 0L, static_cast<long>(in) - 1);
        h = std::clamp(h, 0L, static_cast<long>(in) - 1);
        taps[i] = {static_cast<std::size_t>(l), static_cast<std::size_t>(h), frac};
    }
    return taps;
}

}  // namespace detail

template <class T>
int upsample_linear_nd(GraphT<T>& g, int input_id, std::size_t factor) {
    const TensorT<T>& in = g.value(input_id);
    const std::size_t nd = in.rank() - 2;
    if (nd != 2 && nd != 3)
        throw std::invalid_argument("upsample_linear_nd supports 2 or 3 spatial dims");
    if (factor < 1) throw std::invalid_argument("upsample factor must be >= 1");

    const std::size_t N = in.shape[0], C = in.shape[1];
    std::array<std::size_t, 3> S{1, 1, 1}, O{1, 1, 1};
    for (std::size_t d = 0; d < nd; ++d) {
        S[3 - nd + d] = in.shape[2 + d];
        O[3 - nd + d] = in.shape[2 + d] * factor;
    }
    if (nd == 2) O[0] = S[0] = 1;

    auto taps = std::make_shared<std::array<std::vector<detail::LinTap>, 3>>();
    for (std::size_t d = 0; d < 3; ++d)
        (*taps)[d] = (S[d] == 1 && O[d] == 1)
                         ? std::vector<detail::LinTap>{{0, 0, 0.0}}
                         : detail::linear_taps(O[d], S[d], factor);

    std::vector<std::size_t> out_shape{N, C};
    for (std::size_t d = 3 - nd; d < 3; ++d) out_shape.push_back(O[d]);
    TensorT<T> out(out_shape);

    const std::size_t in_sp = S[0] * S[1] * S[2];
    const std::size_t out_sp = O[0] * O[1] * O[2];

    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const T* x = in.data.data() + nc * in_sp;
        T* y = out.data.data() + nc * out_sp;
        std::size_t oidx = 0;
        for (const auto& td : (*taps)[0])
            for (const auto& th : (*taps)[1])
                for (const auto& tw : (*taps)[2]) {
                    double acc = 0;
                    for (int a = 0; a < 2; ++a)
                        for (int b = 0; b < 2; ++b)
                            for (int c = 0; c < 2; ++c) {
                                double w = (a ? td.w_hi : 1 - td.w_hi) *
                                           (b ? th.w_hi : 1 - th.w_hi) *
                                           (c ? tw.w_hi : 1 - tw.w_hi);
                                if (w == 0) continue;
                                std::size_t i = ((a ? td.hi : td.lo) * S[1] + (b ? th.hi : th.lo)) *
                                                    S[2] +
                                                (c ? tw.hi : tw.lo);
                                acc += w * static_cast<double>(x[i]);
                            }
                    y[oidx++] = static_cast<T>(acc);
                }
    }

    NodeT<T> node;
    node.op = "upsample";
    node.inputs = {input_id};
    node.value = std::move(out);
    node.requires_grad = g.any_requires_grad(node.inputs);
    const std::size_t total_nc = N * C;
    node.backward = [=](GraphT<T>& gr, NodeT<T>& self) {
        if (!gr.node(input_id).requires_grad) return;
        TensorT<T>& dx = gr.grad(input_id);
        const TensorT<T>& gout = self.grad;
        for (std::size_t nc = 0; nc < total_nc; ++nc) {
            T* dxs = dx.data.data() + nc * in_sp;
            const T* gy = gout.data.data() + nc * out_sp;
            std::size_t oidx = 0;
            for (const auto& td : (*taps)[0])
                for (const auto& th : (*taps)[1])
                    for (const auto& tw : (*taps)[2]) {
                        const double gv = static_cast<double>(gy[oidx++]);
                        if (gv == 0) continue;
                        for (int a = 0; a < 2; ++a)
                            for (int b = 0; b < 2; ++b)
                                for (int c = 0; c < 2; ++c) {
                                    double w = (a ? td.w_hi : 1 - td.w_hi) *
                                               (b ? th.w_hi : 1 - th.w_hi) *
                                               (c ? tw.w_hi : 1 - tw.w_hi);
                                    if (w == 0) continue;
                                    std::size_t i =
                                        ((a ? td.hi : td.lo) * S[1] + (b ? th.hi : th.lo)) * S[2] +
                                        (c ? tw.hi : tw.lo);
                                    dxs[i] += static_cast<T>(w * gv);
                                }
                    }
        }
    };
    return g.add(std::move(node));
}

// ---------------------------------------------------------------------------
// concat_channels / slice_channels
// ---------------------------------------------------------------------------

template <class T>
int concat_channels(GraphT<T>& g, const std::vector<int>& input_ids) {
    if (input_ids.empty()) throw std::invalid_argument("concat_channels: empty input list");
    const TensorT<T>& first = g.value(input_ids[0]);
    std::size_t channels = 0;
    for (int id : input_ids) {
        const TensorT<T>& t = g.value(id);
        if (t.rank() != first.rank() || t.shape[0] != first.shape[0])
            throw std::invalid_argument("concat_channels: batch/rank mismatch " +
                                        shape_str(t.shape) + " vs " + shape_str(first.shape));
        for (std::size_t d = 2; d < t.rank(); ++d)
            if (t.shape[d] != first.shape[d])
                throw std::invalid_argument("concat_channels: spatial mismatch " +
                                            shape_str(t.shape) + " vs " + shape_str(first.shape));
        channels += t.shape[1];
    }
    std::vector<std::size_t> out_shape = first.shape;
    out_shape[1] = channels;
    TensorT<T> out(out_shape);

    const std::size_t N = first.shape[0];
    std::size_t sp = 1;
    for (std::size_t d = 2; d < first.rank(); ++d) sp *= first.shape[d];

    for (std::size_t n = 0; n < N; ++n) {
        std::size_t coff = 0;
        for (int id : input_ids) {
            const TensorT<T>& t = g.value(id);
            const std::size_t tc = t.shape[1];
            std::copy_n(t.data.data() + n * tc * sp, tc * sp,
                        out.data.data() + (n * channels + coff) * sp);
            coff += tc;
        }
    }

    NodeT<T> node;
    node.op = "concat";
    node.inputs = input_ids;
    node.value = std::move(out);
    node.requires_grad = g.any_requires_grad(input_ids);
    node.backward = [=, ids = input_ids](GraphT<T>& gr, NodeT<T>& self) {
        const TensorT<T>& gout = self.grad;
        for (std::size_t n = 0; n < N; ++n) {
            std::size_t coff = 0;
            for (int id : ids) {
                TensorT<T>& dx = gr.grad(id);
                const std::size_t tc = dx.shape[1];
                if (gr.node(id).requires_grad) {
                    const T* src = gout.data.data() + (n * channels + coff) * sp;
                    T* dst = dx.data.data() + n * tc * sp;
                    for (std::size_t i = 0; i < tc * sp; ++i) dst[i] += src[i];
                }
                coff += tc;
            }
        }
    };
    return g.add(std::move(node));
}

template <class T>
int slice_channels(GraphT<T>& g, int input_id, std::size_t from, std::size_t count) {
    const TensorT<T>& in = g.value(input_id);
    if (from + count > in.shape[1])
        throw std::invalid_argument("slice_channels out of range for " + shape_str(in.shape));
    std::vector<std::size_t> out_shape = in.shape;
    out_shape[1] = count;
    TensorT<T> out(out_shape);
    const std::size_t N = in.shape[0], C = in.shape[1];
    std::size_t sp = 1;
    for (std::size_t d = 2; d < in.rank(); ++d) sp *= in.shape[d];
    for (std::size_t n = 0; n < N; ++n)
        std::copy_n(in.data.data() + (n * C + from) * sp, count * sp,
                    out.data.data() + n * count * sp);

    NodeT<T> node;
    node.op = "slice";
    node.inputs = {input_id};
    node.value = std::move(out);
    node.requires_grad = g.any_requires_grad(node.inputs);
    node.backward = [=](GraphT<T>& gr, NodeT<T>& self) {
        if (!gr.node(input_id).requires_grad) return;
        TensorT<T>& dx = gr.grad(input_id);
        const TensorT<T>& gout = self.grad;
        for (std::size_t n = 0; n < N; ++n) {
            const T* src = gout.data.data() + n * count * sp;
            T* dst = dx.data.data() + (n * C + from) * sp;
            for (std::size_t i = 0; i < count * sp; ++i) dst[i] += src[i];
        }
    };
    return g.add(std::move(node));
}

// ---------------------------------------------------------------------------
// batchnorm: per-channel over batch and spatial dims, epsilon 1e-5. Running
// statistics live outside the graph and are updated in train mode only.
// ---------------------------------------------------------------------------

enum class BnMode { Train, Infer };

template <class T>
struct RunningStats {
    TensorT<T>* mean = nullptr;
    TensorT<T>* var = nullptr;
};

template <class T>
int batchnorm(GraphT<T>& g, int input_id, int gamma_id, int beta_id, BnMode mode,
              RunningStats<T> running = {}, T momentum = T(0.9), T eps = T(1e-5)) {
    const TensorT<T>& in = g.value(input_id);
    const TensorT<T>& gamma = g.value(gamma_id);
    const TensorT<T>& beta = g.value(beta_id);
    const std::size_t N = in.shape[0], C = in.shape[1];
    if (gamma.numel() != C || beta.numel() != C)
        throw std::invalid_argument("batchnorm gamma/beta length must equal channel count");
    std::size_t sp = 1;
    for (std::size_t d = 2; d < in.rank(); ++d) sp *= in.shape[d];
    const std::size_t M = N * sp;

    TensorT<T> mean({C}), var({C});
    if (mode == BnMode::Train) {
        for (std::size_t c = 0; c < C; ++c) {
            double m = 0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* x = in.data.data() + (n * C + c) * sp;
                for (std::size_t i = 0; i < sp; ++i) m += x[i];
            }
            m /= static_cast<double>(M);
            double v = 0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* x = in.data.data() + (n * C + c) * sp;
                for (std::size_t i = 0; i < sp; ++i) {
                    double d = x[i] - m;
                    v += d * d;
                }
            }
            v /= static_cast<double>(M);
            mean[c] = static_cast<T>(m);
            var[c] = static_cast<T>(v);
        }
        if (running.mean && running.var) {
            for (std::size_t c = 0; c < C; ++c) {
                (*running.mean)[c] = momentum * (*running.mean)[c] + (T(1) - momentum) * mean[c];
                (*running.var)[c] = momentum * (*running.var)[c] + (T(1) - momentum) * var[c];
            }
        }
    } else {
        if (!running.mean || !running.var)
            throw std::invalid_argument("batchnorm infer mode requires running stats");
        mean = *running.mean;
        var = *running.var;
    }

    TensorT<T> out(in.shape);
    auto xhat = std::make_shared<TensorT<T>>(in.shape);
    auto inv_std = std::make_shared<TensorT<T>>(std::vector<std::size_t>{C});
    for (std::size_t c = 0; c < C; ++c)
        (*inv_std)[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var[c]) +
                                                       static_cast<double>(eps)));
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T* x = in.data.data() + (n * C + c) * sp;
            T* xh = xhat->data.data() + (n * C + c) * sp;
            T* y = out.data.data() + (n * C + c) * sp;
            for (std::size_t i = 0; i < sp; ++i) {
                xh[i] = (x[i] - mean[c]) * (*inv_std)[c];
                y[i] = gamma[c] * xh[i] + beta[c];
            }
        }

    NodeT<T> node;
    node.op = "batchnorm";
    node.inputs = {input_id, gamma_id, beta_id};
    node.value = std::move(out);
    node.requires_grad = g.any_requires_grad(node.inputs);
    node.backward = [=](GraphT<T>& gr, NodeT<T>& self) {
        const TensorT<T>& gout = self.grad;
        const TensorT<T>& gam = gr.value(gamma_id);
        TensorT<T> dgamma({C}, T(0)), dbeta({C}, T(0));
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
                const T* gy = gout.data.data() + (n * C + c) * sp;
                const T* xh = xhat->data.data() + (n * C + c) * sp;
                for (std::size_t i = 0; i < sp; ++i) {
                    dgamma[c] += gy[i] * xh[i];
                    dbeta[c] += gy[i];
                }
            }
        if (gr.node(gamma_id).requires_grad)
            for (std::size_t c = 0; c < C; ++c) gr.grad(gamma_id)[c] += dgamma[c];
        if (gr.node(beta_id).requires_grad)
            for (std::size_t c = 0; c < C; ++c) gr.grad(beta_id)[c] += dbeta[c];
        if (gr.node(input_id).requires_grad) {
            TensorT<T>& dx = gr.grad(input_id);
            if (mode == BnMode::Train) {
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < C; ++c) {
                        const T* gy = gout.data.data() + (n * C + c) * sp;
                        const T* xh = xhat->data.data() + (n * C + c) * sp;
                        T* d = dx.data.data() + (n * C + c) * sp;
                        const T k = gam[c] * (*inv_std)[c];
                        const T mM = static_cast<T>(1.0 / static_cast<double>(M));
                        for (std::size_t i = 0; i < sp; ++i)
                            d[i] += k * (gy[i] - dbeta[c] * mM - xh[i] * dgamma[c] * mM);
                    }
            } else {
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < C; ++c) {
                        const T* gy = gout.data.data() + (n * C + c) * sp;
                        T* d = dx.data.data() + (n * C + c) * sp;
                        const T k = gam[c] * (*inv_std)[c];
                        for (std::size_t i = 0; i < sp; ++i) d[i] += k * gy[i];
                    }
            }
        }
    };
    return g.add(std::move(node));
}

// ---------------------------------------------------------------------------
// softmax_channels: stabilized by per-location max subtraction.
// ---------------------------------------------------------------------------

template <class T>
int softmax_channels(GraphT<T>& g, int input_id) {
    const TensorT<T>& in = g.value(input_id);
    const std::size_t N = in.shape[0], C = in.shape[1];
    std::size_t sp = 1;
    for (std::size_t d = 2; d < in.rank(); ++d) sp *= in.shape[d];
    TensorT<T> out(in.shape);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < sp; ++i) {
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t c = 0; c < C; ++c)
                mx = std::max(mx, in.data[(n * C + c) * sp + i]);
            double sum = 0;
            for (std::size_t c = 0; c < C; ++c) {
                double e = std::exp(static_cast<double>(in.data[(n * C + c) * sp + i] - mx));
                out.data[(n * C + c) * sp + i] = static_cast<T>(e);
                sum += e;
            }
            for (std::size_t c = 0; c < C; ++c)
                out.data[(n * C + c) * sp + i] =
                    static_cast<T>(static_cast<double>(out.data[(n * C + c) * sp + i]) / sum);
        }

    NodeT<T> node;
    node.op = "softmax";
    node.inputs = {input_id};
    node.value = std::move(out);
    node.requires_grad = g.any_requires_grad(node.inputs);
    node.backward = [=](GraphT<T>& gr, NodeT<T>& self) {
        if (!gr.node(input_id).requires_grad) return;
        const TensorT<T>& p = self.value;
        const TensorT<T>& gout = self.grad;
        TensorT<T>& dx = gr.grad(input_id);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t i = 0; i < sp; ++i) {
                double dot = 0;
                for (std::size_t c = 0; c < C; ++c) {
                    std::size_t k = (n * C + c) * sp + i;
                    dot += static_cast<double>(gout.data[k]) * static_cast<double>(p.data[k]);
                }
                for (std::size_t c = 0; c < C; ++c) {
                    std::size_t k = (n * C + c) * sp + i;
                    dx.data[k] += static_cast<T>(static_cast<double>(p.data[k]) *
                                                 (static_cast<double>(gout.data[k]) - dot));
                }
            }
    };
    return g.add(std::move(node));
}

// ---------------------------------------------------------------------------
// relu: subgradient 0 at exactly 0.
// ---------------------------------------------------------------------------

template <class T>
int relu(GraphT<T>& g, int input_id) {
    const TensorT<T>& in = g.value(input_id);
    TensorT<T> out(in.shape);
    for (std::size_t i = 0; i < in.numel(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
    NodeT<T> node;
    node.op = "relu";
    node.inputs = {input_id};
    node.value = std::move(out);
    node.requires_grad = g.any_requires_grad(node.inputs);
    node.backward = [=](GraphT<T>& gr, NodeT<T>& self) {
        if (!gr.node(input_id).requires_grad) return;
        const TensorT<T>& x = gr.value(input_id);
        TensorT<T>& dx = gr.grad(input_id);
        const TensorT<T>& gout = self.grad;
        for (std::size_t i = 0; i < x.numel(); ++i)
            if (x[i] > T(0)) dx[i] += gout[i];
    };
    return g.add(std::move(node));
}

// ---------------------------------------------------------------------------
// weighted_sum_scalars: c_0 * s_0 + ... ; used for the loss combination.
// ---------------------------------------------------------------------------

template <class T>
int weighted_sum_scalars(GraphT<T>& g, const std::vector<int>& ids, const std::vector<T>& coefs) {
    if (ids.size() != coefs.size())
        throw std::invalid_argument("weighted_sum_scalars: size mismatch");
    double acc = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (g.value(ids[i]).numel() != 1)
            throw std::invalid_argument("weighted_sum_scalars: non-scalar input");
        acc += static_cast<double>(coefs[i]) * static_cast<double>(g.value(ids[i])[0]);
    }
    NodeT<T> node;
    node.op = "wsum";
    node.inputs = ids;
    node.value = TensorT<T>({1});
    node.value[0] = static_cast<T>(acc);
    node.requires_grad = g.any_requires_grad(ids);
    node.backward = [=](GraphT<T>& gr, NodeT<T>& self) {
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (gr.node(ids[i]).requires_grad) gr.grad(ids[i])[0] += coefs[i] * self.grad[0];
    };
    return g.add(std::move(node));
}

}  // namespace mseg
