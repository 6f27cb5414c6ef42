#include "stresnet/tensor.hpp"

#include <algorithm>
#include <cstring>

// The convolution carries essentially all of the arithmetic in this project
// (training and filtering both funnel through it), so the interior of the
// frame runs on register-blocked kernels specialized for the fixed layer
// geometries of the network and their transposed backward counterparts.
// Frame borders, remainder columns and any other geometry take the generic
// path. Per output sample the taps always accumulate in the same fixed
// (kernel row, kernel col, in-channel) order, so the specialized and generic
// cells produce bit-identical samples.

namespace stresnet {

namespace {

// Weights repacked as [kr][kc][ic][oc] so the innermost output-channel loop
// reads contiguously.
std::vector<double> repack_tap_major(const ConvKernel& k) {
    const int oc_n = k.out_channels, ic_n = k.in_channels;
    const int kh = k.kernel_height, kw = k.kernel_width;
    std::vector<double> packed(static_cast<std::size_t>(kh) * kw * ic_n * oc_n);
    for (int oc = 0; oc < oc_n; ++oc)
        for (int ic = 0; ic < ic_n; ++ic)
            for (int kr = 0; kr < kh; ++kr)
                for (int kc = 0; kc < kw; ++kc)
                    packed[((static_cast<std::size_t>(kr) * kw + kc) * ic_n + ic) * oc_n + oc] =
                        k.weight_at(oc, ic, kr, kc);
    return packed;
}

// One output sample the straightforward way; handles borders and arbitrary
// geometries. Out-of-frame taps are zero and skipped.
void conv_cell_generic(const double* in, int h, int w, const double* packed, const double* bias, int oc_n,
                       int ic_n, int kh, int kw, int pad_h, int pad_w, int r, int c, double* acc,
                       double* out_px) {
    const int kr_lo = std::max(0, pad_h - r), kr_hi = std::min(kh, h + pad_h - r);
    const int kc_lo = std::max(0, pad_w - c), kc_hi = std::min(kw, w + pad_w - c);
    std::memcpy(acc, bias, sizeof(double) * oc_n);
    for (int kr = kr_lo; kr < kr_hi; ++kr) {
        const double* in_row = in + (static_cast<std::size_t>(r + kr - pad_h) * w) * ic_n;
        for (int kc = kc_lo; kc < kc_hi; ++kc) {
            const double* in_px = in_row + static_cast<std::size_t>(c + kc - pad_w) * ic_n;
            const double* wt = packed + (static_cast<std::size_t>(kr) * kw + kc) * ic_n * oc_n;
            for (int ic = 0; ic < ic_n; ++ic) {
                const double x = in_px[ic];
                const double* wt_ic = wt + static_cast<std::size_t>(ic) * oc_n;
                for (int oc = 0; oc < oc_n; ++oc)
                    acc[oc] += x * wt_ic[oc];
            }
        }
    }
    std::memcpy(out_px, acc, sizeof(double) * oc_n);
}

// Interior micro-kernel: COLS adjacent output pixels accumulate in a register
// block, reusing each tap's weight vector COLS times. All shape parameters
// are compile-time so the two inner loops fully unroll.
template <int OC, int IC, int K, int COLS>
void conv_interior_block(const double* in, int w, const double* packed, const double* bias, int r, int c0,
                         double* out_px) {
    constexpr int P = (K - 1) / 2;
    double acc[COLS][OC];
    for (int b = 0; b < COLS; ++b)
        for (int oc = 0; oc < OC; ++oc)
            acc[b][oc] = bias[oc];
    for (int kr = 0; kr < K; ++kr) {
        const double* in_row = in + (static_cast<std::size_t>(r + kr - P) * w + (c0 - P)) * IC;
        for (int kc = 0; kc < K; ++kc) {
            const double* wt = packed + (static_cast<std::size_t>(kr) * K + kc) * IC * OC;
            const double* in_px = in_row + static_cast<std::size_t>(kc) * IC;
            for (int ic = 0; ic < IC; ++ic) {
                const double* wv = wt + static_cast<std::size_t>(ic) * OC;
                for (int b = 0; b < COLS; ++b) {
                    const double x = in_px[static_cast<std::size_t>(b) * IC + ic];
                    for (int oc = 0; oc < OC; ++oc)
                        acc[b][oc] += x * wv[oc];
                }
            }
        }
    }
    for (int b = 0; b < COLS; ++b)
        std::memcpy(out_px + static_cast<std::size_t>(b) * OC, acc[b], sizeof(double) * OC);
}

// Border cell with compile-time shape: tap ranges clamp at runtime but the
// channel loops unroll.
template <int OC, int IC, int K>
void conv_cell_shaped(const double* in, int h, int w, const double* packed, const double* bias, int r, int c,
                      double* out_px) {
    constexpr int P = (K - 1) / 2;
    const int kr_lo = std::max(0, P - r), kr_hi = std::min(K, h + P - r);
    const int kc_lo = std::max(0, P - c), kc_hi = std::min(K, w + P - c);
    double acc[OC];
    for (int oc = 0; oc < OC; ++oc)
        acc[oc] = bias[oc];
    for (int kr = kr_lo; kr < kr_hi; ++kr) {
        const double* in_row = in + static_cast<std::size_t>(r + kr - P) * w * IC;
        for (int kc = kc_lo; kc < kc_hi; ++kc) {
            const double* in_px = in_row + static_cast<std::size_t>(c + kc - P) * IC;
            const double* wt = packed + (static_cast<std::size_t>(kr) * K + kc) * IC * OC;
            for (int ic = 0; ic < IC; ++ic) {
                const double x = in_px[ic];
                const double* wv = wt + static_cast<std::size_t>(ic) * OC;
                for (int oc = 0; oc < OC; ++oc)
                    acc[oc] += x * wv[oc];
            }
        }
    }
    std::memcpy(out_px, acc, sizeof(double) * OC);
}

// Whole-frame driver for one known shape: interior rows cascade from COLS
// down to single-column register blocks, borders take the shaped cell.
template <int OC, int IC, int K, int COLS>
void conv_shaped(const double* in, int h, int w, const double* packed, const double* bias, double* out) {
    constexpr int P = (K - 1) / 2;
    for (int r = 0; r < h; ++r) {
        double* out_row = out + static_cast<std::size_t>(r) * w * OC;
        int c = 0;
        if (r >= P && r < h - P && w > 2 * P) {
            for (; c < P; ++c)
                conv_cell_shaped<OC, IC, K>(in, h, w, packed, bias, r, c, out_row + static_cast<std::size_t>(c) * OC);
            for (; c + COLS <= w - P; c += COLS)
                conv_interior_block<OC, IC, K, COLS>(in, w, packed, bias, r, c,
                                                     out_row + static_cast<std::size_t>(c) * OC);
            if constexpr (COLS > 4)
                for (; c + 4 <= w - P; c += 4)
                    conv_interior_block<OC, IC, K, 4>(in, w, packed, bias, r, c,
                                                      out_row + static_cast<std::size_t>(c) * OC);
            if constexpr (COLS > 2)
                for (; c + 2 <= w - P; c += 2)
                    conv_interior_block<OC, IC, K, 2>(in, w, packed, bias, r, c,
                                                      out_row + static_cast<std::size_t>(c) * OC);
            for (; c < w - P; ++c)
                conv_interior_block<OC, IC, K, 1>(in, w, packed, bias, r, c,
                                                  out_row + static_cast<std::size_t>(c) * OC);
        }
        for (; c < w; ++c)
            conv_cell_shaped<OC, IC, K>(in, h, w, packed, bias, r, c, out_row + static_cast<std::size_t>(c) * OC);
    }
}

using ConvShapedFn = void (*)(const double*, int, int, const double*, const double*, double*);

// Column-block widths are tuned so accumulators stay in registers: the five
// forward layer shapes plus their in/out-swapped backward counterparts.
ConvShapedFn shaped_kernel(int oc, int ic, int kh, int kw) {
    if (kh != kw)
        return nullptr;
    const auto shape = [&](int o, int i, int k) { return oc == o && ic == i && kh == k; };
    if (shape(32, 1, 5)) return &conv_shaped<32, 1, 5, 4>;
    if (shape(32, 1, 3)) return &conv_shaped<32, 1, 3, 8>;
    if (shape(16, 64, 3)) return &conv_shaped<16, 64, 3, 8>;
    if (shape(8, 16, 3)) return &conv_shaped<8, 16, 3, 12>;
    if (shape(1, 8, 1)) return &conv_shaped<1, 8, 1, 16>;
    if (shape(1, 32, 5)) return &conv_shaped<1, 32, 5, 16>;
    if (shape(1, 32, 3)) return &conv_shaped<1, 32, 3, 8>;
    if (shape(64, 16, 3)) return &conv_shaped<64, 16, 3, 1>;
    if (shape(16, 8, 3)) return &conv_shaped<16, 8, 3, 4>;
    if (shape(8, 1, 1)) return &conv_shaped<8, 1, 1, 8>;
    return nullptr;
}

} // namespace

Tensor conv2d_same(const Tensor& input, const ConvKernel& kernel) {
    if (input.channels() != kernel.in_channels)
        throw PreconditionError("conv2d_same: input has " + std::to_string(input.channels()) +
                                " channels, kernel expects " + std::to_string(kernel.in_channels));

    const int h = input.height(), w = input.width();
    const int ic_n = kernel.in_channels, oc_n = kernel.out_channels;
    const int kh = kernel.kernel_height, kw = kernel.kernel_width;
    const int pad_h = (kh - 1) / 2, pad_w = (kw - 1) / 2;

    Tensor out(h, w, oc_n);
    const std::vector<double> packed = repack_tap_major(kernel);
    const double* in = input.data().data();
    const double* bias = kernel.bias.data();

    if (const ConvShapedFn fast = shaped_kernel(oc_n, ic_n, kh, kw)) {
        fast(in, h, w, packed.data(), bias, out.data().data());
        return out;
    }

    std::vector<double> acc(static_cast<std::size_t>(oc_n));
    for (int r = 0; r < h; ++r) {
        double* out_row = out.row_ptr(r, 0);
        for (int c = 0; c < w; ++c)
            conv_cell_generic(in, h, w, packed.data(), bias, oc_n, ic_n, kh, kw, pad_h, pad_w, r, c,
                              acc.data(), out_row + static_cast<std::size_t>(c) * oc_n);
    }
    return out;
}

Tensor relu(const Tensor& input) {
    Tensor out = input;
    for (double& v : out.data())
        v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw PreconditionError("add: shape mismatch");
    Tensor out = a;
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < out.size(); ++i)
        po[i] += pb[i];
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.height() != b.height() || a.width() != b.width())
        throw PreconditionError("concat_channels: spatial shape mismatch");
    Tensor out(a.height(), a.width(), a.channels() + b.channels());
    const int ca = a.channels(), cb = b.channels();
    for (int r = 0; r < a.height(); ++r) {
        for (int c = 0; c < a.width(); ++c) {
            double* dst = out.row_ptr(r, c);
            std::memcpy(dst, a.row_ptr(r, c), sizeof(double) * ca);
            std::memcpy(dst + ca, b.row_ptr(r, c), sizeof(double) * cb);
        }
    }
    return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& t, int first_channels) {
    if (first_channels < 0 || first_channels > t.channels())
        throw PreconditionError("split_channels: channel count out of range");
    Tensor a(t.height(), t.width(), first_channels);
    Tensor b(t.height(), t.width(), t.channels() - first_channels);
    for (int r = 0; r < t.height(); ++r) {
        for (int c = 0; c < t.width(); ++c) {
            const double* src = t.row_ptr(r, c);
            std::memcpy(a.row_ptr(r, c), src, sizeof(double) * first_channels);
            std::memcpy(b.row_ptr(r, c), src + first_channels, sizeof(double) * (t.channels() - first_channels));
        }
    }
    return {std::move(a), std::move(b)};
}

namespace {

// Weight-gradient row segment: wg[oc][ic] += sum_p up[p][oc] * in[p][ic].
// Pixels stream once; accumulator tiles live in registers for a chunk of
// pixels and flush into the per-tap buffer, which stays L1-resident.
template <int OC, int IC, int OCB, int ICB, int CHUNK>
void wgrad_segment(const double* up, const double* in, int n, double* wg) {
    int p0 = 0;
    for (; p0 + CHUNK <= n; p0 += CHUNK) {
        for (int oc0 = 0; oc0 < OC; oc0 += OCB) {
            for (int ic0 = 0; ic0 < IC; ic0 += ICB) {
                double acc[OCB][ICB] = {};
                for (int p = p0; p < p0 + CHUNK; ++p) {
                    const double* u = up + static_cast<std::size_t>(p) * OC + oc0;
                    const double* x = in + static_cast<std::size_t>(p) * IC + ic0;
                    for (int a = 0; a < OCB; ++a) {
                        const double uv = u[a];
                        for (int b = 0; b < ICB; ++b)
                            acc[a][b] += uv * x[b];
                    }
                }
                for (int a = 0; a < OCB; ++a) {
                    double* w = wg + static_cast<std::size_t>(oc0 + a) * IC + ic0;
                    for (int b = 0; b < ICB; ++b)
                        w[b] += acc[a][b];
                }
            }
        }
    }
    for (; p0 < n; ++p0) {
        const double* u = up + static_cast<std::size_t>(p0) * OC;
        const double* x = in + static_cast<std::size_t>(p0) * IC;
        for (int a = 0; a < OC; ++a) {
            const double uv = u[a];
            double* w = wg + static_cast<std::size_t>(a) * IC;
            for (int b = 0; b < IC; ++b)
                w[b] += uv * x[b];
        }
    }
}

void wgrad_segment_generic(const double* up, const double* in, int n, int oc_n, int ic_n, double* wg) {
    for (int p = 0; p < n; ++p) {
        const double* u = up + static_cast<std::size_t>(p) * oc_n;
        const double* x = in + static_cast<std::size_t>(p) * ic_n;
        for (int oc = 0; oc < oc_n; ++oc) {
            const double uv = u[oc];
            double* w = wg + static_cast<std::size_t>(oc) * ic_n;
            for (int ic = 0; ic < ic_n; ++ic)
                w[ic] += uv * x[ic];
        }
    }
}

using WgradSegmentFn = void (*)(const double*, const double*, int, double*);

WgradSegmentFn wgrad_kernel(int oc, int ic) {
    if (oc == 16 && ic == 64) return &wgrad_segment<16, 64, 4, 8, 8>;
    if (oc == 8 && ic == 16) return &wgrad_segment<8, 16, 2, 8, 16>;
    if (oc == 32 && ic == 1) return &wgrad_segment<32, 1, 16, 1, 16>;
    if (oc == 1 && ic == 8) return &wgrad_segment<1, 8, 1, 8, 16>;
    return nullptr;
}

} // namespace

ConvGradients conv2d_same_backward(const Tensor& input, const ConvKernel& kernel, const Tensor& upstream) {
    if (input.channels() != kernel.in_channels)
        throw PreconditionError("conv2d_same_backward: input/kernel channel mismatch");
    if (upstream.height() != input.height() || upstream.width() != input.width() ||
        upstream.channels() != kernel.out_channels)
        throw PreconditionError("conv2d_same_backward: upstream gradient shape mismatch");

    const int h = input.height(), w = input.width();
    const int ic_n = kernel.in_channels, oc_n = kernel.out_channels;
    const int kh = kernel.kernel_height, kw = kernel.kernel_width;
    const int pad_h = (kh - 1) / 2, pad_w = (kw - 1) / 2;

    ConvGradients g;
    g.kernel_grad = ConvKernel(oc_n, ic_n, kh, kw);

    // d/d input: correlate the upstream gradient with the spatially flipped
    // kernel, roles of in/out channels swapped. Reuses the forward kernels.
    ConvKernel flipped(ic_n, oc_n, kh, kw);
    for (int oc = 0; oc < oc_n; ++oc)
        for (int ic = 0; ic < ic_n; ++ic)
            for (int kr = 0; kr < kh; ++kr)
                for (int kc = 0; kc < kw; ++kc)
                    flipped.weight_at(ic, oc, kh - 1 - kr, kw - 1 - kc) = kernel.weight_at(oc, ic, kr, kc);
    g.input_grad = conv2d_same(upstream, flipped);

    // d/d bias: plain sum of the upstream gradient per output channel.
    std::vector<double>& bias_grad = g.kernel_grad.bias;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double* up_px = upstream.row_ptr(r, c);
            for (int oc = 0; oc < oc_n; ++oc)
                bias_grad[oc] += up_px[oc];
        }

    // d/d weights: per tap, accumulate the outer product of upstream and
    // input pixels over the tap's valid region, walking it row by row.
    const WgradSegmentFn fast_segment = wgrad_kernel(oc_n, ic_n);
    std::vector<double> tap_grad(static_cast<std::size_t>(oc_n) * ic_n);
    for (int kr = 0; kr < kh; ++kr) {
        const int r_lo = std::max(0, pad_h - kr);
        const int r_hi = std::min(h, h + pad_h - kr);
        for (int kc = 0; kc < kw; ++kc) {
            const int c_lo = std::max(0, pad_w - kc);
            const int c_hi = std::min(w, w + pad_w - kc);
            std::fill(tap_grad.begin(), tap_grad.end(), 0.0);
            for (int r = r_lo; r < r_hi; ++r) {
                const double* up_row = upstream.row_ptr(r, c_lo);
                const double* in_row = input.row_ptr(r + kr - pad_h, c_lo + kc - pad_w);
                if (fast_segment)
                    fast_segment(up_row, in_row, c_hi - c_lo, tap_grad.data());
                else
                    wgrad_segment_generic(up_row, in_row, c_hi - c_lo, oc_n, ic_n, tap_grad.data());
            }
            for (int oc = 0; oc < oc_n; ++oc)
                for (int ic = 0; ic < ic_n; ++ic)
                    g.kernel_grad.weight_at(oc, ic, kr, kc) = tap_grad[static_cast<std::size_t>(oc) * ic_n + ic];
        }
    }
    return g;
}

Tensor relu_backward(const Tensor& post_activation, const Tensor& upstream) {
    if (!post_activation.same_shape(upstream))
        throw PreconditionError("relu_backward: shape mismatch");
    Tensor out = upstream;
    const double* post = post_activation.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!(post[i] > 0.0))
            po[i] = 0.0;
    return out;
}

} // namespace stresnet
