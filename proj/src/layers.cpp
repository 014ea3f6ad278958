#include "auxseg/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <memory>
#include <vector>

#include "kernels.hpp"

namespace auxseg {

namespace {

struct Nchw {
    std::size_t n, c, h, w;
};

Nchw require_nchw(const Tensor& t, const char* op) {
    if (t.rank() != 4) {
        throw std::invalid_argument(std::string(op) + ": expected NCHW input, got shape " +
                                    shape_to_string(t.shape()));
    }
    return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = (2.0 * rng.uniform() - 1.0) * bound;
    return Tensor::from_data(std::move(shape), std::move(values), true);
}

// Range of output columns `o` with 0 <= o * stride + offset < extent.
struct ColumnRange {
    std::size_t lo, hi;
};

ColumnRange valid_columns(std::ptrdiff_t offset, std::size_t stride, std::size_t extent, std::size_t out_extent) {
    const auto s = static_cast<std::ptrdiff_t>(stride);
    std::ptrdiff_t lo = 0;
    if (offset < 0) lo = (-offset + s - 1) / s;
    const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(extent) - 1 - offset;
    std::ptrdiff_t hi = last < 0 ? 0 : last / s + 1;
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out_extent));
    if (hi < lo) hi = lo;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

struct ConvGeometry {
    Nchw in;
    std::size_t out_c, out_h, out_w, k, stride, pad;

    std::size_t patch() const { return in.c * k * k; }
    std::size_t columns() const { return in.n * out_h * out_w; }
};

// col[r][q] with r = (ic*k + kh)*k + kw and q = (n*out_h + oh)*out_w + ow holds
// x[n, ic, oh*s + kh - p, ow*s + kw - p], or 0 outside the input.
std::vector<double> im2col(const ConvGeometry& g, const double* x) {
    const std::size_t out_plane = g.out_h * g.out_w;
    const std::size_t cols = g.columns();
    std::vector<double> col(g.patch() * cols, 0.0);
    for (std::size_t ic = 0; ic < g.in.c; ++ic) {
        for (std::size_t kh = 0; kh < g.k; ++kh) {
            const auto rows = valid_columns(static_cast<std::ptrdiff_t>(kh) - static_cast<std::ptrdiff_t>(g.pad),
                                            g.stride, g.in.h, g.out_h);
            for (std::size_t kw = 0; kw < g.k; ++kw) {
                const std::ptrdiff_t col_off = static_cast<std::ptrdiff_t>(kw) - static_cast<std::ptrdiff_t>(g.pad);
                const auto cr = valid_columns(col_off, g.stride, g.in.w, g.out_w);
                double* dst = col.data() + ((ic * g.k + kh) * g.k + kw) * cols;
                for (std::size_t n = 0; n < g.in.n; ++n) {
                    const double* xp = x + (n * g.in.c + ic) * g.in.h * g.in.w;
                    for (std::size_t oh = rows.lo; oh < rows.hi; ++oh) {
                        const double* xr = xp + (oh * g.stride + kh - g.pad) * g.in.w;
                        double* d = dst + n * out_plane + oh * g.out_w;
                        if (g.stride == 1) {
                            std::copy(xr + static_cast<std::ptrdiff_t>(cr.lo) + col_off,
                                      xr + static_cast<std::ptrdiff_t>(cr.hi) + col_off, d + cr.lo);
                        } else {
                            for (std::size_t ow = cr.lo; ow < cr.hi; ++ow) {
                                d[ow] = xr[static_cast<std::ptrdiff_t>(ow * g.stride) + col_off];
                            }
                        }
                    }
                }
            }
        }
    }
    return col;
}

// Adjoint of im2col: scatter-adds col back into dx [N, C, H, W].
void col2im_add(const ConvGeometry& g, const double* col, double* dx) {
    const std::size_t out_plane = g.out_h * g.out_w;
    const std::size_t cols = g.columns();
    for (std::size_t ic = 0; ic < g.in.c; ++ic) {
        for (std::size_t kh = 0; kh < g.k; ++kh) {
            const auto rows = valid_columns(static_cast<std::ptrdiff_t>(kh) - static_cast<std::ptrdiff_t>(g.pad),
                                            g.stride, g.in.h, g.out_h);
            for (std::size_t kw = 0; kw < g.k; ++kw) {
                const std::ptrdiff_t col_off = static_cast<std::ptrdiff_t>(kw) - static_cast<std::ptrdiff_t>(g.pad);
                const auto cr = valid_columns(col_off, g.stride, g.in.w, g.out_w);
                const double* src = col + ((ic * g.k + kh) * g.k + kw) * cols;
                for (std::size_t n = 0; n < g.in.n; ++n) {
                    double* xp = dx + (n * g.in.c + ic) * g.in.h * g.in.w;
                    for (std::size_t oh = rows.lo; oh < rows.hi; ++oh) {
                        double* xr = xp + (oh * g.stride + kh - g.pad) * g.in.w;
                        const double* s = src + n * out_plane + oh * g.out_w;
                        if (g.stride == 1) {
                            double* xs = xr + col_off;
                            for (std::size_t ow = cr.lo; ow < cr.hi; ++ow) xs[ow] += s[ow];
                        } else {
                            for (std::size_t ow = cr.lo; ow < cr.hi; ++ow) {
                                xr[static_cast<std::ptrdiff_t>(ow * g.stride) + col_off] += s[ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

// [N][C][P] <-> [C][N*P]
std::vector<double> channels_major(const double* x, std::size_t n, std::size_t c, std::size_t plane) {
    std::vector<double> out(n * c * plane);
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            std::copy_n(x + (b * c + ch) * plane, plane, out.data() + ch * n * plane + b * plane);
        }
    }
    return out;
}

void add_batch_major(const double* x, std::size_t n, std::size_t c, std::size_t plane, double* out) {
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* src = x + ch * n * plane + b * plane;
            double* dst = out + (b * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
        }
    }
}

}  // namespace

// Specs -----------------------------------------------------------------------------

ConvSpec ConvSpec::make(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                        std::size_t padding, Rng& rng) {
    if (in == 0 || out == 0 || kernel == 0 || stride == 0) {
        throw std::invalid_argument("ConvSpec: channels, kernel and stride must be positive");
    }
    ConvSpec spec;
    spec.in_channels = in;
    spec.out_channels = out;
    spec.kernel = kernel;
    spec.stride = stride;
    spec.padding = padding;
    spec.weight = kaiming_uniform({out, in, kernel, kernel}, in * kernel * kernel, rng);
    spec.bias = Tensor::zeros({out}, true);
    return spec;
}

std::size_t ConvSpec::output_extent(std::size_t input_extent) const {
    if (input_extent + 2 * padding < kernel) {
        throw std::invalid_argument("conv2d: input extent " + std::to_string(input_extent) +
                                    " smaller than kernel " + std::to_string(kernel));
    }
    return (input_extent + 2 * padding - kernel) / stride + 1;
}

TransposedConvSpec TransposedConvSpec::make(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                                            Rng& rng) {
    if (in == 0 || out == 0 || kernel == 0 || stride == 0) {
        throw std::invalid_argument("TransposedConvSpec: channels, kernel and stride must be positive");
    }
    TransposedConvSpec spec;
    spec.in_channels = in;
    spec.out_channels = out;
    spec.kernel = kernel;
    spec.stride = stride;
    spec.weight = kaiming_uniform({out, in, kernel, kernel}, in * kernel * kernel, rng);
    spec.bias = Tensor::zeros({out}, true);
    return spec;
}

// conv2d -------------------------------------------------------------------------

Tensor conv2d(const Tensor& input, const ConvSpec& spec) {
    const Nchw in = require_nchw(input, "conv2d");
    if (in.c != spec.in_channels) {
        throw std::invalid_argument("conv2d: input has " + std::to_string(in.c) + " channels, layer expects " +
                                    std::to_string(spec.in_channels));
    }
    const Shape wshape{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
    if (spec.weight.shape() != wshape || spec.bias.shape() != Shape{spec.out_channels}) {
        throw std::invalid_argument("conv2d: weight/bias shapes do not match the layer spec");
    }
    const ConvGeometry g{in, spec.out_channels, spec.output_extent(in.h), spec.output_extent(in.w),
                         spec.kernel, spec.stride, spec.padding};
    const std::size_t cols = g.columns();
    const std::size_t out_plane = g.out_h * g.out_w;

    // Each output starts at its bias and accumulates (ic, kh, kw) in ascending order.
    auto col = std::make_shared<std::vector<double>>(im2col(g, input.data().data()));
    std::vector<double> out_cm(g.out_c * cols);
    const double* b = spec.bias.data().data();
    for (std::size_t oc = 0; oc < g.out_c; ++oc) std::fill_n(out_cm.data() + oc * cols, cols, b[oc]);
    kernels::gemm_accumulate(g.out_c, g.patch(), cols, spec.weight.data().data(), col->data(), out_cm.data());

    std::vector<double> out(in.n * g.out_c * out_plane, 0.0);
    add_batch_major(out_cm.data(), in.n, g.out_c, out_plane, out.data());

    const Tensor weight = spec.weight;
    const Tensor bias = spec.bias;
    return Tensor::make_result(
        {in.n, g.out_c, g.out_h, g.out_w}, std::move(out), "conv2d", {input, weight, bias},
        [input, weight, bias, g, col, cols, out_plane](std::span<const double> gout, std::span<const double>) {
            const auto g_cm = channels_major(gout.data(), g.in.n, g.out_c, out_plane);
            if (bias.requires_grad()) {
                auto gb = bias.grad_buffer();
                for (std::size_t oc = 0; oc < g.out_c; ++oc) gb[oc] += kernels::sum(g_cm.data() + oc * cols, cols);
            }
            if (weight.requires_grad()) {
                kernels::gemm_dots_accumulate(g.out_c, g.patch(), cols, g_cm.data(), col->data(),
                                              weight.grad_buffer().data());
            }
            if (input.requires_grad()) {
                const std::size_t patch = g.patch();
                const auto w = weight.data();
                std::vector<double> wt(patch * g.out_c);
                for (std::size_t oc = 0; oc < g.out_c; ++oc) {
                    for (std::size_t r = 0; r < patch; ++r) wt[r * g.out_c + oc] = w[oc * patch + r];
                }
                std::vector<double> dcol(patch * cols, 0.0);
                kernels::gemm_accumulate(patch, g.out_c, cols, wt.data(), g_cm.data(), dcol.data());
                col2im_add(g, dcol.data(), input.grad_buffer().data());
            }
        });
}

// transposed_conv2d ------------------------------------------------------------------

Tensor transposed_conv2d(const Tensor& input, const TransposedConvSpec& spec) {
    const Nchw in = require_nchw(input, "transposed_conv2d");
    if (in.c != spec.in_channels) {
        throw std::invalid_argument("transposed_conv2d: input has " + std::to_string(in.c) +
                                    " channels, layer expects " + std::to_string(spec.in_channels));
    }
    const Shape wshape{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
    if (spec.weight.shape() != wshape || spec.bias.shape() != Shape{spec.out_channels}) {
        throw std::invalid_argument("transposed_conv2d: weight/bias shapes do not match the layer spec");
    }
    const std::size_t oc_n = spec.out_channels;
    const std::size_t k = spec.kernel;
    const std::size_t oh_n = spec.output_extent(in.h);
    const std::size_t ow_n = spec.output_extent(in.w);
    const std::size_t in_plane = in.h * in.w;
    const std::size_t out_plane = oh_n * ow_n;

    // The upsampling is the adjoint of a stride-s convolution from the output
    // grid back to the input grid, so it is expressed through that geometry.
    const ConvGeometry g{{in.n, oc_n, oh_n, ow_n}, in.c, in.h, in.w, k, spec.stride, 0};
    const std::size_t cols = g.columns();
    const std::size_t patch = g.patch();  // oc * k * k

    // wr[(oc, kh, kw)][ic] = w[oc, ic, kh, kw]
    const auto w = spec.weight.data();
    std::vector<double> wr(patch * in.c);
    for (std::size_t oc = 0; oc < oc_n; ++oc) {
        for (std::size_t ic = 0; ic < in.c; ++ic) {
            for (std::size_t r = 0; r < k * k; ++r) wr[(oc * k * k + r) * in.c + ic] = w[(oc * in.c + ic) * k * k + r];
        }
    }
    auto x_cm = std::make_shared<std::vector<double>>(channels_major(input.data().data(), in.n, in.c, in_plane));
    std::vector<double> ycol(patch * cols, 0.0);
    kernels::gemm_accumulate(patch, in.c, cols, wr.data(), x_cm->data(), ycol.data());

    std::vector<double> out(in.n * oc_n * out_plane);
    const double* b = spec.bias.data().data();
    for (std::size_t n = 0; n < in.n; ++n) {
        for (std::size_t oc = 0; oc < oc_n; ++oc) std::fill_n(out.data() + (n * oc_n + oc) * out_plane, out_plane, b[oc]);
    }
    col2im_add(g, ycol.data(), out.data());

    const Tensor weight = spec.weight;
    const Tensor bias = spec.bias;
    return Tensor::make_result(
        {in.n, oc_n, oh_n, ow_n}, std::move(out), "transposed_conv2d", {input, weight, bias},
        [input, weight, bias, g, in, x_cm, wr = std::move(wr), cols, patch, k, in_plane, out_plane](
            std::span<const double> gout, std::span<const double>) {
            const std::size_t oc_n = g.in.c;
            if (bias.requires_grad()) {
                auto gb = bias.grad_buffer();
                for (std::size_t n = 0; n < in.n; ++n) {
                    for (std::size_t oc = 0; oc < oc_n; ++oc) {
                        gb[oc] += kernels::sum(gout.data() + (n * oc_n + oc) * out_plane, out_plane);
                    }
                }
            }
            const auto gcol = im2col(g, gout.data());
            if (weight.requires_grad()) {
                std::vector<double> gwr(patch * in.c, 0.0);
                kernels::gemm_dots_accumulate(patch, in.c, cols, gcol.data(), x_cm->data(), gwr.data());
                auto gw = weight.grad_buffer();
                for (std::size_t oc = 0; oc < oc_n; ++oc) {
                    for (std::size_t ic = 0; ic < in.c; ++ic) {
                        for (std::size_t r = 0; r < k * k; ++r) {
                            gw[(oc * in.c + ic) * k * k + r] += gwr[(oc * k * k + r) * in.c + ic];
                        }
                    }
                }
            }
            if (input.requires_grad()) {
                std::vector<double> wrt(in.c * patch);
                for (std::size_t r = 0; r < patch; ++r) {
                    for (std::size_t ic = 0; ic < in.c; ++ic) wrt[ic * patch + r] = wr[r * in.c + ic];
                }
                std::vector<double> gx_cm(in.c * cols, 0.0);
                kernels::gemm_accumulate(in.c, patch, cols, wrt.data(), gcol.data(), gx_cm.data());
                add_batch_major(gx_cm.data(), in.n, in.c, in_plane, input.grad_buffer().data());
            }
        });
}

// maxpool2 -------------------------------------------------------------------------

Tensor maxpool2(const Tensor& input) {
    const Nchw in = require_nchw(input, "maxpool2");
    if (in.h % 2 != 0 || in.w % 2 != 0) {
        throw std::invalid_argument("maxpool2: spatial extents must be even, got " + shape_to_string(input.shape()));
    }
    const std::size_t oh_n = in.h / 2;
    const std::size_t ow_n = in.w / 2;
    const std::size_t planes = in.n * in.c;
    const double* x = input.data().data();
    std::vector<double> out(planes * oh_n * ow_n);
    std::vector<std::uint32_t> argmax(out.size());
    auto& branches = detail::branch_state();
    for (std::size_t p = 0; p < planes; ++p) {
        const double* xp = x + p * in.h * in.w;
        for (std::size_t oh = 0; oh < oh_n; ++oh) {
            for (std::size_t ow = 0; ow < ow_n; ++ow) {
                const std::size_t base = (2 * oh) * in.w + 2 * ow;
                const std::size_t candidates[4] = {base, base + 1, base + in.w, base + in.w + 1};
                std::size_t best = 0;
                for (std::size_t c = 1; c < 4; ++c) {
                    if (xp[candidates[c]] > xp[candidates[best]]) best = c;
                }
                const std::size_t o = (p * oh_n + oh) * ow_n + ow;
                out[o] = xp[candidates[best]];
                argmax[o] = static_cast<std::uint32_t>(p * in.h * in.w + candidates[best]);
                if (branches.active) detail::note_branch(branches, best);
            }
        }
    }
    return Tensor::make_result({in.n, in.c, oh_n, ow_n}, std::move(out), "maxpool2", {input},
                               [input, argmax = std::move(argmax)](std::span<const double> g, std::span<const double>) {
                                   auto gx = input.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
                               });
}

// softmax_channels ---------------------------------------------------------------

Tensor softmax_channels(const Tensor& input) {
    const Nchw in = require_nchw(input, "softmax_channels");
    if (in.c < 2) throw std::invalid_argument("softmax_channels: need at least 2 channels");
    const std::size_t plane = in.h * in.w;
    const auto x = input.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i])) {
            throw std::domain_error("softmax_channels: non-finite logit at index " + std::to_string(i));
        }
    }
    std::vector<double> y(x.size());
    for (std::size_t n = 0; n < in.n; ++n) {
        const std::size_t base = n * in.c * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            double m = x[base + p];
            for (std::size_t c = 1; c < in.c; ++c) m = std::max(m, x[base + c * plane + p]);
            double z = 0.0;
            for (std::size_t c = 0; c < in.c; ++c) {
                const double e = std::exp(x[base + c * plane + p] - m);
                y[base + c * plane + p] = e;
                z += e;
            }
            for (std::size_t c = 0; c < in.c; ++c) y[base + c * plane + p] /= z;
        }
    }
    return Tensor::make_result(input.shape(), std::move(y), "softmax_channels", {input},
                               [input, in, plane](std::span<const double> g, std::span<const double> y) {
                                   auto gx = input.grad_buffer();
                                   for (std::size_t n = 0; n < in.n; ++n) {
                                       const std::size_t base = n * in.c * plane;
                                       for (std::size_t p = 0; p < plane; ++p) {
                                           double dot = 0.0;
                                           for (std::size_t c = 0; c < in.c; ++c) {
                                               dot += g[base + c * plane + p] * y[base + c * plane + p];
                                           }
                                           for (std::size_t c = 0; c < in.c; ++c) {
                                               const std::size_t i = base + c * plane + p;
                                               gx[i] += y[i] * (g[i] - dot);
                                           }
                                       }
                                   }
                               });
}

// concat / slice ------------------------------------------------------------------

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const Nchw sa = require_nchw(a, "concat_channels");
    const Nchw sb = require_nchw(b, "concat_channels");
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
        throw std::invalid_argument("concat_channels: mismatched N/H/W " + shape_to_string(a.shape()) + " vs " +
                                    shape_to_string(b.shape()));
    }
    const std::size_t plane = sa.h * sa.w;
    const std::size_t chunk_a = sa.c * plane;
    const std::size_t chunk_b = sb.c * plane;
    std::vector<double> out;
    out.reserve(sa.n * (chunk_a + chunk_b));
    for (std::size_t n = 0; n < sa.n; ++n) {
        const auto da = a.data().subspan(n * chunk_a, chunk_a);
        const auto db = b.data().subspan(n * chunk_b, chunk_b);
        out.insert(out.end(), da.begin(), da.end());
        out.insert(out.end(), db.begin(), db.end());
    }
    return Tensor::make_result({sa.n, sa.c + sb.c, sa.h, sa.w}, std::move(out), "concat_channels", {a, b},
                               [a, b, n_batch = sa.n, chunk_a, chunk_b](std::span<const double> g,
                                                                        std::span<const double>) {
                                   for (std::size_t n = 0; n < n_batch; ++n) {
                                       const double* gp = g.data() + n * (chunk_a + chunk_b);
                                       if (a.requires_grad()) {
                                           double* ga = a.grad_buffer().data() + n * chunk_a;
                                           for (std::size_t i = 0; i < chunk_a; ++i) ga[i] += gp[i];
                                       }
                                       if (b.requires_grad()) {
                                           double* gb = b.grad_buffer().data() + n * chunk_b;
                                           for (std::size_t i = 0; i < chunk_b; ++i) gb[i] += gp[chunk_a + i];
                                       }
                                   }
                               });
}

Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t end) {
    const Nchw in = require_nchw(input, "slice_channels");
    if (begin >= end || end > in.c) {
        throw std::invalid_argument("slice_channels: invalid range [" + std::to_string(begin) + ", " +
                                    std::to_string(end) + ") for " + std::to_string(in.c) + " channels");
    }
    const std::size_t plane = in.h * in.w;
    const std::size_t width = end - begin;
    std::vector<double> out;
    out.reserve(in.n * width * plane);
    for (std::size_t n = 0; n < in.n; ++n) {
        const auto src = input.data().subspan((n * in.c + begin) * plane, width * plane);
        out.insert(out.end(), src.begin(), src.end());
    }
    return Tensor::make_result({in.n, width, in.h, in.w}, std::move(out), "slice_channels", {input},
                               [input, in, begin, width, plane](std::span<const double> g, std::span<const double>) {
                                   auto gx = input.grad_buffer();
                                   for (std::size_t n = 0; n < in.n; ++n) {
                                       double* dst = gx.data() + (n * in.c + begin) * plane;
                                       const double* src = g.data() + n * width * plane;
                                       for (std::size_t i = 0; i < width * plane; ++i) dst[i] += src[i];
                                   }
                               });
}

}  // namespace auxseg
