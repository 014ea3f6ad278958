#pragma once

// Shared fixtures and brute-force oracles for the unit tests.

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "auxseg/layers.hpp"
#include "auxseg/manifest.hpp"
#include "auxseg/rng.hpp"
#include "auxseg/tasks.hpp"
#include "auxseg/tensor.hpp"

namespace auxseg::test {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_data(shape, std::move(v), requires_grad);
}

/// Values bounded away from zero, so relu/abs kinks are not near any stencil.
inline Tensor random_away_from_zero(const Shape& shape, Rng& rng, bool requires_grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        const double mag = rng.uniform(0.1, 1.0);
        x = rng.uniform() < 0.5 ? -mag : mag;
    }
    return Tensor::from_data(shape, std::move(v), requires_grad);
}

inline std::vector<double> to_vector(std::span<const double> s) { return {s.begin(), s.end()}; }

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Direct nested-loop cross-correlation. Accumulates bias first, then
/// (ic, kh, kw) ascending, the order the library guarantees.
inline std::vector<double> conv_oracle(const Tensor& x, const ConvSpec& s) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = (h + 2 * s.padding - s.kernel) / s.stride + 1;
    const std::size_t ow = (w + 2 * s.padding - s.kernel) / s.stride + 1;
    const auto xd = x.data();
    const auto wd = s.weight.data();
    const auto bd = s.bias.data();
    std::vector<double> out(n * s.out_channels * oh * ow);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < s.out_channels; ++o)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xx = 0; xx < ow; ++xx) {
                    double acc = bd[o];
                    for (std::size_t i = 0; i < c; ++i)
                        for (std::size_t kh = 0; kh < s.kernel; ++kh)
                            for (std::size_t kw = 0; kw < s.kernel; ++kw) {
                                const long iy = static_cast<long>(y * s.stride + kh) - static_cast<long>(s.padding);
                                const long ix = static_cast<long>(xx * s.stride + kw) - static_cast<long>(s.padding);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                                acc += wd[((o * c + i) * s.kernel + kh) * s.kernel + kw] *
                                       xd[((b * c + i) * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
                            }
                    out[((b * s.out_channels + o) * oh + y) * ow + xx] = acc;
                }
    return out;
}

/// Scatter form of the transposed convolution.
inline std::vector<double> transposed_conv_oracle(const Tensor& x, const TransposedConvSpec& s) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = s.output_extent(h), ow = s.output_extent(w);
    const auto xd = x.data();
    const auto wd = s.weight.data();
    const auto bd = s.bias.data();
    std::vector<double> out(n * s.out_channels * oh * ow);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < s.out_channels; ++o)
            for (std::size_t i = 0; i < oh * ow; ++i) out[(b * s.out_channels + o) * oh * ow + i] = bd[o];
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx)
                    for (std::size_t o = 0; o < s.out_channels; ++o)
                        for (std::size_t kh = 0; kh < s.kernel; ++kh)
                            for (std::size_t kw = 0; kw < s.kernel; ++kw)
                                out[((b * s.out_channels + o) * oh + y * s.stride + kh) * ow + xx * s.stride + kw] +=
                                    wd[((o * c + i) * s.kernel + kh) * s.kernel + kw] * xd[((b * c + i) * h + y) * w + xx];
    return out;
}

/// Per-pixel tally straight from the definition.
inline std::vector<std::uint64_t> tally_oracle(const std::vector<std::int32_t>& pred, const SegTarget& t,
                                               std::size_t classes) {
    std::vector<std::uint64_t> m(classes * classes, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (t.ignored(i)) continue;
        ++m[static_cast<std::size_t>(t.labels[i]) * classes + static_cast<std::size_t>(pred[i])];
    }
    return m;
}

inline std::filesystem::path temp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "auxseg_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

inline std::string sha256_of(const std::filesystem::path& p) { return sha256_file(p); }

inline double rel_err(double a, double b) {
    const double d = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) / d;
}

}  // namespace auxseg::test
