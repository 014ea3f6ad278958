#include "kernels.hpp"

#include <algorithm>
#include <cstring>

namespace auxseg::kernels {

namespace {
constexpr std::size_t kColumnBlock = 384;
constexpr std::size_t kLanes = 8;
}  // namespace

void gemm_accumulate(std::size_t m, std::size_t k, std::size_t l, const double* a, const double* b, double* c) {
    for (std::size_t l0 = 0; l0 < l; l0 += kColumnBlock) {
        const std::size_t len = std::min(kColumnBlock, l - l0);
        std::size_t row = 0;
        for (; row + 4 <= m; row += 4) {
            double* __restrict c0 = c + (row + 0) * l + l0;
            double* __restrict c1 = c + (row + 1) * l + l0;
            double* __restrict c2 = c + (row + 2) * l + l0;
            double* __restrict c3 = c + (row + 3) * l + l0;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double a0 = a[(row + 0) * k + kk];
                const double a1 = a[(row + 1) * k + kk];
                const double a2 = a[(row + 2) * k + kk];
                const double a3 = a[(row + 3) * k + kk];
                const double* __restrict bp = b + kk * l + l0;
                for (std::size_t p = 0; p < len; ++p) {
                    const double bv = bp[p];
                    c0[p] += a0 * bv;
                    c1[p] += a1 * bv;
                    c2[p] += a2 * bv;
                    c3[p] += a3 * bv;
                }
            }
        }
        for (; row < m; ++row) {
            double* __restrict c0 = c + row * l + l0;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double a0 = a[row * k + kk];
                const double* __restrict bp = b + kk * l + l0;
                for (std::size_t p = 0; p < len; ++p) c0[p] += a0 * bp[p];
            }
        }
    }
}

namespace {

using v4 = double __attribute__((vector_size(32)));

inline v4 load4(const double* p) {
    v4 v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline double hsum(v4 v) { return (v[0] + v[1]) + (v[2] + v[3]); }

double dot(const double* __restrict x, const double* __restrict y, std::size_t n) {
    double acc[kLanes] = {};
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        for (std::size_t j = 0; j < kLanes; ++j) acc[j] += x[i + j] * y[i + j];
    }
    double s = 0.0;
    for (; i < n; ++i) s += x[i] * y[i];
    for (double v : acc) s += v;
    return s;
}

// Dot products of four A rows against two B rows, sharing loads.
void dots_4x2(const double* a, const double* b, std::size_t l, std::size_t k, double* c) {
    const double* a0 = a;
    const double* a1 = a + l;
    const double* a2 = a + 2 * l;
    const double* a3 = a + 3 * l;
    const double* b0 = b;
    const double* b1 = b + l;
    v4 s00{}, s01{}, s10{}, s11{}, s20{}, s21{}, s30{}, s31{};
    std::size_t i = 0;
    for (; i + 4 <= l; i += 4) {
        const v4 x0 = load4(b0 + i);
        const v4 x1 = load4(b1 + i);
        const v4 r0 = load4(a0 + i);
        const v4 r1 = load4(a1 + i);
        const v4 r2 = load4(a2 + i);
        const v4 r3 = load4(a3 + i);
        s00 += r0 * x0;
        s01 += r0 * x1;
        s10 += r1 * x0;
        s11 += r1 * x1;
        s20 += r2 * x0;
        s21 += r2 * x1;
        s30 += r3 * x0;
        s31 += r3 * x1;
    }
    double t[4][2] = {{hsum(s00), hsum(s01)}, {hsum(s10), hsum(s11)}, {hsum(s20), hsum(s21)}, {hsum(s30), hsum(s31)}};
    for (; i < l; ++i) {
        for (std::size_t r = 0; r < 4; ++r) {
            t[r][0] += a[r * l + i] * b0[i];
            t[r][1] += a[r * l + i] * b1[i];
        }
    }
    for (std::size_t r = 0; r < 4; ++r) {
        c[r * k] += t[r][0];
        c[r * k + 1] += t[r][1];
    }
}

}  // namespace

void gemm_dots_accumulate(std::size_t m, std::size_t k, std::size_t l, const double* a, const double* b, double* c) {
    std::size_t row = 0;
    for (; row + 4 <= m; row += 4) {
        std::size_t col = 0;
        for (; col + 2 <= k; col += 2) dots_4x2(a + row * l, b + col * l, l, k, c + row * k + col);
        for (; col < k; ++col) {
            for (std::size_t r = row; r < row + 4; ++r) c[r * k + col] += dot(a + r * l, b + col * l, l);
        }
    }
    for (; row < m; ++row) {
        for (std::size_t col = 0; col < k; ++col) c[row * k + col] += dot(a + row * l, b + col * l, l);
    }
}

double sum(const double* x, std::size_t n) {
    double acc[kLanes] = {};
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        for (std::size_t j = 0; j < kLanes; ++j) acc[j] += x[i + j];
    }
    double s = 0.0;
    for (; i < n; ++i) s += x[i];
    for (double v : acc) s += v;
    return s;
}

}  // namespace auxseg::kernels
