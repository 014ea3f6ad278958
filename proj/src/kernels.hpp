#pragma once

// Dense row-major matrix kernels used by the convolution layers.

#include <cstddef>

namespace auxseg::kernels {

/// C[m][l] += sum_k A[m][k] * B[k][l], accumulating k in ascending order per element.
/// A is M x K, B is K x L, C is M x L.
void gemm_accumulate(std::size_t m, std::size_t k, std::size_t l, const double* a, const double* b, double* c);

/// C[m][k] += dot(A[m][:], B[k][:]) where A is M x L and B is K x L.
void gemm_dots_accumulate(std::size_t m, std::size_t k, std::size_t l, const double* a, const double* b, double* c);

/// Sum of a contiguous range using fixed-width partial sums.
double sum(const double* x, std::size_t n);

}  // namespace auxseg::kernels
