#pragma once

#include <cstddef>

// Plain-loop dense kernels. Each output element accumulates over the inner
// index in increasing order, independent of which other rows are present.
namespace artemis::kernels {

/// c[m x n] (+)= a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

/// c[m x n] (+)= a[m x k] * b[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

/// c[m x n] (+)= a[k x m]^T * b[k x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

void transpose(const double* a, double* out, std::size_t rows, std::size_t cols);

}  // namespace artemis::kernels
