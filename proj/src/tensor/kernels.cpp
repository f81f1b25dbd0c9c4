#include "artemis/tensor/kernels.hpp"

#include <algorithm>
#include <vector>

namespace artemis::kernels {

namespace {

// Rows are processed four at a time so each b row is loaded once per block.
// The per-element update sequence is the same in the blocked and tail paths.
void gemm_nn_acc(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m,
                 std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    double* c0 = c + (i + 0) * n;
    double* c1 = c + (i + 1) * n;
    double* c2 = c + (i + 2) * n;
    double* c3 = c + (i + 3) * n;
    const double* a0 = a + (i + 0) * k;
    const double* a1 = a + (i + 1) * k;
    const double* a2 = a + (i + 2) * k;
    const double* a3 = a + (i + 3) * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      const double x0 = a0[p];
      const double x1 = a1[p];
      const double x2 = a2[p];
      const double x3 = a3[p];
      for (std::size_t j = 0; j < n; ++j) {
        const double bv = brow[j];
        c0[j] += x0 * bv;
        c1[j] += x1 * bv;
        c2[j] += x2 * bv;
        c3[j] += x3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      const double x = ai[p];
      for (std::size_t j = 0; j < n; ++j) {
        ci[j] += x * brow[j];
      }
    }
  }
}

}  // namespace

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  if (!accumulate) {
    std::fill(c, c + m * n, 0.0);
  }
  gemm_nn_acc(a, b, c, m, k, n);
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  thread_local std::vector<double> bt;
  bt.resize(k * n);
  transpose(b, bt.data(), n, k);
  gemm_nn(a, bt.data(), c, m, k, n, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  if (!accumulate) {
    std::fill(c, c + m * n, 0.0);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double x = arow[i];
      if (x == 0.0) {
        continue;
      }
      double* __restrict ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        ci[j] += x * brow[j];
      }
    }
  }
}

void transpose(const double* a, double* out, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[c * rows + r] = a[r * cols + c];
    }
  }
}

}  // namespace artemis::kernels
