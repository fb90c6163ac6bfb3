#include "lungnet/gemm.hpp"

#include <algorithm>

namespace lungnet {

namespace {

constexpr std::size_t kBlockK = 256;
constexpr std::size_t kBlockN = 512;

// Four rows of C against one k-panel of B. Every B row is loaded once per
// four output rows.
void micro_4xn(std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b, std::size_t ldb,
               float* c, std::size_t ldc) {
    float* __restrict c0 = c;
    float* __restrict c1 = c + ldc;
    float* __restrict c2 = c + 2 * ldc;
    float* __restrict c3 = c + 3 * ldc;
    for (std::size_t p = 0; p < k; ++p) {
        const float a0 = a[p];
        const float a1 = a[lda + p];
        const float a2 = a[2 * lda + p];
        const float a3 = a[3 * lda + p];
        const float* __restrict brow = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) {
            const float bv = brow[j];
            c0[j] += a0 * bv;
            c1[j] += a1 * bv;
            c2[j] += a2 * bv;
            c3[j] += a3 * bv;
        }
    }
}

void micro_1xn(std::size_t n, std::size_t k, const float* a, const float* b, std::size_t ldb, float* c) {
    float* __restrict c0 = c;
    for (std::size_t p = 0; p < k; ++p) {
        const float a0 = a[p];
        const float* __restrict brow = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) {
            c0[j] += a0 * brow[j];
        }
    }
}

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
          std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
    if (!accumulate) {
        for (std::size_t i = 0; i < m; ++i) {
            std::fill_n(c + i * ldc, n, 0.0f);
        }
    }
    if (k == 0) {
        return;
    }
    for (std::size_t jb = 0; jb < n; jb += kBlockN) {
        const std::size_t nb = std::min(kBlockN, n - jb);
        for (std::size_t pb = 0; pb < k; pb += kBlockK) {
            const std::size_t kb = std::min(kBlockK, k - pb);
            std::size_t i = 0;
            for (; i + 4 <= m; i += 4) {
                micro_4xn(nb, kb, a + i * lda + pb, lda, b + pb * ldb + jb, ldb, c + i * ldc + jb, ldc);
            }
            for (; i < m; ++i) {
                micro_1xn(nb, kb, a + i * lda + pb, b + pb * ldb + jb, ldb, c + i * ldc + jb);
            }
        }
    }
}

}  // namespace lungnet
