#pragma once

#include <cstddef>

namespace lungnet {

// C[m×n] = A[m×k] · B[k×n] (+ C when accumulate). All operands row-major with
// explicit leading dimensions. Each C element accumulates over k in ascending
// order, so results do not depend on blocking or thread count.
void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
          std::size_t ldb, float* c, std::size_t ldc, bool accumulate = false);

}  // namespace lungnet
