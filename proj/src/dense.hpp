#pragma once

#include <cstdint>

namespace cffma::dense {

// C = A(m,k) * B(k,n), f64 accumulation per output row.
void mm(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n, bool add_into);

// C = A(m,k) * B(n,k)^T
void mm_bt(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n, bool add_into);

// C = A(k,m)^T * B(k,n)
void mm_at(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n, bool add_into);

}  // namespace cffma::dense
