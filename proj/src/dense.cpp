#include "dense.hpp"

#include <vector>

namespace cffma::dense {

void mm(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n, bool add_into) {
    std::vector<double> acc(static_cast<size_t>(n));
    for (int64_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const float* arow = a + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            if (aik == 0.0) continue;
            const float* brow = b + kk * n;
            for (int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += aik * brow[j];
        }
        float* crow = c + i * n;
        if (add_into) {
            for (int64_t j = 0; j < n; ++j) crow[j] += static_cast<float>(acc[static_cast<size_t>(j)]);
        } else {
            for (int64_t j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[static_cast<size_t>(j)]);
        }
    }
}

void mm_bt(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n, bool add_into) {
    for (int64_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        float* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const float* brow = b + j * k;
            double s = 0.0;
            for (int64_t kk = 0; kk < k; ++kk) s += static_cast<double>(arow[kk]) * brow[kk];
            if (add_into)
                crow[j] += static_cast<float>(s);
            else
                crow[j] = static_cast<float>(s);
        }
    }
}

void mm_at(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n, bool add_into) {
    std::vector<double> acc(static_cast<size_t>(m) * static_cast<size_t>(n), 0.0);
    for (int64_t kk = 0; kk < k; ++kk) {
        const float* arow = a + kk * m;
        const float* brow = b + kk * n;
        for (int64_t i = 0; i < m; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* crow = acc.data() + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
        }
    }
    for (int64_t i = 0; i < m * n; ++i) {
        if (add_into)
            c[i] += static_cast<float>(acc[static_cast<size_t>(i)]);
        else
            c[i] = static_cast<float>(acc[static_cast<size_t>(i)]);
    }
}

}  // namespace cffma::dense
