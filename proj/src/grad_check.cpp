#include "cffma/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cffma/errors.hpp"

namespace cffma {

namespace {

double run_probe(const ScalarFn& f, Tensor& x, double eps, const std::vector<int64_t>& idxs) {
    if (!x.requires_grad()) throw ContractError("grad_check: x must require grad");
    if (eps <= 0.0) throw ContractError("grad_check: eps must be positive");
    x.zero_grad();
    Tensor y = f(x);
    if (y.numel() != 1) throw ContractError("grad_check: f must be scalar-valued");
    y.backward();
    const std::vector<float> analytic(x.grad().begin(), x.grad().end());

    double max_rel = 0.0;
    auto data = x.mutable_data();
    for (int64_t i : idxs) {
        const size_t ii = static_cast<size_t>(i);
        const float orig = data[ii];
        data[ii] = static_cast<float>(orig + eps);
        const double hi = data[ii];
        double fhi;
        {
            NoGradGuard ng;
            PreciseScope ps;
            fhi = f(x).item_f64();
        }
        data[ii] = static_cast<float>(orig - eps);
        const double lo = data[ii];
        double flo;
        {
            NoGradGuard ng;
            PreciseScope ps;
            flo = f(x).item_f64();
        }
        data[ii] = orig;
        const double h = hi - lo;
        if (h == 0.0) throw ContractError("grad_check: eps vanished at f32 precision");
        const double numeric = (fhi - flo) / h;
        const double a = analytic[ii];
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
    }
    x.zero_grad();
    return max_rel;
}

}  // namespace

double grad_check(const ScalarFn& f, Tensor& x, double eps) {
    std::vector<int64_t> idxs(static_cast<size_t>(x.numel()));
    std::iota(idxs.begin(), idxs.end(), 0);
    return run_probe(f, x, eps, idxs);
}

double grad_check_sampled(const ScalarFn& f, Tensor& x, double eps, int64_t max_elems, Rng& rng) {
    const int64_t n = x.numel();
    std::vector<int64_t> idxs(static_cast<size_t>(n));
    std::iota(idxs.begin(), idxs.end(), 0);
    if (max_elems < n) {
        for (int64_t i = 0; i < max_elems; ++i) {
            const int64_t j = i + static_cast<int64_t>(rng.below(static_cast<uint64_t>(n - i)));
            std::swap(idxs[static_cast<size_t>(i)], idxs[static_cast<size_t>(j)]);
        }
        idxs.resize(static_cast<size_t>(max_elems));
    }
    return run_probe(f, x, eps, idxs);
}

}  // namespace cffma
