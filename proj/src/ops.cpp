#include "cffma/ops.hpp"

#include <cmath>
#include <limits>

#include "cffma/errors.hpp"
#include "cffma/rng.hpp"
#include "dense.hpp"

namespace cffma {

namespace debug {
bool fault_injection = false;
}

using detail::GradFn;
using detail::TensorImpl;

namespace detail {

Tensor make_op(Shape shape, std::vector<float> data, std::vector<Tensor> parents, GradFn fn,
               std::optional<double> f64_shadow, std::vector<double> precise) {
    Tensor t = Tensor::from_data(std::move(shape), std::move(data));
    t.impl()->scalar_f64 = f64_shadow;
    if (!precise.empty()) t.impl()->f64 = std::make_shared<std::vector<double>>(std::move(precise));
    if (!grad_enabled()) return t;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any || !fn) return t;
    auto impl = t.impl();
    impl->requires_grad = true;
    impl->parents.reserve(parents.size());
    for (auto& p : parents) impl->parents.push_back(p.impl());
    impl->grad_fn = std::move(fn);
    return t;
}

}  // namespace detail

namespace {

// Reads a tensor's f64 shadow, widening the f32 data when none was recorded
// (leaves, or values produced outside a PreciseScope).
const double* shadow_ptr(const Tensor& t, std::vector<double>& scratch) {
    if (t.impl()->f64) return t.impl()->f64->data();
    auto d = t.data();
    scratch.assign(d.begin(), d.end());
    return scratch.data();
}

// Unified rank-2 broadcast view: out element (i,j) reads a[i*a_rs + j*a_cs]
// and b[i*b_rs + j*b_cs]. Reduction in backward falls out of accumulation.
struct Bcast {
    Shape out_shape;
    int64_t m = 0, n = 0;
    int64_t a_rs = 0, a_cs = 0, b_rs = 0, b_cs = 0;
};

Bcast plan_bcast(const Tensor& a, const Tensor& b, const char* op) {
    Bcast p;
    if (a.shape() == b.shape()) {
        p.out_shape = a.shape();
        p.m = 1;
        p.n = a.numel();
        p.a_cs = p.b_cs = 1;
        return p;
    }
    if (a.numel() == 1) {
        p.out_shape = b.shape();
        p.m = 1;
        p.n = b.numel();
        p.b_cs = 1;
        return p;
    }
    if (b.numel() == 1) {
        p.out_shape = a.shape();
        p.m = 1;
        p.n = a.numel();
        p.a_cs = 1;
        return p;
    }
    if (a.ndim() == 2 && b.ndim() == 2) {
        const int64_t am = a.dim(0), an = a.dim(1), bm = b.dim(0), bn = b.dim(1);
        const int64_t m = std::max(am, bm), n = std::max(an, bn);
        if ((am != m && am != 1) || (an != n && an != 1) || (bm != m && bm != 1) ||
            (bn != n && bn != 1)) {
            throw DimError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                           shape_str(b.shape()) + " do not broadcast");
        }
        p.out_shape = {m, n};
        p.m = m;
        p.n = n;
        p.a_rs = (am == 1) ? 0 : an;
        p.a_cs = (an == 1) ? 0 : 1;
        p.b_rs = (bm == 1) ? 0 : bn;
        p.b_cs = (bn == 1) ? 0 : 1;
        return p;
    }
    throw DimError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()) + " do not broadcast");
}

template <class T, class F>
void bcast_apply(const Bcast& p, const T* a, const T* b, T* out, F f) {
    for (int64_t i = 0; i < p.m; ++i)
        for (int64_t j = 0; j < p.n; ++j)
            out[static_cast<size_t>(i * p.n + j)] =
                f(a[static_cast<size_t>(i * p.a_rs + j * p.a_cs)],
                  b[static_cast<size_t>(i * p.b_rs + j * p.b_cs)]);
}

template <class F>
Tensor binary_op(const Tensor& a, const Tensor& b, const Bcast& p, F f, GradFn fn,
                 std::optional<double> scalar_shadow) {
    std::vector<float> out(static_cast<size_t>(p.m * p.n));
    bcast_apply(p, a.data().data(), b.data().data(), out.data(), f);
    std::vector<double> precise;
    if (precise_enabled()) {
        std::vector<double> sa, sb;
        const double* ap = shadow_ptr(a, sa);
        const double* bp = shadow_ptr(b, sb);
        precise.resize(out.size());
        bcast_apply(p, ap, bp, precise.data(), f);
    }
    return detail::make_op(p.out_shape, std::move(out), {a, b}, std::move(fn), scalar_shadow,
                           std::move(precise));
}

template <class F>
Tensor unary_op(const Tensor& x, F f, GradFn fn,
                std::optional<double> scalar_shadow = std::nullopt) {
    std::vector<float> out(static_cast<size_t>(x.numel()));
    auto xd = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
    std::vector<double> precise;
    if (precise_enabled()) {
        std::vector<double> sx;
        const double* xp = shadow_ptr(x, sx);
        precise.resize(out.size());
        for (size_t i = 0; i < out.size(); ++i) precise[i] = f(xp[i]);
    }
    return detail::make_op(x.shape(), std::move(out), {x}, std::move(fn), scalar_shadow,
                           std::move(precise));
}

// For pure index-shuffling ops: fills dst[i] = src[src_of(i)] on both the
// f32 data and the shadow.
template <class M>
Tensor gather_op(const Tensor& x, Shape out_shape, M src_of, GradFn fn) {
    const int64_t n = shape_numel(out_shape);
    std::vector<float> out(static_cast<size_t>(n));
    auto xd = x.data();
    for (int64_t i = 0; i < n; ++i)
        out[static_cast<size_t>(i)] = xd[static_cast<size_t>(src_of(i))];
    std::vector<double> precise;
    if (precise_enabled()) {
        std::vector<double> sx;
        const double* xp = shadow_ptr(x, sx);
        precise.resize(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i)
            precise[static_cast<size_t>(i)] = xp[static_cast<size_t>(src_of(i))];
    }
    return detail::make_op(std::move(out_shape), std::move(out), {x}, std::move(fn), std::nullopt,
                           std::move(precise));
}

std::optional<double> scalar_shadow_binary(const Tensor& a, const Tensor& b, char kind) {
    if (a.numel() != 1 || b.numel() != 1) return std::nullopt;
    const double x = a.item_f64(), y = b.item_f64();
    switch (kind) {
        case '+': return x + y;
        case '-': return x - y;
        case '*': return x * y;
    }
    return std::nullopt;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    const Bcast p = plan_bcast(a, b, "add");
    return binary_op(
        a, b, p, [](auto x, auto y) { return x + y; },
        [p](const TensorImpl&, const std::vector<float>& g,
            const std::vector<std::vector<float>*>& pg) {
            for (int64_t i = 0; i < p.m; ++i)
                for (int64_t j = 0; j < p.n; ++j) {
                    const float gv = g[static_cast<size_t>(i * p.n + j)];
                    if (pg[0]) (*pg[0])[static_cast<size_t>(i * p.a_rs + j * p.a_cs)] += gv;
                    if (pg[1]) (*pg[1])[static_cast<size_t>(i * p.b_rs + j * p.b_cs)] += gv;
                }
        },
        scalar_shadow_binary(a, b, '+'));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    const Bcast p = plan_bcast(a, b, "sub");
    return binary_op(
        a, b, p, [](auto x, auto y) { return x - y; },
        [p](const TensorImpl&, const std::vector<float>& g,
            const std::vector<std::vector<float>*>& pg) {
            for (int64_t i = 0; i < p.m; ++i)
                for (int64_t j = 0; j < p.n; ++j) {
                    const float gv = g[static_cast<size_t>(i * p.n + j)];
                    if (pg[0]) (*pg[0])[static_cast<size_t>(i * p.a_rs + j * p.a_cs)] += gv;
                    if (pg[1]) (*pg[1])[static_cast<size_t>(i * p.b_rs + j * p.b_cs)] -= gv;
                }
        },
        scalar_shadow_binary(a, b, '-'));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const Bcast p = plan_bcast(a, b, "mul");
    return binary_op(
        a, b, p, [](auto x, auto y) { return x * y; },
        [p](const TensorImpl& o, const std::vector<float>& g,
            const std::vector<std::vector<float>*>& pg) {
            const auto& av = o.parents[0]->data;
            const auto& bv = o.parents[1]->data;
            for (int64_t i = 0; i < p.m; ++i)
                for (int64_t j = 0; j < p.n; ++j) {
                    const float gv = g[static_cast<size_t>(i * p.n + j)];
                    const size_t ai = static_cast<size_t>(i * p.a_rs + j * p.a_cs);
                    const size_t bi = static_cast<size_t>(i * p.b_rs + j * p.b_cs);
                    if (pg[0]) (*pg[0])[ai] += gv * bv[bi];
                    if (pg[1]) (*pg[1])[bi] += gv * av[ai];
                }
        },
        scalar_shadow_binary(a, b, '*'));
}

Tensor scale(const Tensor& x, double c) {
    std::optional<double> shadow;
    if (x.numel() == 1) shadow = x.item_f64() * c;
    return unary_op(
        x, [c](auto v) { return static_cast<decltype(v)>(v * c); },
        [c](const TensorImpl&, const std::vector<float>& g,
            const std::vector<std::vector<float>*>& pg) {
            if (!pg[0]) return;
            for (size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += static_cast<float>(g[i] * c);
        },
        shadow);
}

Tensor add_scalar(const Tensor& x, double c) {
    std::optional<double> shadow;
    if (x.numel() == 1) shadow = x.item_f64() + c;
    return unary_op(
        x, [c](auto v) { return static_cast<decltype(v)>(v + c); },
        [](const TensorImpl&, const std::vector<float>& g,
           const std::vector<std::vector<float>*>& pg) {
            if (!pg[0]) return;
            for (size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
        },
        shadow);
}

Tensor relu(const Tensor& x) {
    return unary_op(x, [](auto v) { return v > 0 ? v : decltype(v)(0); },
                    [](const TensorImpl& o, const std::vector<float>& g,
                       const std::vector<std::vector<float>*>& pg) {
                        if (!pg[0]) return;
                        const auto& xd = o.parents[0]->data;
                        for (size_t i = 0; i < g.size(); ++i)
                            if (xd[i] > 0.0f) (*pg[0])[i] += g[i];
                    });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        x,
        [](auto v) {
            using T = decltype(v);
            return static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
        },
        [](const TensorImpl& o, const std::vector<float>& g,
           const std::vector<std::vector<float>*>& pg) {
            if (!pg[0]) return;
            const float corrupt = debug::fault_injection ? 2.0f : 1.0f;
            for (size_t i = 0; i < g.size(); ++i) {
                const float y = o.data[i];
                (*pg[0])[i] += corrupt * g[i] * y * (1.0f - y);
            }
        });
}

Tensor prelu(const Tensor& x, const Tensor& slope) {
    if (slope.numel() != 1) throw DimError("prelu: slope must be a 1-element tensor");
    const float s = slope.item();
    std::vector<float> out(static_cast<size_t>(x.numel()));
    auto xd = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0f ? xd[i] : s * xd[i];
    std::vector<double> precise;
    if (precise_enabled()) {
        std::vector<double> sx, ss;
        const double* xp = shadow_ptr(x, sx);
        const double sv = shadow_ptr(slope, ss)[0];
        precise.resize(out.size());
        for (size_t i = 0; i < out.size(); ++i) precise[i] = xp[i] > 0.0 ? xp[i] : sv * xp[i];
    }
    return detail::make_op(
        x.shape(), std::move(out), {x, slope},
        [](const TensorImpl& o, const std::vector<float>& g,
           const std::vector<std::vector<float>*>& pg) {
            const auto& xd = o.parents[0]->data;
            const float sv = o.parents[1]->data[0];
            double gs = 0.0;
            for (size_t i = 0; i < g.size(); ++i) {
                if (xd[i] > 0.0f) {
                    if (pg[0]) (*pg[0])[i] += g[i];
                } else {
                    if (pg[0]) (*pg[0])[i] += g[i] * sv;
                    gs += static_cast<double>(g[i]) * xd[i];
                }
            }
            if (pg[1]) (*pg[1])[0] += static_cast<float>(gs);
        },
        std::nullopt, std::move(precise));
}

Tensor abs(const Tensor& x) {
    return unary_op(x, [](auto v) { return v < 0 ? -v : v; },
                    [](const TensorImpl& o, const std::vector<float>& g,
                       const std::vector<std::vector<float>*>& pg) {
                        if (!pg[0]) return;
                        const auto& xd = o.parents[0]->data;
                        for (size_t i = 0; i < g.size(); ++i) {
                            if (xd[i] > 0.0f)
                                (*pg[0])[i] += g[i];
                            else if (xd[i] < 0.0f)
                                (*pg[0])[i] -= g[i];
                        }
                    });
}

Tensor log(const Tensor& x) {
    std::optional<double> shadow;
    if (x.numel() == 1) shadow = std::log(x.item_f64());
    return unary_op(
        x, [](auto v) { return std::log(v); },
        [](const TensorImpl& o, const std::vector<float>& g,
           const std::vector<std::vector<float>*>& pg) {
            if (!pg[0]) return;
            const auto& xd = o.parents[0]->data;
            for (size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] / xd[i];
        },
        shadow);
}

Tensor sqrt(const Tensor& x) {
    std::optional<double> shadow;
    if (x.numel() == 1) shadow = std::sqrt(x.item_f64());
    return unary_op(
        x, [](auto v) { return std::sqrt(v); },
        [](const TensorImpl& o, const std::vector<float>& g,
           const std::vector<std::vector<float>*>& pg) {
            if (!pg[0]) return;
            for (size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * 0.5f / o.data[i];
        },
        shadow);
}

Tensor reciprocal(const Tensor& x) {
    std::optional<double> shadow;
    if (x.numel() == 1) shadow = 1.0 / x.item_f64();
    return unary_op(
        x, [](auto v) { return decltype(v)(1) / v; },
        [](const TensorImpl& o, const std::vector<float>& g,
           const std::vector<std::vector<float>*>& pg) {
            if (!pg[0]) return;
            for (size_t i = 0; i < g.size(); ++i) {
                const float y = o.data[i];
                (*pg[0])[i] -= g[i] * y * y;
            }
        },
        shadow);
}

Tensor transpose(const Tensor& x) {
    if (x.ndim() != 2) throw DimError("transpose: rank-2 tensor required, got " + shape_str(x.shape()));
    const int64_t m = x.dim(0), n = x.dim(1);
    return gather_op(
        x, {n, m}, [m, n](int64_t i) { return (i % m) * n + i / m; },
        [m, n](const TensorImpl&, const std::vector<float>& g,
               const std::vector<std::vector<float>*>& pg) {
            if (!pg[0]) return;
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j)
                    (*pg[0])[static_cast<size_t>(i * n + j)] += g[static_cast<size_t>(j * m + i)];
        });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    return gather_op(x, std::move(shape), [](int64_t i) { return i; },
                     [](const TensorImpl&, const std::vector<float>& g,
                        const std::vector<std::vector<float>*>& pg) {
                         if (!pg[0]) return;
                         for (size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                     });
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    if (a.ndim() != 2 || b.ndim() != 2) throw DimError("concat: rank-2 tensors required");
    if (axis != 0 && axis != 1) throw DimError("concat: axis must be 0 or 1");
    const int64_t am = a.dim(0), an = a.dim(1), bm = b.dim(0), bn = b.dim(1);
    if (axis == 0 ? (an != bn) : (am != bm)) {
        throw DimError("concat: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                       " disagree off-axis");
    }
    const int64_t m = axis == 0 ? am + bm : am;
    const int64_t n = axis == 0 ? an : an + bn;
    auto fill = [&](auto* dst, const auto* av, const auto* bv) {
        if (axis == 0) {
            std::copy_n(av, am * an, dst);
            std::copy_n(bv, bm * bn, dst + am * an);
        } else {
            for (int64_t i = 0; i < m; ++i) {
                std::copy_n(av + i * an, an, dst + i * n);
                std::copy_n(bv + i * bn, bn, dst + i * n + an);
            }
        }
    };
    std::vector<float> out(static_cast<size_t>(m * n));
    fill(out.data(), a.data().data(), b.data().data());
    std::vector<double> precise;
    if (precise_enabled()) {
        std::vector<double> sa, sb;
        const double* ap = shadow_ptr(a, sa);
        const double* bp = shadow_ptr(b, sb);
        precise.resize(out.size());
        fill(precise.data(), ap, bp);
    }
    return detail::make_op(
        {m, n}, std::move(out), {a, b},
        [axis, am, an, bn, m, n](const TensorImpl&, const std::vector<float>& g,
                                 const std::vector<std::vector<float>*>& pg) {
            if (axis == 0) {
                const size_t asz = static_cast<size_t>(am * an);
                if (pg[0])
                    for (size_t i = 0; i < asz; ++i) (*pg[0])[i] += g[i];
                if (pg[1])
                    for (size_t i = asz; i < g.size(); ++i) (*pg[1])[i - asz] += g[i];
            } else {
                for (int64_t i = 0; i < m; ++i) {
                    if (pg[0])
                        for (int64_t j = 0; j < an; ++j)
                            (*pg[0])[static_cast<size_t>(i * an + j)] +=
                                g[static_cast<size_t>(i * n + j)];
                    if (pg[1])
                        for (int64_t j = 0; j < bn; ++j)
                            (*pg[1])[static_cast<size_t>(i * bn + j)] +=
                                g[static_cast<size_t>(i * n + an + j)];
                }
            }
        },
        std::nullopt, std::move(precise));
}

Tensor slice_cols(const Tensor& x, int64_t begin, int64_t end) {
    if (x.ndim() != 2) throw DimError("slice_cols: rank-2 tensor required");
    const int64_t m = x.dim(0), n = x.dim(1);
    if (begin < 0 || end > n || begin >= end) {
        throw DimError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                       ") invalid for " + shape_str(x.shape()));
    }
    const int64_t w = end - begin;
    return gather_op(
        x, {m, w}, [n, w, begin](int64_t i) { return (i / w) * n + begin + i % w; },
        [m, n, w, begin](const TensorImpl&, const std::vector<float>& g,
                         const std::vector<std::vector<float>*>& pg) {
            if (!pg[0]) return;
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < w; ++j)
                    (*pg[0])[static_cast<size_t>(i * n + begin + j)] +=
                        g[static_cast<size_t>(i * w + j)];
        });
}

Tensor layer_of(const Tensor& stack, int64_t index) {
    if (stack.ndim() != 3) throw DimError("layer_of: rank-3 tensor required");
    const int64_t nl = stack.dim(0), t = stack.dim(1), d = stack.dim(2);
    if (index < 0 || index >= nl) throw DimError("layer_of: index out of range");
    const int64_t slab = t * d;
    return gather_op(
        stack, {t, d}, [index, slab](int64_t i) { return index * slab + i; },
        [index, slab](const TensorImpl&, const std::vector<float>& g,
                      const std::vector<std::vector<float>*>& pg) {
            if (!pg[0]) return;
            const size_t off = static_cast<size_t>(index * slab);
            for (size_t i = 0; i < g.size(); ++i) (*pg[0])[off + i] += g[i];
        });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    std::vector<double> precise;
    if (precise_enabled()) {
        std::vector<double> sx;
        const double* xp = shadow_ptr(x, sx);
        double pacc = 0.0;
        for (int64_t i = 0; i < x.numel(); ++i) pacc += xp[i];
        precise = {pacc};
    }
    return detail::make_op({1}, {static_cast<float>(acc)}, {x},
                           [](const TensorImpl&, const std::vector<float>& g,
                              const std::vector<std::vector<float>*>& pg) {
                               if (!pg[0]) return;
                               for (auto& v : *pg[0]) v += g[0];
                           },
                           acc, std::move(precise));
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw DimError("mean: empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

namespace {

template <class T>
void pool_forward(const T* xd, T* out, int64_t* argmax, int64_t n, int64_t reduced, int64_t kept,
                  int axis, PoolMode mode) {
    auto at = [&](int64_t slice, int64_t k) {
        return axis == 0 ? xd[static_cast<size_t>(k * n + slice)]
                         : xd[static_cast<size_t>(slice * n + k)];
    };
    if (mode == PoolMode::Max) {
        for (int64_t s = 0; s < kept; ++s) {
            T best = at(s, 0);
            int64_t bi = 0;
            for (int64_t k = 1; k < reduced; ++k) {
                const T v = at(s, k);
                if (v > best) {
                    best = v;
                    bi = k;
                }
            }
            out[static_cast<size_t>(s)] = best;
            if (argmax) argmax[static_cast<size_t>(s)] = bi;
        }
    } else {
        for (int64_t s = 0; s < kept; ++s) {
            double acc = 0.0;
            for (int64_t k = 0; k < reduced; ++k) acc += at(s, k);
            out[static_cast<size_t>(s)] = static_cast<T>(acc / static_cast<double>(reduced));
        }
    }
}

}  // namespace

Tensor pool_axis(const Tensor& x, int axis, PoolMode mode) {
    if (x.ndim() != 2) throw DimError("pool_axis: rank-2 tensor required");
    if (axis != 0 && axis != 1) throw DimError("pool_axis: axis must be 0 or 1");
    const int64_t m = x.dim(0), n = x.dim(1);
    const int64_t reduced = axis == 0 ? m : n;
    const int64_t kept = axis == 0 ? n : m;
    if (reduced == 0) throw DimError("pool_axis: cannot reduce an empty axis");
    std::vector<float> out(static_cast<size_t>(kept));
    std::vector<int64_t> argmax(mode == PoolMode::Max ? static_cast<size_t>(kept) : 0);
    pool_forward(x.data().data(), out.data(), argmax.empty() ? nullptr : argmax.data(), n, reduced,
                 kept, axis, mode);
    std::vector<double> precise;
    if (precise_enabled()) {
        std::vector<double> sx;
        const double* xp = shadow_ptr(x, sx);
        precise.resize(static_cast<size_t>(kept));
        pool_forward(xp, precise.data(), static_cast<int64_t*>(nullptr), n, reduced, kept, axis,
                     mode);
    }
    const Shape oshape = axis == 0 ? Shape{1, n} : Shape{m, 1};
    return detail::make_op(
        oshape, std::move(out), {x},
        [axis, n, reduced, kept, mode, argmax = std::move(argmax)](
            const TensorImpl&, const std::vector<float>& g,
            const std::vector<std::vector<float>*>& pg) {
            if (!pg[0]) return;
            auto gat = [&](int64_t slice, int64_t k) -> float& {
                return axis == 0 ? (*pg[0])[static_cast<size_t>(k * n + slice)]
                                 : (*pg[0])[static_cast<size_t>(slice * n + k)];
            };
            if (mode == PoolMode::Max) {
                for (int64_t s = 0; s < kept; ++s)
                    gat(s, argmax[static_cast<size_t>(s)]) += g[static_cast<size_t>(s)];
            } else {
                for (int64_t s = 0; s < kept; ++s) {
                    const float gv = g[static_cast<size_t>(s)] / static_cast<float>(reduced);
                    for (int64_t k = 0; k < reduced; ++k) gat(s, k) += gv;
                }
            }
        },
        std::nullopt, std::move(precise));
}

namespace {

template <class T>
void softmax_forward(const T* xd, T* out, int64_t n, int64_t along, int64_t slices, int axis) {
    auto idx = [&](int64_t slice, int64_t k) {
        return static_cast<size_t>(axis == 0 ? k * n + slice : slice * n + k);
    };
    for (int64_t s = 0; s < slices; ++s) {
        T mx = xd[idx(s, 0)];
        for (int64_t k = 1; k < along; ++k) mx = std::max(mx, xd[idx(s, k)]);
        double denom = 0.0;
        for (int64_t k = 0; k < along; ++k) {
            const double e = std::exp(static_cast<double>(xd[idx(s, k)]) - static_cast<double>(mx));
            out[idx(s, k)] = static_cast<T>(e);
            denom += e;
        }
        for (int64_t k = 0; k < along; ++k)
            out[idx(s, k)] = static_cast<T>(static_cast<double>(out[idx(s, k)]) / denom);
    }
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
    if (x.ndim() != 2) throw DimError("softmax: rank-2 tensor required");
    if (axis != 0 && axis != 1) throw DimError("softmax: axis must be 0 or 1");
    const int64_t m = x.dim(0), n = x.dim(1);
    const int64_t along = axis == 0 ? m : n;
    const int64_t slices = axis == 0 ? n : m;
    if (along == 0) throw DimError("softmax: empty axis");
    std::vector<float> out(static_cast<size_t>(m * n));
    softmax_forward(x.data().data(), out.data(), n, along, slices, axis);
    std::vector<double> precise;
    if (precise_enabled()) {
        std::vector<double> sx;
        const double* xp = shadow_ptr(x, sx);
        precise.resize(out.size());
        softmax_forward(xp, precise.data(), n, along, slices, axis);
    }
    return detail::make_op(
        x.shape(), std::move(out), {x},
        [axis, n, along, slices](const TensorImpl& o, const std::vector<float>& g,
                                 const std::vector<std::vector<float>*>& pg) {
            if (!pg[0]) return;
            auto idx = [&](int64_t slice, int64_t k) {
                return static_cast<size_t>(axis == 0 ? k * n + slice : slice * n + k);
            };
            for (int64_t s = 0; s < slices; ++s) {
                double dot = 0.0;
                for (int64_t k = 0; k < along; ++k)
                    dot += static_cast<double>(g[idx(s, k)]) * o.data[idx(s, k)];
                for (int64_t k = 0; k < along; ++k)
                    (*pg[0])[idx(s, k)] += static_cast<float>(
                        (static_cast<double>(g[idx(s, k)]) - dot) * o.data[idx(s, k)]);
            }
        },
        std::nullopt, std::move(precise));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) throw DimError("matmul: rank-2 tensors required");
    const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw DimError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
    }
    std::vector<float> out(static_cast<size_t>(m * n));
    dense::mm(a.data().data(), b.data().data(), out.data(), m, k, n, false);
    std::vector<double> precise;
    if (precise_enabled()) {
        std::vector<double> sa, sb;
        const double* ap = shadow_ptr(a, sa);
        const double* bp = shadow_ptr(b, sb);
        precise.assign(out.size(), 0.0);
        for (int64_t i = 0; i < m; ++i)
            for (int64_t kk = 0; kk < k; ++kk) {
                const double av = ap[static_cast<size_t>(i * k + kk)];
                double* orow = precise.data() + i * n;
                const double* brow = bp + kk * n;
                for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
    }
    return detail::make_op(
        {m, n}, std::move(out), {a, b},
        [m, k, n](const TensorImpl& o, const std::vector<float>& g,
                  const std::vector<std::vector<float>*>& pg) {
            const float* av = o.parents[0]->data.data();
            const float* bv = o.parents[1]->data.data();
            if (pg[0]) dense::mm_bt(g.data(), bv, pg[0]->data(), m, n, k, true);
            if (pg[1]) dense::mm_at(av, g.data(), pg[1]->data(), k, m, n, true);
        },
        std::nullopt, std::move(precise));
}

namespace {

template <class T>
void conv_forward(const T* xd, const T* wd, const T* bd, T* out, int64_t cin, int64_t t,
                  int64_t cout, int64_t k, int64_t c, int dilation) {
    for (int64_t o = 0; o < cout; ++o) {
        const double b = bd ? static_cast<double>(bd[static_cast<size_t>(o)]) : 0.0;
        for (int64_t tt = 0; tt < t; ++tt) {
            double acc = b;
            for (int64_t ci = 0; ci < cin; ++ci) {
                const T* xrow = xd + ci * t;
                const T* wrow = wd + (o * cin + ci) * k;
                for (int64_t kk = 0; kk < k; ++kk) {
                    const int64_t tau = tt + dilation * (kk - c);
                    if (tau < 0 || tau >= t) continue;
                    acc += static_cast<double>(wrow[kk]) * static_cast<double>(xrow[tau]);
                }
            }
            out[static_cast<size_t>(o * t + tt)] = static_cast<T>(acc);
        }
    }
}

Tensor conv1d_impl(const Tensor& x, const Tensor& w, const Tensor* bias, int dilation) {
    if (x.ndim() != 2) throw DimError("conv1d: input must be (channels, time)");
    if (w.ndim() != 3) throw DimError("conv1d: weight must be (out, in, kernel)");
    const int64_t cin = x.dim(0), t = x.dim(1);
    const int64_t cout = w.dim(0), wcin = w.dim(1), k = w.dim(2);
    if (cin != wcin) {
        throw DimError("conv1d: channel mismatch, input " + shape_str(x.shape()) + " vs weight " +
                       shape_str(w.shape()));
    }
    if (k % 2 == 0) throw ContractError("conv1d: even kernel size " + std::to_string(k) + " unsupported");
    if (dilation < 1) throw ContractError("conv1d: dilation must be >= 1");
    if (bias && bias->numel() != cout) throw DimError("conv1d: bias length must equal out channels");

    const int64_t c = (k - 1) / 2;
    std::vector<float> out(static_cast<size_t>(cout * t));
    conv_forward(x.data().data(), w.data().data(), bias ? bias->data().data() : nullptr, out.data(),
                 cin, t, cout, k, c, dilation);
    std::vector<double> precise;
    if (precise_enabled()) {
        std::vector<double> sx, sw, sb;
        const double* xp = shadow_ptr(x, sx);
        const double* wp = shadow_ptr(w, sw);
        const double* bp = bias ? shadow_ptr(*bias, sb) : nullptr;
        precise.resize(out.size());
        conv_forward(xp, wp, bp, precise.data(), cin, t, cout, k, c, dilation);
    }

    std::vector<Tensor> parents = {x, w};
    if (bias) parents.push_back(*bias);
    const bool has_bias = bias != nullptr;
    return detail::make_op(
        {cout, t}, std::move(out), std::move(parents),
        [cin, t, cout, k, c, dilation, has_bias](const TensorImpl& o, const std::vector<float>& g,
                                                 const std::vector<std::vector<float>*>& pg) {
            const auto& xd = o.parents[0]->data;
            const auto& wd = o.parents[1]->data;
            for (int64_t oc = 0; oc < cout; ++oc) {
                const float* grow = g.data() + oc * t;
                if (has_bias && pg[2]) {
                    double gb = 0.0;
                    for (int64_t tt = 0; tt < t; ++tt) gb += grow[tt];
                    (*pg[2])[static_cast<size_t>(oc)] += static_cast<float>(gb);
                }
                for (int64_t ci = 0; ci < cin; ++ci) {
                    const float* xrow = xd.data() + ci * t;
                    const float* wrow = wd.data() + (oc * cin + ci) * k;
                    for (int64_t kk = 0; kk < k; ++kk) {
                        const int64_t shift = dilation * (kk - c);
                        double gw = 0.0;
                        const int64_t lo = std::max<int64_t>(0, -shift);
                        const int64_t hi = std::min(t, t - shift);
                        if (pg[0]) {
                            float* gxrow = pg[0]->data() + ci * t;
                            const float wv = wrow[kk];
                            for (int64_t tt = lo; tt < hi; ++tt) {
                                gxrow[tt + shift] += grow[tt] * wv;
                                gw += static_cast<double>(grow[tt]) * xrow[tt + shift];
                            }
                        } else {
                            for (int64_t tt = lo; tt < hi; ++tt)
                                gw += static_cast<double>(grow[tt]) * xrow[tt + shift];
                        }
                        if (pg[1])
                            (*pg[1])[static_cast<size_t>((oc * cin + ci) * k + kk)] +=
                                static_cast<float>(gw);
                    }
                }
            }
        },
        std::nullopt, std::move(precise));
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int dilation) {
    return conv1d_impl(x, w, &bias, dilation);
}

Tensor conv1d(const Tensor& x, const Tensor& w, int dilation) {
    return conv1d_impl(x, w, nullptr, dilation);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    return add(matmul(x, transpose(w)), bias);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.ndim() != 2) throw DimError("layer_norm: rank-2 tensor required");
    if (x.dim(1) == 0) throw DimError("layer_norm: empty channel axis");
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    Tensor mu = pool_axis(x, 1, PoolMode::Avg);
    Tensor xc = sub(x, mu);
    Tensor var = pool_axis(mul(xc, xc), 1, PoolMode::Avg);
    Tensor inv = reciprocal(sqrt(add_scalar(var, eps)));
    return add(mul(mul(xc, inv), gamma), beta);
}

Tensor rand_uniform(Shape shape, Rng& rng, float lo, float hi, bool requires_grad) {
    const int64_t n = shape_numel(shape);
    std::vector<float> data(static_cast<size_t>(n));
    for (auto& v : data) v = rng.uniform(lo, hi);
    return requires_grad ? Tensor::param(std::move(shape), std::move(data))
                         : Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace cffma
