#include "cffma/tensor.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include "cffma/errors.hpp"

namespace cffma {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace {

detail::ImplPtr make_impl(Shape shape, std::vector<float> data) {
    for (int64_t d : shape) {
        if (d < 0) throw DimError("tensor dimension must be non-negative, got " + shape_str(shape));
    }
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw DimError("tensor data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return impl;
}

thread_local int g_no_grad_depth = 0;
thread_local int g_precise_depth = 0;

}  // namespace

Tensor Tensor::zeros(Shape shape) {
    auto n = shape_numel(shape);
    return Tensor(make_impl(std::move(shape), std::vector<float>(static_cast<size_t>(n), 0.0f)));
}

Tensor Tensor::full(Shape shape, float value) {
    auto n = shape_numel(shape);
    return Tensor(make_impl(std::move(shape), std::vector<float>(static_cast<size_t>(n), value)));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data) {
    return Tensor(make_impl(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(double v) {
    auto t = Tensor(make_impl({1}, {static_cast<float>(v)}));
    t.impl_->scalar_f64 = v;
    return t;
}

Tensor Tensor::param(Shape shape, std::vector<float> data) {
    auto t = Tensor(make_impl(std::move(shape), std::move(data)));
    t.impl_->requires_grad = true;
    return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }

int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }

int64_t Tensor::dim(int axis) const { return impl_->shape.at(static_cast<size_t>(axis)); }

int64_t Tensor::numel() const { return shape_numel(impl_->shape); }

std::span<const float> Tensor::data() const { return impl_->data; }

std::span<float> Tensor::mutable_data() { return impl_->data; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const float> Tensor::grad() const {
    if (!has_grad()) throw ContractError("tensor has no gradient; call backward() first");
    return impl_->grad;
}

std::span<float> Tensor::mutable_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.clear();
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool v) { impl_->requires_grad = v; }

float Tensor::item() const {
    if (numel() != 1) throw ContractError("item() requires a scalar tensor, got " + shape_str(shape()));
    return impl_->data[0];
}

double Tensor::item_f64() const {
    if (numel() != 1) throw ContractError("item_f64() requires a scalar tensor, got " + shape_str(shape()));
    if (impl_->f64) return (*impl_->f64)[0];
    return impl_->scalar_f64 ? *impl_->scalar_f64 : static_cast<double>(impl_->data[0]);
}

void Tensor::backward() const {
    if (!impl_) throw ContractError("backward() on an undefined tensor");
    if (numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    }

    // Topological order via iterative post-order DFS over parent links.
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> seen;
    std::vector<std::pair<detail::TensorImpl*, size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    seen.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::TensorImpl* p = node->parents[next].get();
            ++next;
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    std::unordered_map<detail::TensorImpl*, std::vector<float>> buf;
    buf[impl_.get()] = {1.0f};

    auto needs_flow = [](const detail::TensorImpl* n) {
        return n->requires_grad || static_cast<bool>(n->grad_fn);
    };

    // order is post-order (leaves first); walk it backwards from the loss.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* node = *it;
        auto found = buf.find(node);
        if (found == buf.end() || !node->grad_fn) continue;
        std::vector<std::vector<float>*> parent_bufs(node->parents.size(), nullptr);
        for (size_t i = 0; i < node->parents.size(); ++i) {
            detail::TensorImpl* p = node->parents[i].get();
            if (!needs_flow(p)) continue;
            auto& pbuf = buf[p];
            if (pbuf.empty()) pbuf.assign(p->data.size(), 0.0f);
            parent_bufs[i] = &pbuf;
        }
        node->grad_fn(*node, found->second, parent_bufs);
    }

    // Accumulate into persistent grads.
    for (auto& [node, g] : buf) {
        if (!node->requires_grad || g.empty()) continue;
        if (node->grad.empty()) node->grad.assign(node->data.size(), 0.0f);
        for (size_t i = 0; i < g.size(); ++i) node->grad[i] += g[i];
    }
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }

NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return g_no_grad_depth == 0; }

PreciseScope::PreciseScope() { ++g_precise_depth; }

PreciseScope::~PreciseScope() { --g_precise_depth; }

bool precise_enabled() { return g_precise_depth > 0; }

}  // namespace cffma
