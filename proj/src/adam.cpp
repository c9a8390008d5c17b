#include "cffma/adam.hpp"

#include <cmath>

#include "cffma/errors.hpp"

namespace cffma {

void ParamSet::add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ContractError("ParamSet: duplicate parameter '" + name + "'");
    if (!t.requires_grad()) throw ContractError("ParamSet: '" + name + "' is not trainable");
    index_[name] = items_.size();
    items_.push_back({name, std::move(t)});
}

bool ParamSet::contains(const std::string& name) const { return index_.count(name) != 0; }

Tensor& ParamSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("ParamSet: unknown parameter '" + name + "'");
    return items_[it->second].tensor;
}

const Tensor& ParamSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("ParamSet: unknown parameter '" + name + "'");
    return items_[it->second].tensor;
}

int64_t ParamSet::numel() const {
    int64_t n = 0;
    for (const auto& it : items_) n += it.tensor.numel();
    return n;
}

void ParamSet::zero_grads() {
    for (auto& it : items_) it.tensor.zero_grad();
}

std::vector<std::pair<std::string, Shape>> ParamSet::census() const {
    std::vector<std::pair<std::string, Shape>> out;
    out.reserve(items_.size());
    for (const auto& it : items_) out.emplace_back(it.name, it.tensor.shape());
    return out;
}

void adam_step(ParamSet& params, AdamState& state, double lr) {
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (auto& item : params.items()) {
        Tensor& p = item.tensor;
        const auto& g = p.grad();
        if (g.empty()) throw ContractError("adam_step: parameter '" + item.name + "' has no grad");
        auto& m = state.m[item.name];
        auto& v = state.v[item.name];
        if (m.empty()) m.assign(g.size(), 0.0f);
        if (v.empty()) v.assign(g.size(), 0.0f);
        if (m.size() != g.size() || v.size() != g.size()) {
            throw ContractError("adam_step: moment shape mismatch for '" + item.name + "'");
        }
        auto data = p.mutable_data();
        for (size_t i = 0; i < g.size(); ++i) {
            const double gi = g[i];
            const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            data[i] = static_cast<float>(data[i] - lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

}  // namespace cffma
