#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cffma/tensor.hpp"

namespace cffma {

// Ordered, named collection of trainable tensors. Order is registration order
// and defines the layout of checkpoints and the parameter census.
class ParamSet {
  public:
    struct Item {
        std::string name;
        Tensor tensor;
    };

    void add(const std::string& name, Tensor t);
    bool contains(const std::string& name) const;
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    size_t size() const { return items_.size(); }
    int64_t numel() const;
    void zero_grads();

    std::vector<Item>& items() { return items_; }
    const std::vector<Item>& items() const { return items_; }

    // name -> shape, in registration order
    std::vector<std::pair<std::string, Shape>> census() const;

  private:
    std::vector<Item> items_;
    std::unordered_map<std::string, size_t> index_;
};

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;
    std::unordered_map<std::string, std::vector<float>> m;
    std::unordered_map<std::string, std::vector<float>> v;
};

// One bias-corrected Adam update over every parameter in the set, reading each
// tensor's accumulated grad. Grads are left untouched (caller zeroes them).
void adam_step(ParamSet& params, AdamState& state, double lr);

}  // namespace cffma
