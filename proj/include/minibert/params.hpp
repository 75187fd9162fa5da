#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "minibert/autograd.hpp"
#include "minibert/tensor.hpp"

namespace minibert {

// Named trainable tensors. Ordered by name so every iteration-dependent
// consumer (optimizer, checkpointing) sees a fixed order.
class ParameterStore {
public:
    NodePtr create(const std::string& name, const std::vector<int64_t>& shape);
    NodePtr get(const std::string& name) const;
    bool has(const std::string& name) const;
    const std::map<std::string, NodePtr>& items() const { return params_; }
    void zero_grads();
    int64_t parameter_count() const;

private:
    std::map<std::string, NodePtr> params_;
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Bias-corrected Adam with decoupled weight decay. Decay skips biases and
// layer-norm gains/biases (name ends in ".bias" or contains "norm.").
class Adam {
public:
    explicit Adam(ParameterStore& params, AdamOptions opts = {});

    // One update with effective rate opts.lr * lr_scale; zeroes gradients.
    void step(double lr_scale = 1.0);
    int64_t step_count() const { return t_; }
    const AdamOptions& options() const { return opts_; }

    static bool decay_applies(const std::string& name);

private:
    ParameterStore& params_;
    AdamOptions opts_;
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
    int64_t t_ = 0;
};

// Linear warmup from 0 to base_lr over [0, warmup], then linear decay back
// to 0 over [warmup, total].
double lr_schedule(int64_t step, int64_t warmup, int64_t total, double base_lr);

}  // namespace minibert
