#include "minibert/params.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace minibert {

NodePtr ParameterStore::create(const std::string& name, const std::vector<int64_t>& shape) {
    if (params_.count(name))
        throw std::runtime_error("parameter already exists: " + name);
    auto node = make_leaf(Tensor::zeros(shape), /*requires_grad=*/true, name);
    params_[name] = node;
    return node;
}

NodePtr ParameterStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::runtime_error("no such parameter: " + name);
    return it->second;
}

bool ParameterStore::has(const std::string& name) const { return params_.count(name) > 0; }

void ParameterStore::zero_grads() {
    for (auto& [name, node] : params_) {
        if (node->grad.data.empty())
            node->grad = Tensor::zeros(node->value.shape);
        else
            node->grad.fill(0.0);
    }
}

int64_t ParameterStore::parameter_count() const {
    int64_t n = 0;
    for (const auto& [name, node] : params_) n += node->value.numel();
    return n;
}

Adam::Adam(ParameterStore& params, AdamOptions opts) : params_(params), opts_(opts) {
    for (const auto& [name, node] : params_.items()) {
        m_.emplace(name, Tensor::zeros(node->value.shape));
        v_.emplace(name, Tensor::zeros(node->value.shape));
    }
}

bool Adam::decay_applies(const std::string& name) {
    if (name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0) return false;
    if (name.find("norm.") != std::string::npos) return false;
    return true;
}

void Adam::step(double lr_scale) {
    ++t_;
    double eff = opts_.lr * lr_scale;
    double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (auto& [name, node] : params_.items()) {
        node->ensure_grad();
        Tensor& m = m_.at(name);
        Tensor& v = v_.at(name);
        bool decay = opts_.weight_decay != 0.0 && decay_applies(name);
        for (int64_t i = 0; i < node->value.numel(); ++i) {
            double g = node->grad.data[i];
            m.data[i] = opts_.beta1 * m.data[i] + (1.0 - opts_.beta1) * g;
            v.data[i] = opts_.beta2 * v.data[i] + (1.0 - opts_.beta2) * g * g;
            double mhat = m.data[i] / bc1;
            double vhat = v.data[i] / bc2;
            double w = node->value.data[i];
            double update = mhat / (std::sqrt(vhat) + opts_.eps);
            if (decay) update += opts_.weight_decay * w;
            node->value.data[i] = w - eff * update;
        }
        node->grad.fill(0.0);
    }
}

double lr_schedule(int64_t step, int64_t warmup, int64_t total, double base_lr) {
    if (total <= 0) return 0.0;
    double lr;
    if (warmup > 0 && step < warmup) {
        lr = base_lr * static_cast<double>(step) / static_cast<double>(warmup);
    } else if (total == warmup) {
        lr = base_lr;
    } else {
        lr = base_lr * static_cast<double>(total - step) / static_cast<double>(total - warmup);
    }
    return std::max(0.0, lr);
}

}  // namespace minibert
