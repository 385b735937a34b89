#pragma once

#include <map>
#include <string>
#include <vector>

#include "distillbev/autodiff.hpp"
#include "distillbev/rng.hpp"
#include "distillbev/tensor.hpp"

namespace distillbev {

// Named parameter or buffer (running statistics). Buffers are serialized but
// not trained. Adam moments live beside the value so the optimizer is
// stateless apart from the store.
struct Param {
    std::string name;
    Tensor value;
    bool trainable = true;
    Tensor m, v;  // first/second moments, sized on first optimizer step
};

class ParamStore {
public:
    Param& add(const std::string& name, Tensor value, bool trainable = true) {
        if (index_.count(name)) throw std::invalid_argument("param exists: " + name);
        index_[name] = params_.size();
        params_.push_back(Param{name, std::move(value), trainable, {}, {}});
        return params_.back();
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Param& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("unknown param: " + name);
        return params_[it->second];
    }
    const Param& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("unknown param: " + name);
        return params_[it->second];
    }

    std::vector<Param>& all() { return params_; }
    const std::vector<Param>& all() const { return params_; }

private:
    std::vector<Param> params_;  // insertion order, deterministic iteration
    std::map<std::string, std::size_t> index_;
};

// Binds store parameters to graph leaves for one step; each parameter gets
// exactly one leaf so gradients accumulate correctly when reused.
class GraphBinding {
public:
    GraphBinding(Graph& g, ParamStore& store) : g_(g), store_(store) {}

    Value operator()(const std::string& name) {
        auto it = leaves_.find(name);
        if (it != leaves_.end()) return it->second;
        Param& p = store_.get(name);
        Value v = g_.leaf(p.value, p.trainable);
        leaves_[name] = v;
        return v;
    }

    // Accumulated analytic gradients after backward(), keyed by name.
    std::map<std::string, Tensor> gradients() const {
        std::map<std::string, Tensor> out;
        for (const auto& [name, v] : leaves_)
            if (g_.needs_grad(v)) out[name] = g_.grad(v);
        return out;
    }

    ParamStore& store() { return store_; }
    Graph& graph() { return g_; }

private:
    Graph& g_;
    ParamStore& store_;
    std::map<std::string, Value> leaves_;
};

// Decoupled weight decay Adam. step_idx is 1-based.
struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    void step(ParamStore& store, const std::map<std::string, Tensor>& grads, double lr,
              std::size_t step_idx) const;
};

// Cosine schedule from base_lr to 0 over total_steps; step is 0-based.
double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps);

// He-style deterministic initialization for a conv weight tensor.
void init_conv_weight(Tensor& w, Rng& rng);

}  // namespace distillbev
