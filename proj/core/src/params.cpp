#include "distillbev/params.hpp"

#include <cmath>

namespace distillbev {

void AdamW::step(ParamStore& store, const std::map<std::string, Tensor>& grads, double lr,
                 std::size_t step_idx) const {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_idx));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_idx));
    for (auto& p : store.all()) {
        if (!p.trainable) continue;
        auto it = grads.find(p.name);
        if (it == grads.end()) continue;
        const Tensor& g = it->second;
        if (p.m.size() == 0) {
            p.m = Tensor(p.value.shape());
            p.v = Tensor(p.value.shape());
        }
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            p.m[i] = beta1 * p.m[i] + (1.0 - beta1) * g[i];
            p.v[i] = beta2 * p.v[i] + (1.0 - beta2) * g[i] * g[i];
            const double mhat = p.m[i] / bc1;
            const double vhat = p.v[i] / bc2;
            p.value[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.value[i]);
        }
    }
}

double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps) {
    if (total_steps == 0) return base_lr;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return 0.5 * base_lr * (1.0 + std::cos(3.141592653589793 * t));
}

void init_conv_weight(Tensor& w, Rng& rng) {
    // fan_in = Cin * k * k for [Co,Ci,k,k]
    const double fan_in =
        static_cast<double>(w.dim(1) * w.dim(2) * w.dim(3));
    const double std_dev = std::sqrt(2.0 / fan_in);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std_dev * rng.normal();
}

}  // namespace distillbev
