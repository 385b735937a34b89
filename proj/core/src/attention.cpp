#include "distillbev/attention.hpp"

#include <cmath>

namespace distillbev {

Tensor pool_abs_mean_fwd(const FeatureMap& f) {
    if (f.rank() != 3 || f.dim(0) < 1)
        throw std::invalid_argument("pool_abs_mean: expected [C,H,W], C >= 1");
    const std::size_t c = f.dim(0), hw = f.dim(1) * f.dim(2);
    Tensor out({f.dim(1), f.dim(2)});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i) out[i] += std::abs(f[ch * hw + i]);
    for (std::size_t i = 0; i < hw; ++i) out[i] /= static_cast<double>(c);
    return out;
}

Tensor normalize_attention(const Tensor& p, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("normalize_attention: tau must be > 0");
    if (p.rank() != 2) throw std::invalid_argument("normalize_attention: expected [H,W]");
    const std::size_t n = p.size();
    Tensor out(p.shape());
    double mx = p[0] / tau;
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, p[i] / tau);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(p[i] / tau - mx);
        z += out[i];
    }
    const double hw = static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) out[i] *= hw / z;
    return out;
}

Tensor combine_attention(const Tensor& n_t, const Tensor& n_s) {
    if (!n_t.same_shape(n_s))
        throw std::invalid_argument("combine_attention: shape mismatch");
    Tensor out(n_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (n_t[i] + n_s[i]);
    return out;
}

AdaptationModule::AdaptationModule(AdapterKind kind, std::size_t upsample_factor,
                                   std::size_t in_channels, std::size_t out_channels,
                                   std::string prefix)
    : kind_(kind),
      upsample_factor_(upsample_factor),
      in_channels_(in_channels),
      out_channels_(out_channels),
      prefix_(std::move(prefix)) {
    if (upsample_factor_ == 0)
        throw std::invalid_argument("adaptation: upsample factor must be >= 1");
}

void AdaptationModule::init_params(ParamStore& store, Rng& rng) const {
    for (std::size_t b = 0; b < block_count(); ++b) {
        const std::string base = prefix_ + ".block" + std::to_string(b);
        Tensor w({out_channels_, block_in(b), 1, 1});
        init_conv_weight(w, rng);
        store.add(base + ".conv.w", std::move(w));
        store.add(base + ".conv.b", Tensor({out_channels_}));
        store.add(base + ".bn.gamma", Tensor::full({out_channels_}, 1.0));
        store.add(base + ".bn.beta", Tensor({out_channels_}));
        store.add(base + ".bn.running_mean", Tensor({out_channels_}), /*trainable=*/false);
        store.add(base + ".bn.running_var", Tensor::full({out_channels_}, 1.0),
                  /*trainable=*/false);
    }
}

Value AdaptationModule::apply(GraphBinding& bind, Value f_student, BnMode mode) const {
    Graph& g = bind.graph();
    const Tensor& in = g.value(f_student);
    if (in.rank() != 3 || in.dim(0) != in_channels_)
        throw std::invalid_argument("adaptation: input channel mismatch");
    Value x = f_student;
    if (upsample_factor_ > 1) x = upsample_nearest(g, x, upsample_factor_);
    for (std::size_t b = 0; b < block_count(); ++b) {
        const std::string base = prefix_ + ".block" + std::to_string(b);
        x = conv2d(g, x, bind(base + ".conv.w"), bind(base + ".conv.b"), 0);
        BatchNormState bn;
        bn.running_mean = &bind.store().get(base + ".bn.running_mean").value;
        bn.running_var = &bind.store().get(base + ".bn.running_var").value;
        x = batchnorm(g, x, bind(base + ".bn.gamma"), bind(base + ".bn.beta"), bn, mode);
        x = relu(g, x);
    }
    return x;
}

}  // namespace distillbev
