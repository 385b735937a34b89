#pragma once

#include <string>
#include <vector>

#include "distillbev/autodiff.hpp"
#include "distillbev/params.hpp"
#include "distillbev/tensor.hpp"

namespace distillbev {

// Non-graph attention helpers (forward-only; used where attention weights are
// treated as constants).

// [C,H,W] -> [H,W] mean of absolute channel values.
Tensor pool_abs_mean_fwd(const FeatureMap& f);

// HW * softmax(p / tau) over all cells; sums to H*W.
Tensor normalize_attention(const Tensor& p, double tau);

// (n_t + n_s) / 2.
Tensor combine_attention(const Tensor& n_t, const Tensor& n_s);

enum class AdapterKind { prehead, intermediate };

// Trainable student-to-teacher alignment: optional nearest upsample, then
// 1x1 conv + batchnorm + relu blocks (2 for the pre-head pair, 3 for
// intermediate pairs). Parameters live in a ParamStore under `prefix`.
class AdaptationModule {
public:
    AdaptationModule(AdapterKind kind, std::size_t upsample_factor, std::size_t in_channels,
                     std::size_t out_channels, std::string prefix);

    // Registers fresh parameters (deterministic init from rng).
    void init_params(ParamStore& store, Rng& rng) const;

    // Builds the adapter on the graph; gradients reach both the input feature
    // and the adapter parameters.
    Value apply(GraphBinding& bind, Value f_student, BnMode mode) const;

    AdapterKind kind() const { return kind_; }
    std::size_t upsample_factor() const { return upsample_factor_; }
    std::size_t out_channels() const { return out_channels_; }
    std::size_t block_count() const { return kind_ == AdapterKind::prehead ? 2u : 3u; }
    const std::string& prefix() const { return prefix_; }

private:
    std::size_t block_in(std::size_t b) const { return b == 0 ? in_channels_ : out_channels_; }

    AdapterKind kind_;
    std::size_t upsample_factor_;
    std::size_t in_channels_;
    std::size_t out_channels_;
    std::string prefix_;
};

}  // namespace distillbev
