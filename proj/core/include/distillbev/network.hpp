#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "distillbev/autodiff.hpp"
#include "distillbev/params.hpp"
#include "distillbev/tensor.hpp"

namespace distillbev {

enum class NetKind { teacher, student };

// Small BEV encoder with named layers B1, B2, H and a 1x1 detection head
// emitting a K-channel sigmoid heatmap at grid resolution. The teacher runs
// at grid resolution; the student pools to half resolution at the stem and
// upsamples back before the head, so its pre-head map is half the teacher's.
struct NetworkSpec {
    NetKind kind = NetKind::teacher;
    std::uint32_t in_channels = 2;
    std::uint32_t num_classes = 2;
    // channel widths of B1, B2, H; H must match across teacher and student so
    // the detection head is inheritable
    std::uint32_t c_b1 = 8, c_b2 = 12, c_h = 16;
    bool temporal = false;  // student only: concat warped previous B1
};

class ToyNetwork {
public:
    ToyNetwork(NetworkSpec spec, std::uint64_t init_seed);

    struct LayerValues {
        Value b1, b2, h, heatmap;
    };

    // prev_b1: warped previous-frame B1 (temporal students only; forward-only,
    // no gradient through time).
    LayerValues forward(GraphBinding& bind, const Tensor& input, BnMode mode,
                        const Tensor* prev_b1 = nullptr) const;

    // Forward without a surrounding training step (constants only).
    LayerValues forward_infer(Graph& g, const Tensor& input,
                              const Tensor* prev_b1 = nullptr);

    Value layer_by_name(const LayerValues& lv, const std::string& name) const;

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const NetworkSpec& spec() const { return spec_; }

    // Names of the detection-head parameters (for head inheriting).
    std::vector<std::string> head_param_names() const;

private:
    void add_conv_bn(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                     Rng& rng);
    Value conv_bn_relu(GraphBinding& bind, const std::string& name, Value x, std::size_t pad,
                       BnMode mode) const;

    NetworkSpec spec_;
    ParamStore params_;
};

// Copies the teacher's detection-head parameters into the student.
void inherit_head(ToyNetwork& student, const ToyNetwork& teacher);

}  // namespace distillbev
