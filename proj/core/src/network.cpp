#include "distillbev/network.hpp"

namespace distillbev {

ToyNetwork::ToyNetwork(NetworkSpec spec, std::uint64_t init_seed) : spec_(spec) {
    Rng rng(init_seed, 0, 100);
    const std::size_t cin = spec_.in_channels;
    const std::size_t b2_in = spec_.c_b1 + (spec_.temporal ? spec_.c_b1 : 0);
    add_conv_bn("b1", cin, spec_.c_b1, 3, rng);
    add_conv_bn("b2", b2_in, spec_.c_b2, 3, rng);
    add_conv_bn("h", spec_.c_b2, spec_.c_h, 3, rng);
    Tensor hw({spec_.num_classes, spec_.c_h, 1, 1});
    init_conv_weight(hw, rng);
    params_.add("head.conv.w", std::move(hw));
    params_.add("head.conv.b", Tensor({spec_.num_classes}));
}

void ToyNetwork::add_conv_bn(const std::string& name, std::size_t cin, std::size_t cout,
                             std::size_t k, Rng& rng) {
    Tensor w({cout, cin, k, k});
    init_conv_weight(w, rng);
    params_.add(name + ".conv.w", std::move(w));
    params_.add(name + ".conv.b", Tensor({cout}));
    params_.add(name + ".bn.gamma", Tensor::full({cout}, 1.0));
    params_.add(name + ".bn.beta", Tensor({cout}));
    params_.add(name + ".bn.running_mean", Tensor({cout}), /*trainable=*/false);
    params_.add(name + ".bn.running_var", Tensor::full({cout}, 1.0), /*trainable=*/false);
}

Value ToyNetwork::conv_bn_relu(GraphBinding& bind, const std::string& name, Value x,
                               std::size_t pad, BnMode mode) const {
    Graph& g = bind.graph();
    x = conv2d(g, x, bind(name + ".conv.w"), bind(name + ".conv.b"), pad);
    BatchNormState bn;
    bn.running_mean = &bind.store().get(name + ".bn.running_mean").value;
    bn.running_var = &bind.store().get(name + ".bn.running_var").value;
    x = batchnorm(g, x, bind(name + ".bn.gamma"), bind(name + ".bn.beta"), bn, mode);
    return relu(g, x);
}

ToyNetwork::LayerValues ToyNetwork::forward(GraphBinding& bind, const Tensor& input,
                                            BnMode mode, const Tensor* prev_b1) const {
    Graph& g = bind.graph();
    Value x = g.constant(input);
    if (spec_.kind == NetKind::student) x = avg_pool2(g, x);

    LayerValues lv;
    lv.b1 = conv_bn_relu(bind, "b1", x, 1, mode);
    Value b2_in = lv.b1;
    if (spec_.temporal) {
        if (!prev_b1) throw std::invalid_argument("forward: temporal network needs prev_b1");
        b2_in = concat_channels(g, lv.b1, g.constant(*prev_b1));
    }
    lv.b2 = conv_bn_relu(bind, "b2", b2_in, 1, mode);
    lv.h = conv_bn_relu(bind, "h", lv.b2, 1, mode);

    Value pre_head = lv.h;
    if (spec_.kind == NetKind::student) pre_head = upsample_nearest(g, pre_head, 2);
    Value logits = conv2d(g, pre_head, bind("head.conv.w"), bind("head.conv.b"), 0);
    lv.heatmap = sigmoid(g, logits);
    return lv;
}

ToyNetwork::LayerValues ToyNetwork::forward_infer(Graph& g, const Tensor& input,
                                                  const Tensor* prev_b1) {
    GraphBinding bind(g, params_);
    // bind leaves without gradients by marking everything constant: reuse the
    // same forward, then the caller simply never calls backward through it
    return forward(bind, input, BnMode::infer, prev_b1);
}

Value ToyNetwork::layer_by_name(const LayerValues& lv, const std::string& name) const {
    if (name == "B1") return lv.b1;
    if (name == "B2") return lv.b2;
    if (name == "H") return lv.h;
    throw std::invalid_argument("unknown layer name: " + name);
}

std::vector<std::string> ToyNetwork::head_param_names() const {
    return {"head.conv.w", "head.conv.b"};
}

void inherit_head(ToyNetwork& student, const ToyNetwork& teacher) {
    for (const std::string& name : teacher.head_param_names()) {
        const Tensor& src = teacher.params().get(name).value;
        Tensor& dst = student.params().get(name).value;
        if (!dst.same_shape(src))
            throw std::invalid_argument("inherit_head: head shape mismatch for " + name);
        dst = src;
    }
}

}  // namespace distillbev
