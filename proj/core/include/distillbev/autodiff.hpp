#pragma once

#include <deque>
#include <functional>
#include <stdexcept>
#include <vector>

#include "distillbev/tensor.hpp"

namespace distillbev {

class Graph;

// Handle to a node in a Graph. Cheap to copy; only valid for the graph that
// produced it.
struct Value {
    std::size_t id = static_cast<std::size_t>(-1);
};

enum class BnMode { train, infer };

// Running statistics for one batchnorm layer. Owned by the caller (parameter
// store) so they survive across graphs and end up in checkpoints. Updated
// in-place on train-mode forward with momentum 0.1.
struct BatchNormState {
    Tensor* running_mean = nullptr;
    Tensor* running_var = nullptr;
    double momentum = 0.1;
    double eps = 1e-5;
};

// Tape of operations built eagerly; values are computed on construction and
// backward() walks the tape in reverse. Single-threaded by design.
class Graph {
public:
    Value leaf(Tensor t, bool requires_grad);
    Value constant(Tensor t) { return leaf(std::move(t), false); }

    const Tensor& value(Value v) const { return nodes_[v.id].value; }
    const Tensor& grad(Value v) const;
    bool needs_grad(Value v) const { return nodes_[v.id].needs_grad; }

    // Reverse accumulation from a scalar loss node.
    void backward(Value loss);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        std::function<void(Graph&)> backprop;  // empty for leaves
    };

    Value emit(Tensor value, const std::vector<Value>& inputs,
               std::function<void(Graph&)> backprop);

    Tensor& grad_mut(Value v) { return nodes_[v.id].grad; }

    std::deque<Node> nodes_;

    friend Value add(Graph&, Value, Value);
    friend Value sub(Graph&, Value, Value);
    friend Value mul(Graph&, Value, Value);
    friend Value scale(Graph&, Value, double);
    friend Value sum(Graph&, Value);
    friend Value relu(Graph&, Value);
    friend Value sigmoid(Graph&, Value);
    friend Value conv2d(Graph&, Value, Value, Value, std::size_t);
    friend Value batchnorm(Graph&, Value, Value, Value, BatchNormState, BnMode);
    friend Value avg_pool2(Graph&, Value);
    friend Value upsample_nearest(Graph&, Value, std::size_t);
    friend Value softmax_scaled(Graph&, Value, double);
    friend Value pool_abs_mean(Graph&, Value);
    friend Value mul_hw(Graph&, Value, Value);
    friend Value concat_channels(Graph&, Value, Value);
    friend Value weighted_sq_diff_sum(Graph&, Value, const Tensor&, const Tensor&);
    friend Value l1_diff_sum(Graph&, Value, const Tensor&);
    friend Value mse(Graph&, Value, const Tensor&);
};

// Elementwise and reduction ops.
Value add(Graph& g, Value a, Value b);
Value sub(Graph& g, Value a, Value b);
Value mul(Graph& g, Value a, Value b);
Value scale(Graph& g, Value a, double c);
Value sum(Graph& g, Value a);
Value relu(Graph& g, Value a);
Value sigmoid(Graph& g, Value a);

// conv2d: x [Cin,H,W], w [Cout,Cin,k,k], b [Cout]; k in {1,3}, stride 1,
// padding in {0, (k-1)/2}.
Value conv2d(Graph& g, Value x, Value w, Value b, std::size_t padding);

// Batch-size-1 batchnorm over the spatial cells of [C,H,W]. Train mode
// normalizes by the sample's own statistics (gradients flow through them)
// and updates the running stats; infer mode uses the running stats.
Value batchnorm(Graph& g, Value x, Value gamma, Value beta, BatchNormState state,
                BnMode mode);

Value avg_pool2(Graph& g, Value x);
Value upsample_nearest(Graph& g, Value x, std::size_t factor);

// Numerically stable softmax of the flattened input divided by tau.
Value softmax_scaled(Graph& g, Value x, double tau);

// [C,H,W] -> [H,W]: per-cell mean of absolute channel values (Eq. 4 shape).
Value pool_abs_mean(Graph& g, Value x);

// x [C,H,W] times w [H,W], w broadcast across channels; gradients reach both.
Value mul_hw(Graph& g, Value x, Value w);

Value concat_channels(Graph& g, Value a, Value b);

// sum over all elements of weight[i,j] * (target - x)^2, weight broadcast
// over channels. weight and target are constants; gradient reaches x only.
Value weighted_sq_diff_sum(Graph& g, Value x, const Tensor& target, const Tensor& weight);

// sum |target - x| with sign subgradient (0 at equality).
Value l1_diff_sum(Graph& g, Value x, const Tensor& target);

// mean squared error against a constant target.
Value mse(Graph& g, Value x, const Tensor& target);

// Central finite-difference gradient check. The builder maps the current
// inputs to a scalar loss Value on a fresh graph. Returns the max relative
// error over all coordinates, normalized by max(|analytic|,|numeric|,1e-8).
// Coordinates listed in skip are excluded (kinks).
double grad_check(const std::function<Value(Graph&, std::vector<Value>&)>& build,
                  std::vector<Tensor> inputs, double h,
                  const std::vector<std::pair<std::size_t, std::size_t>>& skip = {});

}  // namespace distillbev
