#include "distillbev/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace distillbev {

Value Graph::leaf(Tensor t, bool requires_grad) {
    Node n;
    n.value = std::move(t);
    n.needs_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Value{nodes_.size() - 1};
}

Value Graph::emit(Tensor value, const std::vector<Value>& inputs,
                  std::function<void(Graph&)> backprop) {
    Node n;
    n.value = std::move(value);
    for (Value in : inputs)
        if (nodes_[in.id].needs_grad) n.needs_grad = true;
    nodes_.push_back(std::move(n));
    Value out{nodes_.size() - 1};
    if (nodes_.back().needs_grad) nodes_.back().backprop = std::move(backprop);
    return out;
}

const Tensor& Graph::grad(Value v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0)
        throw std::logic_error("graph: gradient not populated for this node");
    return n.grad;
}

void Graph::backward(Value loss) {
    Node& ln = nodes_[loss.id];
    if (ln.value.size() != 1)
        throw std::invalid_argument("backward: loss node must be scalar");
    for (auto& n : nodes_)
        if (n.needs_grad) n.grad = Tensor(n.value.shape());
    if (ln.grad.size() == 0) ln.grad = Tensor(ln.value.shape());
    ln.grad[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.needs_grad && n.backprop) n.backprop(*this);
    }
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

// Each op computes its value eagerly, emits the node, then attaches a
// backprop closure that reads the output gradient and accumulates into the
// inputs' gradients. Deferred attachment is how closures learn their own id.
#define DBEV_ATTACH(g, out, ...)                                        \
    do {                                                                \
        if ((g).needs_grad(out)) (g).nodes_[(out).id].backprop = __VA_ARGS__; \
    } while (0)

Value add(Graph& g, Value a, Value b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    check_same_shape(av, bv, "add");
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    Value o = g.emit(std::move(out), {a, b}, nullptr);
    DBEV_ATTACH(g, o, [o, a, b](Graph& gr) {
        const Tensor& go = gr.nodes_[o.id].grad;
        for (Value v : {a, b}) {
            if (!gr.nodes_[v.id].needs_grad) continue;
            Tensor& gi = gr.nodes_[v.id].grad;
            for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
        }
    });
    return o;
}

Value sub(Graph& g, Value a, Value b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    check_same_shape(av, bv, "sub");
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    Value o = g.emit(std::move(out), {a, b}, nullptr);
    DBEV_ATTACH(g, o, [o, a, b](Graph& gr) {
        const Tensor& go = gr.nodes_[o.id].grad;
        if (gr.nodes_[a.id].needs_grad) {
            Tensor& ga = gr.nodes_[a.id].grad;
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (gr.nodes_[b.id].needs_grad) {
            Tensor& gb = gr.nodes_[b.id].grad;
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
        }
    });
    return o;
}

Value mul(Graph& g, Value a, Value b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    check_same_shape(av, bv, "mul");
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    Value o = g.emit(std::move(out), {a, b}, nullptr);
    DBEV_ATTACH(g, o, [o, a, b](Graph& gr) {
        const Tensor& go = gr.nodes_[o.id].grad;
        const Tensor& av2 = gr.value(a);
        const Tensor& bv2 = gr.value(b);
        if (gr.nodes_[a.id].needs_grad) {
            Tensor& ga = gr.nodes_[a.id].grad;
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv2[i];
        }
        if (gr.nodes_[b.id].needs_grad) {
            Tensor& gb = gr.nodes_[b.id].grad;
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av2[i];
        }
    });
    return o;
}

Value scale(Graph& g, Value a, double c) {
    const Tensor& av = g.value(a);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    Value o = g.emit(std::move(out), {a}, nullptr);
    DBEV_ATTACH(g, o, [o, a, c](Graph& gr) {
        const Tensor& go = gr.nodes_[o.id].grad;
        Tensor& ga = gr.nodes_[a.id].grad;
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
    });
    return o;
}

Value sum(Graph& g, Value a) {
    const Tensor& av = g.value(a);
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
    Value o = g.emit(Tensor({1}, {s}), {a}, nullptr);
    DBEV_ATTACH(g, o, [o, a](Graph& gr) {
        double go = gr.nodes_[o.id].grad[0];
        Tensor& ga = gr.nodes_[a.id].grad;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go;
    });
    return o;
}

Value relu(Graph& g, Value a) {
    const Tensor& av = g.value(a);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
    Value o = g.emit(std::move(out), {a}, nullptr);
    DBEV_ATTACH(g, o, [o, a](Graph& gr) {
        const Tensor& go = gr.nodes_[o.id].grad;
        const Tensor& av2 = gr.value(a);
        Tensor& ga = gr.nodes_[a.id].grad;
        // subgradient 0 at exactly 0
        for (std::size_t i = 0; i < go.size(); ++i)
            if (av2[i] > 0.0) ga[i] += go[i];
    });
    return o;
}

Value sigmoid(Graph& g, Value a) {
    const Tensor& av = g.value(a);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-av[i]));
    Value o = g.emit(std::move(out), {a}, nullptr);
    DBEV_ATTACH(g, o, [o, a](Graph& gr) {
        const Tensor& go = gr.nodes_[o.id].grad;
        const Tensor& ov = gr.value(o);
        Tensor& ga = gr.nodes_[a.id].grad;
        for (std::size_t i = 0; i < go.size(); ++i)
            ga[i] += go[i] * ov[i] * (1.0 - ov[i]);
    });
    return o;
}

Value conv2d(Graph& g, Value x, Value w, Value b, std::size_t padding) {
    const Tensor& xv = g.value(x);
    const Tensor& wv = g.value(w);
    const Tensor& bv = g.value(b);
    if (xv.rank() != 3 || wv.rank() != 4 || bv.rank() != 1)
        throw std::invalid_argument("conv2d: expected x[C,H,W], w[Co,Ci,k,k], b[Co]");
    const std::size_t ci = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    const std::size_t co = wv.dim(0), k = wv.dim(2);
    if (wv.dim(1) != ci || wv.dim(3) != k || bv.dim(0) != co)
        throw std::invalid_argument("conv2d: shape mismatch");
    if (k != 1 && k != 3) throw std::invalid_argument("conv2d: kernel must be 1 or 3");
    if (padding != 0 && padding != (k - 1) / 2)
        throw std::invalid_argument("conv2d: padding must be 0 or (k-1)/2");
    const std::size_t ho = h + 2 * padding - k + 1;
    const std::size_t wo = wd + 2 * padding - k + 1;

    Tensor out({co, ho, wo});
    const long pad = static_cast<long>(padding);
    // Accumulate one shifted input row at a time so the inner loop over j is a
    // contiguous multiply-add the compiler can vectorize.
    for (std::size_t oc = 0; oc < co; ++oc) {
        double* oplane = &out.at(oc, 0, 0);
        const double bias = bv[oc];
        for (std::size_t idx = 0; idx < ho * wo; ++idx) oplane[idx] = bias;
        for (std::size_t icn = 0; icn < ci; ++icn)
            for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const double wval = wv[((oc * ci + icn) * k + ky) * k + kx];
                    const long dy = static_cast<long>(ky) - pad;
                    const long dx_off = static_cast<long>(kx) - pad;
                    for (std::size_t i = 0; i < ho; ++i) {
                        const long sy = static_cast<long>(i) + dy;
                        if (sy < 0 || sy >= static_cast<long>(h)) continue;
                        const std::size_t j0 = dx_off < 0 ? static_cast<std::size_t>(-dx_off) : 0;
                        const std::size_t j1 =
                            std::min(wo, static_cast<std::size_t>(static_cast<long>(wd) - dx_off));
                        const double* xrow = xv.data() + (icn * h + sy) * wd + dx_off;
                        double* orow = oplane + i * wo;
                        for (std::size_t j = j0; j < j1; ++j) orow[j] += wval * xrow[j];
                    }
                }
    }

    Value o = g.emit(std::move(out), {x, w, b}, nullptr);
    DBEV_ATTACH(g, o, [o, x, w, b, padding](Graph& gr) {
        const Tensor& go = gr.nodes_[o.id].grad;
        const Tensor& xv2 = gr.value(x);
        const Tensor& wv2 = gr.value(w);
        const std::size_t ci = xv2.dim(0), h = xv2.dim(1), wd = xv2.dim(2);
        const std::size_t co = wv2.dim(0), k = wv2.dim(2);
        const std::size_t ho = go.dim(1), wo = go.dim(2);
        const long pad = static_cast<long>(padding);
        const bool gx = gr.nodes_[x.id].needs_grad;
        const bool gw = gr.nodes_[w.id].needs_grad;
        const bool gb = gr.nodes_[b.id].needs_grad;
        Tensor* dx = gx ? &gr.nodes_[x.id].grad : nullptr;
        Tensor* dw = gw ? &gr.nodes_[w.id].grad : nullptr;
        Tensor* db = gb ? &gr.nodes_[b.id].grad : nullptr;
        for (std::size_t oc = 0; oc < co; ++oc) {
            const double* gplane = go.data() + oc * ho * wo;
            if (db) {
                double acc = 0.0;
                for (std::size_t idx = 0; idx < ho * wo; ++idx) acc += gplane[idx];
                (*db)[oc] += acc;
            }
            if (!dw && !dx) continue;
            for (std::size_t icn = 0; icn < ci; ++icn)
                for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const std::size_t wi = ((oc * ci + icn) * k + ky) * k + kx;
                        const double wval = wv2[wi];
                        const long dy = static_cast<long>(ky) - pad;
                        const long dx_off = static_cast<long>(kx) - pad;
                        double wacc = 0.0;
                        for (std::size_t i = 0; i < ho; ++i) {
                            const long sy = static_cast<long>(i) + dy;
                            if (sy < 0 || sy >= static_cast<long>(h)) continue;
                            const std::size_t j0 =
                                dx_off < 0 ? static_cast<std::size_t>(-dx_off) : 0;
                            const std::size_t j1 = std::min(
                                wo, static_cast<std::size_t>(static_cast<long>(wd) - dx_off));
                            const double* grow = gplane + i * wo;
                            const double* xrow = xv2.data() + (icn * h + sy) * wd + dx_off;
                            if (dw)
                                for (std::size_t j = j0; j < j1; ++j) wacc += grow[j] * xrow[j];
                            if (dx) {
                                double* dxrow = &dx->at(icn, sy, 0) + dx_off;
                                for (std::size_t j = j0; j < j1; ++j)
                                    dxrow[j] += wval * grow[j];
                            }
                        }
                        if (dw) (*dw)[wi] += wacc;
                    }
        }
    });
    return o;
}

Value batchnorm(Graph& g, Value x, Value gamma, Value beta, BatchNormState state,
                BnMode mode) {
    const Tensor& xv = g.value(x);
    const Tensor& gv = g.value(gamma);
    const Tensor& bv = g.value(beta);
    if (xv.rank() != 3) throw std::invalid_argument("batchnorm: expected [C,H,W]");
    const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    if (gv.size() != c || bv.size() != c)
        throw std::invalid_argument("batchnorm: gamma/beta size mismatch");
    const std::size_t n = h * w;
    const double eps = state.eps;

    std::vector<double> mean(c), var(c);
    if (mode == BnMode::train) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double m = 0.0;
            for (std::size_t i = 0; i < n; ++i) m += xv[ch * n + i];
            m /= static_cast<double>(n);
            double v = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = xv[ch * n + i] - m;
                v += d * d;
            }
            v /= static_cast<double>(n);
            mean[ch] = m;
            var[ch] = v;
        }
        if (state.running_mean && state.running_var) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                (*state.running_mean)[ch] =
                    (1.0 - state.momentum) * (*state.running_mean)[ch] + state.momentum * mean[ch];
                (*state.running_var)[ch] =
                    (1.0 - state.momentum) * (*state.running_var)[ch] + state.momentum * var[ch];
            }
        }
    } else {
        if (!state.running_mean || !state.running_var)
            throw std::invalid_argument("batchnorm: infer mode needs running stats");
        for (std::size_t ch = 0; ch < c; ++ch) {
            mean[ch] = (*state.running_mean)[ch];
            var[ch] = (*state.running_var)[ch];
        }
    }

    Tensor out(xv.shape());
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double inv = 1.0 / std::sqrt(var[ch] + eps);
        for (std::size_t i = 0; i < n; ++i) {
            const double xh = (xv[ch * n + i] - mean[ch]) * inv;
            (*xhat)[ch * n + i] = xh;
            out[ch * n + i] = gv[ch] * xh + bv[ch];
        }
    }

    auto invstd = std::make_shared<std::vector<double>>(c);
    for (std::size_t ch = 0; ch < c; ++ch) (*invstd)[ch] = 1.0 / std::sqrt(var[ch] + eps);

    Value o = g.emit(std::move(out), {x, gamma, beta}, nullptr);
    DBEV_ATTACH(g, o, [o, x, gamma, beta, xhat, invstd, mode, n, c](Graph& gr) {
        const Tensor& go = gr.nodes_[o.id].grad;
        const Tensor& gv2 = gr.value(gamma);
        if (gr.nodes_[gamma.id].needs_grad) {
            Tensor& gg = gr.nodes_[gamma.id].grad;
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < n; ++i)
                    gg[ch] += go[ch * n + i] * (*xhat)[ch * n + i];
        }
        if (gr.nodes_[beta.id].needs_grad) {
            Tensor& gb = gr.nodes_[beta.id].grad;
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < n; ++i) gb[ch] += go[ch * n + i];
        }
        if (gr.nodes_[x.id].needs_grad) {
            Tensor& gx = gr.nodes_[x.id].grad;
            if (mode == BnMode::train) {
                // gradient flows through the batch statistics
                for (std::size_t ch = 0; ch < c; ++ch) {
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        sum_g += go[ch * n + i];
                        sum_gx += go[ch * n + i] * (*xhat)[ch * n + i];
                    }
                    const double mg = sum_g / static_cast<double>(n);
                    const double mgx = sum_gx / static_cast<double>(n);
                    const double k = gv2[ch] * (*invstd)[ch];
                    for (std::size_t i = 0; i < n; ++i)
                        gx[ch * n + i] +=
                            k * (go[ch * n + i] - mg - (*xhat)[ch * n + i] * mgx);
                }
            } else {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double k = gv2[ch] * (*invstd)[ch];
                    for (std::size_t i = 0; i < n; ++i) gx[ch * n + i] += k * go[ch * n + i];
                }
            }
        }
    });
    return o;
}

Value avg_pool2(Graph& g, Value x) {
    const Tensor& xv = g.value(x);
    if (xv.rank() != 3) throw std::invalid_argument("avg_pool2: expected [C,H,W]");
    const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("avg_pool2: spatial dims must be even");
    Tensor out({c, h / 2, w / 2});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h / 2; ++i)
            for (std::size_t j = 0; j < w / 2; ++j)
                out.at(ch, i, j) = 0.25 * (xv.at(ch, 2 * i, 2 * j) + xv.at(ch, 2 * i, 2 * j + 1) +
                                           xv.at(ch, 2 * i + 1, 2 * j) +
                                           xv.at(ch, 2 * i + 1, 2 * j + 1));
    Value o = g.emit(std::move(out), {x}, nullptr);
    DBEV_ATTACH(g, o, [o, x](Graph& gr) {
        const Tensor& go = gr.nodes_[o.id].grad;
        Tensor& gx = gr.nodes_[x.id].grad;
        const std::size_t c = go.dim(0), ho = go.dim(1), wo = go.dim(2);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    const double gq = 0.25 * go.at(ch, i, j);
                    gx.at(ch, 2 * i, 2 * j) += gq;
                    gx.at(ch, 2 * i, 2 * j + 1) += gq;
                    gx.at(ch, 2 * i + 1, 2 * j) += gq;
                    gx.at(ch, 2 * i + 1, 2 * j + 1) += gq;
                }
    });
    return o;
}

Value upsample_nearest(Graph& g, Value x, std::size_t factor) {
    if (factor == 0) throw std::invalid_argument("upsample_nearest: factor must be >= 1");
    const Tensor& xv = g.value(x);
    if (xv.rank() != 3) throw std::invalid_argument("upsample_nearest: expected [C,H,W]");
    const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    Tensor out({c, h * factor, w * factor});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h * factor; ++i)
            for (std::size_t j = 0; j < w * factor; ++j)
                out.at(ch, i, j) = xv.at(ch, i / factor, j / factor);
    Value o = g.emit(std::move(out), {x}, nullptr);
    DBEV_ATTACH(g, o, [o, x, factor](Graph& gr) {
        const Tensor& go = gr.nodes_[o.id].grad;
        Tensor& gx = gr.nodes_[x.id].grad;
        const std::size_t c = go.dim(0), ho = go.dim(1), wo = go.dim(2);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j)
                    gx.at(ch, i / factor, j / factor) += go.at(ch, i, j);
    });
    return o;
}

Value softmax_scaled(Graph& g, Value x, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("softmax_scaled: tau must be > 0");
    const Tensor& xv = g.value(x);
    Tensor out(xv.shape());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < xv.size(); ++i) mx = std::max(mx, xv[i] / tau);
    double z = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = std::exp(xv[i] / tau - mx);
        z += out[i];
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= z;
    Value o = g.emit(std::move(out), {x}, nullptr);
    DBEV_ATTACH(g, o, [o, x, tau](Graph& gr) {
        const Tensor& go = gr.nodes_[o.id].grad;
        const Tensor& ov = gr.value(o);
        Tensor& gx = gr.nodes_[x.id].grad;
        double dot = 0.0;
        for (std::size_t i = 0; i < go.size(); ++i) dot += go[i] * ov[i];
        for (std::size_t i = 0; i < go.size(); ++i)
            gx[i] += ov[i] * (go[i] - dot) / tau;
    });
    return o;
}

Value pool_abs_mean(Graph& g, Value x) {
    const Tensor& xv = g.value(x);
    if (xv.rank() != 3 || xv.dim(0) < 1)
        throw std::invalid_argument("pool_abs_mean: expected [C,H,W], C >= 1");
    const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    Tensor out({h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h * w; ++i) out[i] += std::abs(xv[ch * h * w + i]);
    for (std::size_t i = 0; i < h * w; ++i) out[i] /= static_cast<double>(c);
    Value o = g.emit(std::move(out), {x}, nullptr);
    DBEV_ATTACH(g, o, [o, x](Graph& gr) {
        const Tensor& go = gr.nodes_[o.id].grad;
        const Tensor& xv2 = gr.value(x);
        Tensor& gx = gr.nodes_[x.id].grad;
        const std::size_t c = xv2.dim(0), hw = go.size();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hw; ++i) {
                const double v = xv2[ch * hw + i];
                const double s = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                gx[ch * hw + i] += go[i] * s / static_cast<double>(c);
            }
    });
    return o;
}

Value mul_hw(Graph& g, Value x, Value w) {
    const Tensor& xv = g.value(x);
    const Tensor& wv = g.value(w);
    if (xv.rank() != 3 || wv.rank() != 2 || xv.dim(1) != wv.dim(0) || xv.dim(2) != wv.dim(1))
        throw std::invalid_argument("mul_hw: expected x[C,H,W] and w[H,W]");
    const std::size_t c = xv.dim(0), hw = wv.size();
    Tensor out(xv.shape());
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i) out[ch * hw + i] = xv[ch * hw + i] * wv[i];
    Value o = g.emit(std::move(out), {x, w}, nullptr);
    DBEV_ATTACH(g, o, [o, x, w](Graph& gr) {
        const Tensor& go = gr.nodes_[o.id].grad;
        const Tensor& xv2 = gr.value(x);
        const Tensor& wv2 = gr.value(w);
        const std::size_t c = xv2.dim(0), hw = wv2.size();
        if (gr.nodes_[x.id].needs_grad) {
            Tensor& gx = gr.nodes_[x.id].grad;
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < hw; ++i)
                    gx[ch * hw + i] += go[ch * hw + i] * wv2[i];
        }
        if (gr.nodes_[w.id].needs_grad) {
            Tensor& gw = gr.nodes_[w.id].grad;
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < hw; ++i)
                    gw[i] += go[ch * hw + i] * xv2[ch * hw + i];
        }
    });
    return o;
}

Value concat_channels(Graph& g, Value a, Value b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2))
        throw std::invalid_argument("concat_channels: spatial shape mismatch");
    Tensor out({av.dim(0) + bv.dim(0), av.dim(1), av.dim(2)});
    std::copy(av.data(), av.data() + av.size(), out.data());
    std::copy(bv.data(), bv.data() + bv.size(), out.data() + av.size());
    Value o = g.emit(std::move(out), {a, b}, nullptr);
    DBEV_ATTACH(g, o, [o, a, b](Graph& gr) {
        const Tensor& go = gr.nodes_[o.id].grad;
        const std::size_t na = gr.value(a).size();
        if (gr.nodes_[a.id].needs_grad) {
            Tensor& ga = gr.nodes_[a.id].grad;
            for (std::size_t i = 0; i < na; ++i) ga[i] += go[i];
        }
        if (gr.nodes_[b.id].needs_grad) {
            Tensor& gb = gr.nodes_[b.id].grad;
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[na + i];
        }
    });
    return o;
}

Value weighted_sq_diff_sum(Graph& g, Value x, const Tensor& target, const Tensor& weight) {
    const Tensor& xv = g.value(x);
    check_same_shape(xv, target, "weighted_sq_diff_sum");
    if (xv.rank() != 3 || weight.rank() != 2 || weight.dim(0) != xv.dim(1) ||
        weight.dim(1) != xv.dim(2))
        throw std::invalid_argument("weighted_sq_diff_sum: weight must be [H,W]");
    const std::size_t c = xv.dim(0), hw = weight.size();
    double loss = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i) {
            const double d = target[ch * hw + i] - xv[ch * hw + i];
            loss += weight[i] * d * d;
        }
    auto tgt = std::make_shared<Tensor>(target);
    auto wgt = std::make_shared<Tensor>(weight);
    Value o = g.emit(Tensor({1}, {loss}), {x}, nullptr);
    DBEV_ATTACH(g, o, [o, x, tgt, wgt](Graph& gr) {
        const double go = gr.nodes_[o.id].grad[0];
        const Tensor& xv2 = gr.value(x);
        Tensor& gx = gr.nodes_[x.id].grad;
        const std::size_t c = xv2.dim(0), hw = wgt->size();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = (*tgt)[ch * hw + i] - xv2[ch * hw + i];
                gx[ch * hw + i] += go * (-2.0) * (*wgt)[i] * d;
            }
    });
    return o;
}

Value l1_diff_sum(Graph& g, Value x, const Tensor& target) {
    const Tensor& xv = g.value(x);
    check_same_shape(xv, target, "l1_diff_sum");
    double loss = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) loss += std::abs(target[i] - xv[i]);
    auto tgt = std::make_shared<Tensor>(target);
    Value o = g.emit(Tensor({1}, {loss}), {x}, nullptr);
    DBEV_ATTACH(g, o, [o, x, tgt](Graph& gr) {
        const double go = gr.nodes_[o.id].grad[0];
        const Tensor& xv2 = gr.value(x);
        Tensor& gx = gr.nodes_[x.id].grad;
        for (std::size_t i = 0; i < xv2.size(); ++i) {
            const double d = (*tgt)[i] - xv2[i];
            const double s = d > 0.0 ? -1.0 : (d < 0.0 ? 1.0 : 0.0);
            gx[i] += go * s;
        }
    });
    return o;
}

Value mse(Graph& g, Value x, const Tensor& target) {
    const Tensor& xv = g.value(x);
    check_same_shape(xv, target, "mse");
    const double n = static_cast<double>(xv.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double d = xv[i] - target[i];
        loss += d * d;
    }
    loss /= n;
    auto tgt = std::make_shared<Tensor>(target);
    Value o = g.emit(Tensor({1}, {loss}), {x}, nullptr);
    DBEV_ATTACH(g, o, [o, x, tgt, n](Graph& gr) {
        const double go = gr.nodes_[o.id].grad[0];
        const Tensor& xv2 = gr.value(x);
        Tensor& gx = gr.nodes_[x.id].grad;
        for (std::size_t i = 0; i < xv2.size(); ++i)
            gx[i] += go * 2.0 * (xv2[i] - (*tgt)[i]) / n;
    });
    return o;
}

double grad_check(const std::function<Value(Graph&, std::vector<Value>&)>& build,
                  std::vector<Tensor> inputs, double h,
                  const std::vector<std::pair<std::size_t, std::size_t>>& skip) {
    auto eval = [&](const std::vector<Tensor>& ins) {
        Graph g;
        std::vector<Value> vals;
        vals.reserve(ins.size());
        for (const auto& t : ins) vals.push_back(g.leaf(t, false));
        Value loss = build(g, vals);
        return g.value(loss)[0];
    };

    Graph g;
    std::vector<Value> vals;
    for (const auto& t : inputs) vals.push_back(g.leaf(t, true));
    Value loss = build(g, vals);
    g.backward(loss);

    auto skipped = [&](std::size_t ti, std::size_t ci) {
        for (const auto& [a, b] : skip)
            if (a == ti && b == ci) return true;
        return false;
    };

    double max_rel = 0.0;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        const Tensor& ana = g.grad(vals[ti]);
        for (std::size_t ci = 0; ci < inputs[ti].size(); ++ci) {
            if (skipped(ti, ci)) continue;
            std::vector<Tensor> pert = inputs;
            pert[ti][ci] += h;
            const double fp = eval(pert);
            pert[ti][ci] -= 2.0 * h;
            const double fm = eval(pert);
            const double num = (fp - fm) / (2.0 * h);
            const double denom = std::max({std::abs(ana[ci]), std::abs(num), 1e-8});
            max_rel = std::max(max_rel, std::abs(ana[ci] - num) / denom);
        }
    }
    return max_rel;
}

}  // namespace distillbev
