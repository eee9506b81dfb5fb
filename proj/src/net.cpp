#include "uvq/net.hpp"

#include <algorithm>
#include <cmath>

namespace uvq {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv3x3: return "conv2d-3x3";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::relu: return "relu";
        case LayerKind::flatten: return "flatten";
        case LayerKind::softmax_output: return "softmax-output";
    }
    return "?";
}

std::vector<std::size_t> TinyNet::compressible_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].compressible) out.push_back(i);
    }
    return out;
}

void TinyNet::check_blocks() const {
    if (blocks.empty()) throw DataError(name + ": net has no blocks");
    std::size_t expect = 0;
    for (const BlockSpec& b : blocks) {
        if (b.first != expect || b.last < b.first || b.last >= layers.size()) {
            throw DataError(name + ": blocks do not partition the layer list");
        }
        expect = b.last + 1;
    }
    if (expect != layers.size()) {
        throw DataError(name + ": blocks do not cover all layers");
    }
}

namespace {

// Views [B,C] as S=1 and [B,C,H,W] as S=H*W so batchnorm reduces over
// everything except the channel axis.
struct ChannelView {
    std::size_t batch, channels, spatial;
};

ChannelView channel_view(const Tensor& x) {
    if (x.rank() == 2) return {x.shape[0], x.shape[1], 1};
    if (x.rank() == 4) return {x.shape[0], x.shape[1], x.shape[2] * x.shape[3]};
    throw DataError("batchnorm expects rank-2 or rank-4 input");
}

Tensor conv3x3_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    const std::size_t batch = x.shape[0], ic = x.shape[1];
    const std::size_t h = x.shape[2], wd = x.shape[3];
    const std::size_t oc = w.shape[0];
    if (w.shape[1] != ic) throw DataError("conv weight/input channel mismatch");
    Tensor y({batch, oc, h, wd});
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t o = 0; o < oc; ++o) {
            for (std::size_t r = 0; r < h; ++r) {
                for (std::size_t c = 0; c < wd; ++c) {
                    double acc = b.numel() ? b[o] : 0.0;
                    for (std::size_t ci = 0; ci < ic; ++ci) {
                        for (std::size_t kr = 0; kr < 3; ++kr) {
                            const std::size_t rr = r + kr;
                            if (rr < 1 || rr > h) continue;  // zero padding 1
                            for (std::size_t kc = 0; kc < 3; ++kc) {
                                const std::size_t cc = c + kc;
                                if (cc < 1 || cc > wd) continue;
                                acc += x.at(n, ci, rr - 1, cc - 1) * w.at(o, ci, kr, kc);
                            }
                        }
                    }
                    y.at(n, o, r, c) = acc;
                }
            }
        }
    }
    return y;
}

void conv3x3_backward(const Tensor& x, const Tensor& w, const Tensor& g,
                      Tensor& dx, Tensor& dw, Tensor& db) {
    const std::size_t batch = x.shape[0], ic = x.shape[1];
    const std::size_t h = x.shape[2], wd = x.shape[3];
    const std::size_t oc = w.shape[0];
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t o = 0; o < oc; ++o) {
            for (std::size_t r = 0; r < h; ++r) {
                for (std::size_t c = 0; c < wd; ++c) {
                    const double gv = g.at(n, o, r, c);
                    db[o] += gv;
                    for (std::size_t ci = 0; ci < ic; ++ci) {
                        for (std::size_t kr = 0; kr < 3; ++kr) {
                            const std::size_t rr = r + kr;
                            if (rr < 1 || rr > h) continue;
                            for (std::size_t kc = 0; kc < 3; ++kc) {
                                const std::size_t cc = c + kc;
                                if (cc < 1 || cc > wd) continue;
                                dw.at(o, ci, kr, kc) += gv * x.at(n, ci, rr - 1, cc - 1);
                                dx.at(n, ci, rr - 1, cc - 1) += gv * w.at(o, ci, kr, kc);
                            }
                        }
                    }
                }
            }
        }
    }
}

Tensor softmax_rows(const Tensor& x) {
    const std::size_t batch = x.shape[0], k = x.shape[1];
    Tensor y({batch, k});
    for (std::size_t n = 0; n < batch; ++n) {
        double mx = x.at(n, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, x.at(n, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double e = std::exp(x.at(n, j) - mx);
            y.at(n, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < k; ++j) y.at(n, j) /= sum;
    }
    return y;
}

}  // namespace

ForwardTrace forward(const TinyNet& net, const Tensor& x,
                     const std::set<std::string>& taps, BnMode bn_mode) {
    if (x.rank() != net.input_shape.size() + 1) {
        throw DataError(net.name + ": input rank mismatch");
    }
    for (std::size_t i = 0; i < net.input_shape.size(); ++i) {
        if (x.shape[i + 1] != net.input_shape[i]) {
            throw DataError(net.name + ": input shape mismatch");
        }
    }

    ForwardTrace trace;
    trace.bn_mode = bn_mode;
    trace.caches.resize(net.layers.size());

    Tensor cur = x;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& layer = net.layers[li];
        LayerCache& cache = trace.caches[li];
        cache.input = cur;

        switch (layer.kind) {
            case LayerKind::dense:
                cur = dense_forward(cur, layer.weight, layer.bias);
                break;
            case LayerKind::conv3x3:
                cur = conv3x3_forward(cur, layer.weight, layer.bias);
                break;
            case LayerKind::batchnorm: {
                const ChannelView v = channel_view(cur);
                if (v.channels != layer.gamma.numel()) {
                    throw DataError("batchnorm channel mismatch");
                }
                Tensor mean({v.channels}), var({v.channels});
                if (bn_mode == BnMode::batch) {
                    const double cnt = static_cast<double>(v.batch * v.spatial);
                    for (std::size_t c = 0; c < v.channels; ++c) {
                        double m = 0.0;
                        for (std::size_t n = 0; n < v.batch; ++n)
                            for (std::size_t s = 0; s < v.spatial; ++s)
                                m += cur.data[(n * v.channels + c) * v.spatial + s];
                        m /= cnt;
                        double vv = 0.0;
                        for (std::size_t n = 0; n < v.batch; ++n)
                            for (std::size_t s = 0; s < v.spatial; ++s) {
                                const double d =
                                    cur.data[(n * v.channels + c) * v.spatial + s] - m;
                                vv += d * d;
                            }
                        mean[c] = m;
                        var[c] = vv / cnt;
                    }
                    cache.used_batch_stats = true;
                } else {
                    mean = layer.running_mean;
                    var = layer.running_var;
                }
                cache.batch_mean = mean;
                cache.batch_var = var;
                Tensor xhat(cur.shape);
                Tensor y(cur.shape);
                for (std::size_t c = 0; c < v.channels; ++c) {
                    const double inv = 1.0 / std::sqrt(var[c] + layer.bn_eps);
                    for (std::size_t n = 0; n < v.batch; ++n) {
                        for (std::size_t s = 0; s < v.spatial; ++s) {
                            const std::size_t idx = (n * v.channels + c) * v.spatial + s;
                            xhat.data[idx] = (cur.data[idx] - mean[c]) * inv;
                            y.data[idx] = layer.gamma[c] * xhat.data[idx] + layer.beta[c];
                        }
                    }
                }
                cache.xhat = xhat;
                cur = std::move(y);
                break;
            }
            case LayerKind::relu: {
                Tensor y = cur;
                for (double& v : y.data) v = v > 0.0 ? v : 0.0;
                cur = std::move(y);
                break;
            }
            case LayerKind::flatten: {
                std::size_t rest = 1;
                for (std::size_t dim = 1; dim < cur.rank(); ++dim) rest *= cur.shape[dim];
                cur = cur.reshaped({cur.shape[0], rest});
                break;
            }
            case LayerKind::softmax_output:
                cur = softmax_rows(cur);
                break;
        }
        cache.output = cur;
    }

    for (const BlockSpec& b : net.blocks) {
        if (taps.count(b.name)) {
            trace.block_features.emplace(b.name, trace.caches[b.last].output);
        }
    }
    for (const std::string& t : taps) {
        if (!trace.block_features.count(t)) {
            throw DataError(net.name + ": unknown block tap '" + t + "'");
        }
    }

    trace.output = cur;
    trace.recorded = true;
    return trace;
}

Gradients zero_gradients(const TinyNet& net) {
    Gradients g;
    g.layers.resize(net.layers.size());
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        g.layers[i].weight = Tensor::zeros(l.weight.shape);
        g.layers[i].bias = Tensor::zeros(l.bias.shape);
        g.layers[i].gamma = Tensor::zeros(l.gamma.shape);
        g.layers[i].beta = Tensor::zeros(l.beta.shape);
    }
    return g;
}

void Gradients::accumulate(const Gradients& o, double scale) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].weight.add_scaled(o.layers[i].weight, scale);
        layers[i].bias.add_scaled(o.layers[i].bias, scale);
        layers[i].gamma.add_scaled(o.layers[i].gamma, scale);
        layers[i].beta.add_scaled(o.layers[i].beta, scale);
    }
}

Gradients backward(const TinyNet& net, const ForwardTrace& trace,
                   const Tensor& grad_output,
                   const std::map<std::size_t, Tensor>& grad_at_layer_output) {
    if (!trace.recorded || trace.caches.size() != net.layers.size()) {
        throw StateError("backward called without a recorded forward pass");
    }
    if (!grad_output.same_shape(trace.output)) {
        throw DataError("grad_output shape mismatch");
    }

    Gradients grads = zero_gradients(net);
    Tensor g = grad_output;

    for (std::size_t ri = net.layers.size(); ri-- > 0;) {
        const LayerSpec& layer = net.layers[ri];
        const LayerCache& cache = trace.caches[ri];
        LayerGrads& lg = grads.layers[ri];

        if (auto it = grad_at_layer_output.find(ri); it != grad_at_layer_output.end()) {
            g.add_scaled(it->second, 1.0);
        }

        switch (layer.kind) {
            case LayerKind::dense: {
                const Tensor& x = cache.input;
                const std::size_t batch = x.shape[0], in = x.shape[1];
                const std::size_t out = layer.weight.shape[0];
                Tensor dx({batch, in});
                for (std::size_t n = 0; n < batch; ++n) {
                    for (std::size_t o = 0; o < out; ++o) {
                        const double gv = g.at(n, o);
                        lg.bias[o] += gv;
                        for (std::size_t i = 0; i < in; ++i) {
                            lg.weight.at(o, i) += gv * x.at(n, i);
                            dx.at(n, i) += gv * layer.weight.at(o, i);
                        }
                    }
                }
                g = std::move(dx);
                break;
            }
            case LayerKind::conv3x3: {
                Tensor dx = Tensor::zeros(cache.input.shape);
                conv3x3_backward(cache.input, layer.weight, g, dx, lg.weight, lg.bias);
                g = std::move(dx);
                break;
            }
            case LayerKind::batchnorm: {
                const ChannelView v = channel_view(cache.input);
                Tensor dx(cache.input.shape);
                for (std::size_t c = 0; c < v.channels; ++c) {
                    const double inv =
                        1.0 / std::sqrt(cache.batch_var[c] + layer.bn_eps);
                    double dgamma = 0.0, dbeta = 0.0;
                    for (std::size_t n = 0; n < v.batch; ++n) {
                        for (std::size_t s = 0; s < v.spatial; ++s) {
                            const std::size_t idx = (n * v.channels + c) * v.spatial + s;
                            dgamma += g.data[idx] * cache.xhat.data[idx];
                            dbeta += g.data[idx];
                        }
                    }
                    lg.gamma[c] += dgamma;
                    lg.beta[c] += dbeta;

                    if (cache.used_batch_stats) {
                        // Full backward through the batch statistics.
                        const double cnt = static_cast<double>(v.batch * v.spatial);
                        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                        for (std::size_t n = 0; n < v.batch; ++n) {
                            for (std::size_t s = 0; s < v.spatial; ++s) {
                                const std::size_t idx =
                                    (n * v.channels + c) * v.spatial + s;
                                const double dxh = g.data[idx] * layer.gamma[c];
                                sum_dxhat += dxh;
                                sum_dxhat_xhat += dxh * cache.xhat.data[idx];
                            }
                        }
                        for (std::size_t n = 0; n < v.batch; ++n) {
                            for (std::size_t s = 0; s < v.spatial; ++s) {
                                const std::size_t idx =
                                    (n * v.channels + c) * v.spatial + s;
                                const double dxh = g.data[idx] * layer.gamma[c];
                                dx.data[idx] =
                                    inv * (dxh - sum_dxhat / cnt -
                                           cache.xhat.data[idx] * sum_dxhat_xhat / cnt);
                            }
                        }
                    } else {
                        // Frozen stats: plain affine transform.
                        for (std::size_t n = 0; n < v.batch; ++n) {
                            for (std::size_t s = 0; s < v.spatial; ++s) {
                                const std::size_t idx =
                                    (n * v.channels + c) * v.spatial + s;
                                dx.data[idx] = g.data[idx] * layer.gamma[c] * inv;
                            }
                        }
                    }
                }
                g = std::move(dx);
                break;
            }
            case LayerKind::relu: {
                Tensor dx = g;
                for (std::size_t i = 0; i < dx.numel(); ++i) {
                    if (cache.input.data[i] <= 0.0) dx.data[i] = 0.0;
                }
                g = std::move(dx);
                break;
            }
            case LayerKind::flatten:
                g = g.reshaped(cache.input.shape);
                break;
            case LayerKind::softmax_output: {
                const Tensor& s = cache.output;
                const std::size_t batch = s.shape[0], k = s.shape[1];
                Tensor dx({batch, k});
                for (std::size_t n = 0; n < batch; ++n) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < k; ++j) dot += g.at(n, j) * s.at(n, j);
                    for (std::size_t j = 0; j < k; ++j) {
                        dx.at(n, j) = s.at(n, j) * (g.at(n, j) - dot);
                    }
                }
                g = std::move(dx);
                break;
            }
        }
    }
    return grads;
}

void update_running_stats(TinyNet& net, const ForwardTrace& trace, double momentum) {
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        LayerSpec& l = net.layers[i];
        if (l.kind != LayerKind::batchnorm) continue;
        const LayerCache& cache = trace.caches[i];
        if (!cache.used_batch_stats) continue;
        for (std::size_t c = 0; c < l.running_mean.numel(); ++c) {
            l.running_mean[c] =
                (1.0 - momentum) * l.running_mean[c] + momentum * cache.batch_mean[c];
            l.running_var[c] =
                (1.0 - momentum) * l.running_var[c] + momentum * cache.batch_var[c];
        }
    }
}

std::vector<ParamRef> trainable_params(const TinyNet& net) {
    std::vector<ParamRef> refs;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        if (l.weight.numel()) refs.push_back({i, ParamRef::Which::weight});
        if (l.bias.numel()) refs.push_back({i, ParamRef::Which::bias});
        if (l.gamma.numel()) refs.push_back({i, ParamRef::Which::gamma});
        if (l.beta.numel()) refs.push_back({i, ParamRef::Which::beta});
    }
    return refs;
}

Tensor& param_tensor(TinyNet& net, const ParamRef& ref) {
    LayerSpec& l = net.layers[ref.layer];
    switch (ref.which) {
        case ParamRef::Which::weight: return l.weight;
        case ParamRef::Which::bias: return l.bias;
        case ParamRef::Which::gamma: return l.gamma;
        case ParamRef::Which::beta: return l.beta;
    }
    throw StateError("bad param ref");
}

const Tensor& param_tensor(const TinyNet& net, const ParamRef& ref) {
    return param_tensor(const_cast<TinyNet&>(net), ref);
}

Tensor& grad_tensor(Gradients& g, const ParamRef& ref) {
    LayerGrads& l = g.layers[ref.layer];
    switch (ref.which) {
        case ParamRef::Which::weight: return l.weight;
        case ParamRef::Which::bias: return l.bias;
        case ParamRef::Which::gamma: return l.gamma;
        case ParamRef::Which::beta: return l.beta;
    }
    throw StateError("bad param ref");
}

}  // namespace uvq
