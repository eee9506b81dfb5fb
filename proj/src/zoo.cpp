#include "uvq/zoo.hpp"

#include <cmath>
#include <string>

#include "uvq/optim.hpp"
#include "uvq/rng.hpp"

namespace uvq {

namespace {

Tensor init_weight(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in) {
    Tensor w(std::move(shape));
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : w.data) v = rng.normal(0.0, scale);
    w.snap_to_fp32();  // weights live in fp32 at every serialization boundary
    return w;
}

LayerSpec dense(Rng& rng, std::size_t in, std::size_t out, bool compressible,
                bool head = false) {
    LayerSpec l;
    l.kind = LayerKind::dense;
    l.compressible = compressible;
    l.output_head = head;
    l.weight = init_weight(rng, {out, in}, in);
    l.bias = Tensor::zeros({out});
    return l;
}

LayerSpec conv(Rng& rng, std::size_t ic, std::size_t oc, bool compressible) {
    LayerSpec l;
    l.kind = LayerKind::conv3x3;
    l.compressible = compressible;
    l.weight = init_weight(rng, {oc, ic, 3, 3}, ic * 9);
    l.bias = Tensor::zeros({oc});
    return l;
}

LayerSpec batchnorm(std::size_t c) {
    LayerSpec l;
    l.kind = LayerKind::batchnorm;
    l.gamma = Tensor::full({c}, 1.0);
    l.beta = Tensor::zeros({c});
    l.running_mean = Tensor::zeros({c});
    l.running_var = Tensor::full({c}, 1.0);
    return l;
}

LayerSpec plain(LayerKind kind) {
    LayerSpec l;
    l.kind = kind;
    return l;
}

}  // namespace

TinyNet make_mlp2(std::uint64_t seed) {
    Rng rng(seed_stream(seed, "net/mlp2"));
    TinyNet net;
    net.name = "mlp2";
    net.task = TaskKind::classification;
    net.input_shape = {2};
    net.layers.push_back(dense(rng, 2, 32, false));  // input layer, kept raw
    net.layers.push_back(plain(LayerKind::relu));
    net.layers.push_back(dense(rng, 32, 32, true));
    net.layers.push_back(plain(LayerKind::relu));
    net.layers.push_back(dense(rng, 32, 2, true, true));
    net.layers.push_back(plain(LayerKind::softmax_output));
    net.blocks = {{"stage0", 0, 1}, {"stage1", 2, 3}, {"head", 4, 5}};
    return net;
}

TinyNet make_mlp3(std::uint64_t seed) {
    Rng rng(seed_stream(seed, "net/mlp3"));
    TinyNet net;
    net.name = "mlp3";
    net.task = TaskKind::classification;
    net.input_shape = {16};
    net.layers.push_back(dense(rng, 16, 64, false));
    net.layers.push_back(plain(LayerKind::relu));
    net.layers.push_back(dense(rng, 64, 64, true));
    net.layers.push_back(plain(LayerKind::relu));
    net.layers.push_back(dense(rng, 64, 64, true));
    net.layers.push_back(plain(LayerKind::relu));
    net.layers.push_back(dense(rng, 64, 4, true, true));
    net.layers.push_back(plain(LayerKind::softmax_output));
    net.blocks = {{"stage0", 0, 1}, {"stage1", 2, 3}, {"stage2", 4, 5}, {"head", 6, 7}};
    return net;
}

TinyNet make_cnn(std::uint64_t seed) {
    Rng rng(seed_stream(seed, "net/cnn"));
    TinyNet net;
    net.name = "cnn";
    net.task = TaskKind::classification;
    net.input_shape = {1, 8, 8};
    net.layers.push_back(conv(rng, 1, 8, false));  // input layer
    net.layers.push_back(batchnorm(8));
    net.layers.push_back(plain(LayerKind::relu));
    net.layers.push_back(conv(rng, 8, 8, true));
    net.layers.push_back(batchnorm(8));
    net.layers.push_back(plain(LayerKind::relu));
    net.layers.push_back(plain(LayerKind::flatten));
    net.layers.push_back(dense(rng, 8 * 8 * 8, 16, true));
    net.layers.push_back(plain(LayerKind::relu));
    net.layers.push_back(dense(rng, 16, 4, true, true));
    net.layers.push_back(plain(LayerKind::softmax_output));
    net.blocks = {{"conv0", 0, 2}, {"conv1", 3, 5}, {"fc", 6, 8}, {"head", 9, 10}};
    return net;
}

TinyNet make_ae(std::uint64_t seed) {
    Rng rng(seed_stream(seed, "net/ae"));
    TinyNet net;
    net.name = "ae";
    net.task = TaskKind::regression;
    net.input_shape = {16};
    net.layers.push_back(dense(rng, 16, 32, false));
    net.layers.push_back(plain(LayerKind::relu));
    net.layers.push_back(dense(rng, 32, 8, true));
    net.layers.push_back(plain(LayerKind::relu));
    net.layers.push_back(dense(rng, 8, 32, true));
    net.layers.push_back(plain(LayerKind::relu));
    net.layers.push_back(dense(rng, 32, 16, true, true));
    net.blocks = {{"enc0", 0, 1}, {"enc1", 2, 3}, {"dec0", 4, 5}, {"out", 6, 6}};
    return net;
}

std::vector<std::string> zoo_names() { return {"mlp2", "mlp3", "cnn", "ae"}; }

TinyNet make_net(const std::string& name, std::uint64_t seed) {
    if (name == "mlp2") return make_mlp2(seed);
    if (name == "mlp3") return make_mlp3(seed);
    if (name == "cnn") return make_cnn(seed);
    if (name == "ae") return make_ae(seed);
    throw UsageError("unknown net name: " + name);
}

std::vector<TinyNet> make_zoo(std::uint64_t seed) {
    std::vector<TinyNet> nets;
    for (const std::string& n : zoo_names()) nets.push_back(make_net(n, seed));
    return nets;
}

std::size_t default_float_epochs(const std::string& name) {
    if (name == "mlp2") return 50;
    if (name == "mlp3") return 60;
    if (name == "cnn") return 40;
    if (name == "ae") return 80;
    return 50;
}

double evaluate(const TinyNet& net, const Split& split) {
    const ForwardTrace trace = forward(net, split.inputs);
    if (net.task == TaskKind::regression) {
        return mse(trace.output, split.targets);
    }
    const std::size_t n = split.size();
    const std::size_t k = split.targets.shape[1];
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t pred = 0, truth = 0;
        for (std::size_t j = 1; j < k; ++j) {
            if (trace.output.at(i, j) > trace.output.at(i, pred)) pred = j;
            if (split.targets.at(i, j) > split.targets.at(i, truth)) truth = j;
        }
        if (pred == truth) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

bool metric_higher_is_better(const TinyNet& net) {
    return net.task == TaskKind::classification;
}

TrainResult train_float(const TinyNet& net_in, const Dataset& ds,
                        std::size_t epochs, std::uint64_t seed) {
    TrainResult result;
    result.net = net_in;
    TinyNet& net = result.net;

    Rng rng(seed_stream(seed, "train/" + net.name));
    Adam opt(3e-3);
    const std::vector<ParamRef> params = trainable_params(net);

    const std::size_t n = ds.train.size();
    const std::size_t batch = 32;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    const std::size_t sample_elems = ds.train.inputs.numel() / n;
    const std::size_t target_elems = ds.train.targets.numel() / n;

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t nbatches = 0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t bsz = std::min(batch, n - start);
            std::vector<std::size_t> xshape = ds.train.inputs.shape;
            xshape[0] = bsz;
            std::vector<std::size_t> yshape = ds.train.targets.shape;
            yshape[0] = bsz;
            Tensor x(xshape), y(yshape);
            for (std::size_t b = 0; b < bsz; ++b) {
                const std::size_t src = order[start + b];
                std::copy_n(&ds.train.inputs.data[src * sample_elems], sample_elems,
                            &x.data[b * sample_elems]);
                std::copy_n(&ds.train.targets.data[src * target_elems], target_elems,
                            &y.data[b * target_elems]);
            }

            ForwardTrace trace = forward(net, x, {}, BnMode::batch);
            const double loss = mse(trace.output, y);
            if (!std::isfinite(loss)) {
                throw NumericError(net.name + ": training diverged at epoch " +
                                   std::to_string(epoch));
            }
            epoch_loss += loss;
            ++nbatches;

            // d(mean squared error)/d(output)
            Tensor grad_out(trace.output.shape);
            const double scale = 2.0 / static_cast<double>(trace.output.numel());
            for (std::size_t i = 0; i < grad_out.numel(); ++i) {
                grad_out[i] = scale * (trace.output[i] - y.data[i]);
            }
            Gradients grads = backward(net, trace, grad_out);
            opt.step(net, params, grads);
            update_running_stats(net, trace);
        }
        result.epoch_losses.push_back(nbatches ? epoch_loss / nbatches : 0.0);
    }

    for (LayerSpec& l : net.layers) {
        l.weight.snap_to_fp32();
        l.bias.snap_to_fp32();
        l.gamma.snap_to_fp32();
        l.beta.snap_to_fp32();
        l.running_mean.snap_to_fp32();
        l.running_var.snap_to_fp32();
    }

    result.test_metric = evaluate(net, ds.test);
    return result;
}

}  // namespace uvq
