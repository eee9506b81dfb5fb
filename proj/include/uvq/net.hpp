#ifndef UVQ_NET_HPP
#define UVQ_NET_HPP

#include <map>
#include <set>
#include <string>
#include <vector>

#include "uvq/tensor.hpp"

namespace uvq {

enum class LayerKind : std::uint8_t {
    dense = 0,
    conv3x3 = 1,
    batchnorm = 2,
    relu = 3,
    flatten = 4,
    softmax_output = 5,
};

const char* layer_kind_name(LayerKind k);

// One layer of the fixed layer set. Which tensors are populated depends on
// kind: dense carries weight [o,i] + bias [o]; conv3x3 carries weight
// [oc,ic,3,3] + bias [oc] (stride 1, zero padding 1); batchnorm carries
// gamma/beta and frozen-able running stats, all [c].
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    bool compressible = false;
    bool output_head = false;  // last quantizable layer; may get a per-layer codebook

    Tensor weight;
    Tensor bias;
    Tensor gamma, beta;
    Tensor running_mean, running_var;
    double bn_eps = 1e-5;

    bool has_weight() const {
        return kind == LayerKind::dense || kind == LayerKind::conv3x3;
    }
};

// Inclusive layer-index range used as a distillation tap. Blocks are ordered
// and partition the whole layer list.
struct BlockSpec {
    std::string name;
    std::size_t first = 0;
    std::size_t last = 0;
};

enum class TaskKind : std::uint8_t { classification = 0, regression = 1 };

struct TinyNet {
    std::string name;
    TaskKind task = TaskKind::classification;
    std::vector<std::size_t> input_shape;  // per-sample, without batch dim
    std::vector<LayerSpec> layers;
    std::vector<BlockSpec> blocks;

    std::vector<std::size_t> compressible_layers() const;
    void check_blocks() const;  // blocks must partition [0, layers)
};

// Whether batchnorm normalizes with batch statistics (float training) or the
// stored running statistics (eval and the whole compression path).
enum class BnMode : std::uint8_t { running = 0, batch = 1 };

struct LayerCache {
    Tensor input;
    Tensor output;
    Tensor xhat;                 // batchnorm normalized input
    Tensor batch_mean, batch_var;
    bool used_batch_stats = false;
};

struct ForwardTrace {
    Tensor output;
    std::vector<LayerCache> caches;
    std::map<std::string, Tensor> block_features;
    BnMode bn_mode = BnMode::running;
    bool recorded = false;
};

// Deterministic forward over a batch x of shape [B, input_shape...].
// block_features holds exactly the requested taps (feature = output of the
// block's last layer).
ForwardTrace forward(const TinyNet& net, const Tensor& x,
                     const std::set<std::string>& taps = {},
                     BnMode bn_mode = BnMode::running);

struct LayerGrads {
    Tensor weight, bias, gamma, beta;  // shaped like the parameters, zero-init
};

struct Gradients {
    std::vector<LayerGrads> layers;

    void accumulate(const Gradients& o, double scale = 1.0);
};

Gradients zero_gradients(const TinyNet& net);

// Reverse pass over a recorded trace. grad_output is dL/d(net output);
// grad_at_layer_output[j] is added to the gradient flowing into the output of
// layer j (used to inject block-wise distillation gradients). Returns dL/dθ
// for every parameter tensor, including dL/dW for compressible weights.
// Running stats receive no gradient.
Gradients backward(const TinyNet& net, const ForwardTrace& trace,
                   const Tensor& grad_output,
                   const std::map<std::size_t, Tensor>& grad_at_layer_output = {});

// Momentum update of batchnorm running stats from the batch statistics
// recorded in a batch-mode trace.
void update_running_stats(TinyNet& net, const ForwardTrace& trace,
                          double momentum = 0.1);

// Flattened views over the trainable parameters (running stats excluded).
struct ParamRef {
    std::size_t layer;
    enum class Which : std::uint8_t { weight, bias, gamma, beta } which;
};
std::vector<ParamRef> trainable_params(const TinyNet& net);
Tensor& param_tensor(TinyNet& net, const ParamRef& ref);
const Tensor& param_tensor(const TinyNet& net, const ParamRef& ref);
Tensor& grad_tensor(Gradients& g, const ParamRef& ref);

}  // namespace uvq

#endif
