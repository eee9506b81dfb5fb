#ifndef UVQ_ZOO_HPP
#define UVQ_ZOO_HPP

#include <cstdint>
#include <vector>

#include "uvq/data.hpp"
#include "uvq/net.hpp"

namespace uvq {

// Four small heterogeneous networks. The first parameterized layer of each
// net is the input layer and stays uncompressed; the last is the output head.
TinyNet make_mlp2(std::uint64_t seed);  // 2 -> 32 -> 32 -> 2, two clusters
TinyNet make_mlp3(std::uint64_t seed);  // 16 -> 64 -> 64 -> 64 -> 4
TinyNet make_cnn(std::uint64_t seed);   // two 3x3 conv blocks on 8x8 inputs
TinyNet make_ae(std::uint64_t seed);    // 16 -> 32 -> 8 -> 32 -> 16 autoencoder

std::vector<TinyNet> make_zoo(std::uint64_t seed);
std::vector<std::string> zoo_names();

TinyNet make_net(const std::string& name, std::uint64_t seed);
std::size_t default_float_epochs(const std::string& name);

struct TrainResult {
    TinyNet net;
    double test_metric;  // classification: accuracy; regression: MSE
    std::vector<double> epoch_losses;
};

// Full-precision training with Adam on the train split; MSE objective on the
// network output (softmax outputs vs one-hot targets for classification).
// Deterministic given seed; weights are snapped to fp32 at the end so bundle
// round-trips are bit-identical. Raises NumericError on NaN loss.
TrainResult train_float(const TinyNet& net, const Dataset& ds,
                        std::size_t epochs, std::uint64_t seed);

// Accuracy for classification nets, MSE for regression nets, on a split.
double evaluate(const TinyNet& net, const Split& split);

// True when larger metric values are better (classification accuracy).
bool metric_higher_is_better(const TinyNet& net);

}  // namespace uvq

#endif
