#ifndef UVQ_DATA_HPP
#define UVQ_DATA_HPP

#include <cstdint>
#include <string>

#include "uvq/tensor.hpp"

namespace uvq {

struct Split {
    Tensor inputs;   // [N, sample shape...]
    Tensor targets;  // classification: one-hot [N, classes]; regression: [N, dim]
    std::size_t size() const { return inputs.numel() ? inputs.shape[0] : 0; }
};

// Synthetic, fully seeded. Identical seed, identical bytes.
struct Dataset {
    std::string name;
    Split train, calib, test;
};

// Two Gaussian clusters in 2-D, two classes. Margin tuned so a small MLP
// separates them well but coarse weight quantization costs visible accuracy.
Dataset make_two_cluster_2d(std::uint64_t seed);

// Four Gaussian clusters in 16-D with overlap, four classes.
Dataset make_cluster_16d(std::uint64_t seed);

// 8x8 single-channel patterns (stripes / checker / diagonal) plus noise,
// four classes.
Dataset make_patterns_8x8(std::uint64_t seed);

// Low-rank 16-D signals for the autoencoder; targets equal inputs.
Dataset make_lowrank_16d(std::uint64_t seed);

// Dataset for a zoo net by name ("mlp2", "mlp3", "cnn", "ae").
Dataset dataset_for(const std::string& net_name, std::uint64_t seed);

}  // namespace uvq

#endif
