#include "uvq/data.hpp"

#include <cmath>
#include <numbers>

#include "uvq/rng.hpp"

namespace uvq {

namespace {

constexpr std::size_t kTrain = 512;
constexpr std::size_t kCalib = 256;
constexpr std::size_t kTest = 1000;

struct LabeledBatch {
    Tensor inputs;
    Tensor targets;
};

Split make_split(Rng& rng, std::size_t n,
                 LabeledBatch (*sample)(Rng&, std::size_t)) {
    LabeledBatch b = sample(rng, n);
    return Split{std::move(b.inputs), std::move(b.targets)};
}

// --- two-cluster 2-D ---------------------------------------------------

LabeledBatch sample_two_cluster(Rng& rng, std::size_t n) {
    // Two interleaved spiral-arm clusters. The curved boundary uses most of
    // a 2x32 MLP's capacity, so weight quantization has a measurable cost
    // (axis-aligned Gaussian blobs are insensitive to it).
    const double turns = 1.5, noise = 0.04;
    Tensor x({n, 2}), y({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = rng.uniform_int(2);
        const double u = rng.uniform();
        const double t = turns * 2.0 * std::numbers::pi * std::sqrt(u) + 0.5;
        const double r = 0.12 * t;
        const double phase = cls == 0 ? 0.0 : std::numbers::pi;
        x.at(i, 0) = r * std::cos(t + phase) + rng.normal(0.0, noise);
        x.at(i, 1) = r * std::sin(t + phase) + rng.normal(0.0, noise);
        y.at(i, cls) = 1.0;
    }
    return {std::move(x), std::move(y)};
}

// --- four clusters in 16-D ---------------------------------------------

LabeledBatch sample_cluster_16d(Rng& rng, std::size_t n) {
    constexpr std::size_t dim = 16, classes = 4;
    // Fixed class means on coordinate pairs; moderate spread.
    static const double offsets[classes][2] = {
        {1.0, 1.0}, {-1.0, 1.0}, {1.0, -1.0}, {-1.0, -1.0}};
    const double sigma = 0.7;
    Tensor x({n, dim}), y({n, classes});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = rng.uniform_int(classes);
        for (std::size_t j = 0; j < dim; ++j) {
            const double mean = (j < 2) ? offsets[cls][j] : 0.25 * offsets[cls][j % 2];
            x.at(i, j) = rng.normal(mean, sigma);
        }
        y.at(i, cls) = 1.0;
    }
    return {std::move(x), std::move(y)};
}

// --- 8x8 patterns -------------------------------------------------------

LabeledBatch sample_patterns(Rng& rng, std::size_t n) {
    constexpr std::size_t hw = 8, classes = 4;
    Tensor x({n, 1, hw, hw}), y({n, classes});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = rng.uniform_int(classes);
        const double phase = rng.uniform_int(2) ? 1.0 : -1.0;
        for (std::size_t r = 0; r < hw; ++r) {
            for (std::size_t c = 0; c < hw; ++c) {
                double v = 0.0;
                switch (cls) {
                    case 0: v = (r / 2) % 2 ? 1.0 : -1.0; break;          // h-stripes
                    case 1: v = (c / 2) % 2 ? 1.0 : -1.0; break;          // v-stripes
                    case 2: v = ((r / 2) + (c / 2)) % 2 ? 1.0 : -1.0; break;  // checker
                    case 3: v = (r + c < hw) ? 1.0 : -1.0; break;         // diagonal
                }
                x.at(i, 0, r, c) = phase * v + rng.normal(0.0, 0.6);
            }
        }
        y.at(i, cls) = 1.0;
    }
    return {std::move(x), std::move(y)};
}

// --- low-rank 16-D ------------------------------------------------------

LabeledBatch sample_lowrank(Rng& rng, std::size_t n) {
    constexpr std::size_t dim = 16, rank = 4;
    // Fixed mixing matrix, independent of the sample stream.
    static const Tensor mix = [] {
        Rng fixed(0x5eedA0u);
        Tensor a({dim, rank});
        for (double& v : a.data) v = fixed.normal(0.0, 0.8);
        return a;
    }();
    Tensor x({n, dim});
    for (std::size_t i = 0; i < n; ++i) {
        double z[rank];
        for (double& v : z) v = rng.normal();
        for (std::size_t j = 0; j < dim; ++j) {
            double acc = 0.0;
            for (std::size_t r = 0; r < rank; ++r) acc += mix.at(j, r) * z[r];
            x.at(i, j) = acc + rng.normal(0.0, 0.05);
        }
    }
    Tensor y = x;
    return {std::move(x), std::move(y)};
}

Dataset build(const std::string& name, std::uint64_t seed,
              LabeledBatch (*sample)(Rng&, std::size_t),
              std::size_t calib_n = kCalib) {
    Dataset ds;
    ds.name = name;
    Rng train_rng(seed_stream(seed, name + "/train"));
    Rng calib_rng(seed_stream(seed, name + "/calib"));
    Rng test_rng(seed_stream(seed, name + "/test"));
    ds.train = make_split(train_rng, kTrain, sample);
    ds.calib = make_split(calib_rng, calib_n, sample);
    ds.test = make_split(test_rng, kTest, sample);
    return ds;
}

}  // namespace

Dataset make_two_cluster_2d(std::uint64_t seed) {
    // PTQ-style scarce calibration split: 32 samples. Distillation against
    // the float net's block features carries most of the signal here.
    return build("two-cluster-2d", seed, sample_two_cluster, 32);
}

Dataset make_cluster_16d(std::uint64_t seed) {
    return build("cluster-16d", seed, sample_cluster_16d);
}

Dataset make_patterns_8x8(std::uint64_t seed) {
    return build("patterns-8x8", seed, sample_patterns);
}

Dataset make_lowrank_16d(std::uint64_t seed) {
    return build("lowrank-16d", seed, sample_lowrank);
}

Dataset dataset_for(const std::string& net_name, std::uint64_t seed) {
    if (net_name == "mlp2") return make_two_cluster_2d(seed);
    if (net_name == "mlp3") return make_cluster_16d(seed);
    if (net_name == "cnn") return make_patterns_8x8(seed);
    if (net_name == "ae") return make_lowrank_16d(seed);
    throw UsageError("unknown net name: " + net_name);
}

}  // namespace uvq
