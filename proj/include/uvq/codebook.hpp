#ifndef UVQ_CODEBOOK_HPP
#define UVQ_CODEBOOK_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uvq/net.hpp"

namespace uvq {

// k codewords of length d, row-major. Entries are fp32-representable by
// construction (the storage format keeps codewords in 32 bits). Frozen after
// creation: every consumer takes it by const reference.
struct Codebook {
    std::size_t k = 0;
    std::size_t d = 0;
    std::vector<double> words;

    std::span<const double> word(std::size_t idx) const {
        return {words.data() + idx * d, d};
    }
};

// Default (k, d) menu, largest bit-width first: 3 / 2 / 1 / 0.5 bits per
// weight.
struct CodebookShape {
    std::size_t k, d;
};
std::vector<CodebookShape> default_codebook_menu();

// Equal number of weight sub-vectors drawn from each source network.
struct SubVectorPool {
    std::size_t d = 0;
    std::vector<double> vectors;      // [count x d]
    std::vector<std::uint32_t> provenance;  // per-vector source-net index
    std::vector<std::string> sources;       // net names, indexed by provenance

    std::size_t count() const { return d ? vectors.size() / d : 0; }
    std::span<const double> vec(std::size_t idx) const {
        return {vectors.data() + idx * d, d};
    }
};

// All sub-vectors a net contributes: compressible layers in canonical 2-D
// form, rows chopped into d-chunks, final partial chunk zero-padded.
std::size_t available_subvectors(const TinyNet& net, std::size_t d);

// quota_per_net sub-vectors drawn uniformly without replacement per net.
SubVectorPool pool_subvectors(const std::vector<TinyNet>& nets, std::size_t d,
                              std::size_t quota_per_net, std::uint64_t seed);

// Paper-style quota: 10*k*d weight scalars per network, i.e. 10*k sub-vectors.
std::size_t paper_quota_subvectors(std::size_t k);

// Gaussian-product kernel density estimate over a pool.
struct KdeModel {
    const SubVectorPool* pool = nullptr;
    double bandwidth = 0.01;
};

KdeModel fit_kde(const SubVectorPool& pool, double bandwidth);

// Density at a d-vector: (1 / (N h^d)) * sum_i prod_j phi((w_j - w_ij) / h).
double kde_density(const KdeModel& model, std::span<const double> w);

// Exact KDE sampling: pick a pool vector uniformly, add N(0, h^2 I).
// Codeword entries are snapped to fp32. The result is frozen.
Codebook sample_codebook(const KdeModel& model, std::size_t k, std::size_t d,
                         std::uint64_t seed);

// Lloyd's algorithm with k-means++ seeding; `restarts` independent runs keep
// the lowest-SSE result. Empty clusters re-seed from the farthest point.
struct KmeansResult {
    Codebook codebook;
    double sse = 0.0;
    std::vector<double> sse_per_iter;
};
KmeansResult kmeans_codebook(const SubVectorPool& vectors, std::size_t k,
                             std::size_t iters, std::uint64_t seed,
                             std::size_t restarts = 8);

// Lloyd iterations from explicit initial centroids (k x d, row-major).
KmeansResult lloyd_iterate(const SubVectorPool& pool, std::vector<double> centroids,
                           std::size_t k, std::size_t iters);

// Symmetric per-tensor uniform quantizer.
struct UniformQuantizer {
    std::size_t bits = 0;
    double scale = 1.0;
};

struct UniformQuantized {
    Tensor w_hat;
    UniformQuantizer quantizer;
};

// b >= 2: s = max|W| / (2^(b-1) - 1), W_int = clamp(round(W / s)).
// b == 1: s = mean|W|, sign quantizer. All-zero input: s = 1, W_hat = 0.
UniformQuantized uniform_quantize(const Tensor& w, std::size_t bits);

}  // namespace uvq

#endif
