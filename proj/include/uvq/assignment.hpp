#ifndef UVQ_ASSIGNMENT_HPP
#define UVQ_ASSIGNMENT_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "uvq/codebook.hpp"
#include "uvq/net.hpp"

namespace uvq {

// Canonical 2-D view of a parameterized layer's weight: dense stays [o, i],
// conv kernels flatten to [oc, ic*9].
std::pair<std::size_t, std::size_t> canonical_shape(const LayerSpec& layer);
Tensor canonical_weight(const LayerSpec& layer);
void set_canonical_weight(LayerSpec& layer, const Tensor& w2d);

// Row-major o x ceil(i/d) grid of d-vectors; the final column of each row is
// zero-padded when i is not divisible by d and pad positions are excluded
// from losses and MSE accounting.
struct SubVectorGrid {
    std::size_t rows = 0, cols = 0, d = 0;
    std::size_t src_cols = 0;    // i of the source matrix
    std::size_t valid_tail = 0;  // valid scalars in the last column (== d if no pad)
    std::vector<double> data;    // rows * cols * d

    std::size_t count() const { return rows * cols; }
    bool padded() const { return valid_tail != d; }
    std::span<const double> vec(std::size_t idx) const {
        return {data.data() + idx * d, d};
    }
    // Valid scalars of sub-vector idx (d, or valid_tail in the last column).
    std::size_t valid_len(std::size_t idx) const {
        return (idx % cols == cols - 1) ? valid_tail : d;
    }
};

SubVectorGrid decompose(const Tensor& w2d, std::size_t d);
Tensor reassemble(const SubVectorGrid& grid);

// The n nearest codewords by squared Euclidean distance, ascending, ties to
// the lower index.
std::vector<std::uint32_t> find_candidates(std::span<const double> sv,
                                           const Codebook& cb, std::size_t n);

// Logits z_m = ln(d2_last / d2_m) over the ascending-distance candidates, so
// softmax(z) is proportional to inverse squared distance. Distances are
// floored at kDistFloor to absorb exact codeword hits.
inline constexpr double kDistFloor = 1e-12;
std::vector<double> init_logits(std::span<const double> sv, const Codebook& cb,
                                std::span<const std::uint32_t> candidates);

enum class CodebookRefKind : std::uint8_t { universal = 0, per_layer = 1 };

inline constexpr std::int32_t kUnfrozen = -1;

// Differentiable assignment state of one compressible layer.
struct LayerAssignment {
    std::size_t layer_index = 0;
    CodebookRefKind codebook_ref = CodebookRefKind::universal;
    std::size_t per_layer_cb = 0;  // index into the per-layer codebook list

    std::size_t d = 0, rows = 0, cols = 0;
    std::size_t src_cols = 0, valid_tail = 0;
    std::size_t n = 0;  // candidates per sub-vector
    std::size_t k = 0;  // codeword count of the referenced codebook

    std::vector<std::uint32_t> candidates;  // [count * n], ascending distance
    std::vector<double> logits;             // [count * n]
    std::vector<std::int32_t> frozen;       // [count], slot or kUnfrozen

    std::size_t count() const { return rows * cols; }
    std::size_t num_frozen() const;
    bool fully_frozen() const { return num_frozen() == count(); }
    std::size_t valid_len(std::size_t sv) const {
        return (sv % cols == cols - 1) ? valid_tail : d;
    }
};

// Builds the assignment for one layer: decompose, candidate search, logit
// init. Candidate selection and logit initialization are configurable for
// the ablation arms; the method default is Euclidean + inverse-distance.
enum class CandidateSelection : std::uint8_t { euclid = 0, cosine = 1, random = 2 };
enum class LogitInit : std::uint8_t { inverse_distance = 0, equal = 1 };

LayerAssignment build_assignment(std::size_t layer_index, const Tensor& w2d,
                                 const Codebook& cb, std::size_t n,
                                 CandidateSelection selection = CandidateSelection::euclid,
                                 LogitInit init = LogitInit::inverse_distance,
                                 std::uint64_t seed = 0);

// Softmax over logits per sub-vector; frozen sub-vectors yield an exact
// one-hot at the frozen slot. Result is [count * n], each n-vector sums to 1.
std::vector<double> ratios(const LayerAssignment& la);

// Weighted-average reconstruction: each sub-vector is sum_m r_m c(a_m);
// pad positions forced to zero. Returns the canonical [rows, src_cols] matrix.
Tensor reconstruct_soft(const LayerAssignment& la, const Codebook& cb);

// Hard reconstruction: each sub-vector replaced by the max-ratio candidate
// (the frozen slot when frozen; ties to the lower slot).
Tensor reconstruct_hard(const LayerAssignment& la, const Codebook& cb);

// Max-ratio slot per sub-vector (frozen slot when frozen).
std::vector<std::uint32_t> hard_slots(const LayerAssignment& la);

// Winning codeword index per sub-vector.
std::vector<std::uint32_t> hard_indices(const LayerAssignment& la);

// Assignment state of a whole network: the frozen universal codebook, any
// per-layer head codebooks, and one LayerAssignment per compressed layer.
struct AssignmentSet {
    Codebook universal;
    std::vector<Codebook> per_layer;
    std::vector<LayerAssignment> layers;

    const Codebook& codebook_for(const LayerAssignment& la) const {
        return la.codebook_ref == CodebookRefKind::universal ? universal
                                                             : per_layer[la.per_layer_cb];
    }
    std::size_t total_subvectors() const;
    std::size_t total_frozen() const;
    bool fully_frozen() const { return total_frozen() == total_subvectors(); }
};

// Writes soft / hard reconstructions into the net's compressed layers.
void inject_soft(TinyNet& net, const AssignmentSet& set);
void inject_hard(TinyNet& net, const AssignmentSet& set);

}  // namespace uvq

#endif
