#ifndef UVQ_PNC_HPP
#define UVQ_PNC_HPP

#include <cstdint>
#include <limits>

#include "uvq/data.hpp"
#include "uvq/objective.hpp"
#include "uvq/optim.hpp"

namespace uvq {

struct PncConfig {
    double alpha = 0.9999;  // freeze threshold, 0.5 < alpha < 1
    std::size_t candidates = 64;
    std::size_t max_epochs = 50;
    std::size_t batch = 32;
    double lr_ratios = 0.3;
    double lr_params = 1e-3;
    LrSchedule param_schedule = LrSchedule::cosine;
    bool pnc_enabled = true;        // false: no freezing, harden everything at the end
    bool harden_leftovers = true;
    std::size_t eval_cadence = 0;   // steps between hard-metric probes, 0 = off
    LossWeights weights;
    CandidateSelection selection = CandidateSelection::euclid;
    LogitInit init = LogitInit::inverse_distance;
    bool head_per_layer = true;     // output head uses a small clustered codebook
    std::size_t head_k = 64;        // clamped to the head's sub-vector count
    std::size_t head_d = 4;
    std::size_t head_kmeans_iters = 50;
    std::uint64_t seed = 0;

    void validate() const;
};

struct PncStepRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    LossBreakdown loss;
    std::size_t newly_frozen = 0;
    std::size_t frozen_total = 0;
    double hard_metric = std::numeric_limits<double>::quiet_NaN();  // probe, NaN if off
};

struct PncTrace {
    std::vector<PncStepRecord> steps;
    std::size_t total_subvectors = 0;
    std::size_t steps_run = 0;
    std::size_t epochs_run = 0;
    bool converged = false;           // all sub-vectors frozen within budget
    std::size_t leftover_hardened = 0;
    double discrepancy_at_harden = 0.0;  // Eq.13 value the final hardening injected
    std::vector<double> rank_histogram;  // winning-slot frequency by candidate rank
    double final_weight_mse = 0.0;       // hard vs float weights, compressed layers
    double final_hard_metric = std::numeric_limits<double>::quiet_NaN();
};

struct CompressionOutcome {
    TinyNet net_hard;          // hard weights injected, aux params trained
    AssignmentSet assignments;
    PncTrace trace;
};

// Freezes every unfrozen sub-vector whose max ratio exceeds alpha (one-hot at
// that slot, ties to the lower slot). Frozen sub-vectors never unfreeze.
std::size_t freeze_pass(LayerAssignment& la, double alpha);
std::size_t freeze_pass(AssignmentSet& set, double alpha);

// Squared Frobenius distance between soft and hard reconstructions, summed
// over layers.
double discrepancy(const AssignmentSet& set);

// Winning-rank frequencies over all sub-vectors (rank = slot in the
// ascending-distance candidate order). Sums to 1.
std::vector<double> assignment_histogram(const AssignmentSet& set);

// The compression driver: builds assignments against the frozen universal
// codebook (plus a per-layer head codebook when configured), then iterates
// batches of the calibration split: soft forward, combined loss, Adamax step
// on logits and Adam step on bias/batchnorm, freeze pass. Stops when every
// sub-vector is frozen or the epoch budget is exhausted; leftovers are
// hardened at their argmax slot when harden_leftovers is set.
CompressionOutcome compress(const TinyNet& net_fp, const Codebook& universal,
                            const Dataset& ds, const PncConfig& config);

// Weight MSE between two nets' compressed layers (canonical form).
double compressed_weight_mse(const TinyNet& reference, const TinyNet& hard,
                             const AssignmentSet& set);

}  // namespace uvq

#endif
