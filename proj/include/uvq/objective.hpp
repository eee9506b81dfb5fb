#ifndef UVQ_OBJECTIVE_HPP
#define UVQ_OBJECTIVE_HPP

#include <map>
#include <string>
#include <vector>

#include "uvq/assignment.hpp"
#include "uvq/net.hpp"

namespace uvq {

struct LossBreakdown {
    double task = 0.0;
    double kd = 0.0;
    double reg = 0.0;
    double total = 0.0;
};

// Optional coefficients for experimentation; the method default is the plain
// unweighted sum. A zero disables the term (used by the ablation knockouts).
struct LossWeights {
    double task = 1.0;
    double kd = 1.0;
    double reg = 1.0;
};

// Mean squared error between target and network output, averaged over every
// element of the batch.
double task_loss(const Tensor& output, const Tensor& target);

// Sum over blocks of the batch-mean squared feature distance.
double kd_loss(const std::map<std::string, Tensor>& blocks_fp,
               const std::map<std::string, Tensor>& blocks_q);

// n * sum_{unfrozen sub-vectors, slots} r(1-r) / (#sub-vectors in the layer),
// summed over layers. Frozen sub-vectors are excluded.
double reg_loss(const std::vector<LayerAssignment>& assignments);

LossBreakdown total_loss(double task, double kd, double reg,
                         const LossWeights& weights = {});

// Everything the optimizer consumes for one batch: the loss value, dL/dz for
// every sub-vector slot (zero where frozen), and dL/dθ for the uncompressed
// parameters.
struct ObjectiveGradients {
    LossBreakdown loss;
    std::vector<std::vector<double>> logit_grads;  // parallel to set.layers
    Gradients aux;
};

// Chains dL/dW from the network backward pass through the weighted-average
// reconstruction (dW_sv/dr_m = candidate codeword) and the softmax Jacobian
// into dL/dz, adding the regularizer's direct contribution. trace_q must be
// a recorded forward of net_q with soft-reconstructed weights injected and
// all blocks tapped.
ObjectiveGradients backward_to_logits(const TinyNet& net_q,
                                      const ForwardTrace& trace_q,
                                      const Tensor& target,
                                      const std::map<std::string, Tensor>& blocks_fp,
                                      const AssignmentSet& set,
                                      const LossWeights& weights = {});

// Loss evaluation alone (same terms as backward_to_logits), for probes and
// finite-difference tests.
LossBreakdown evaluate_losses(const ForwardTrace& trace_q, const Tensor& target,
                              const std::map<std::string, Tensor>& blocks_fp,
                              const AssignmentSet& set,
                              const LossWeights& weights = {});

// Names of every block of a net, for tapping.
std::set<std::string> all_block_names(const TinyNet& net);

}  // namespace uvq

#endif
