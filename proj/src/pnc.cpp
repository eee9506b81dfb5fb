#include "uvq/pnc.hpp"

#include <algorithm>
#include <cmath>

#include "uvq/optim.hpp"
#include "uvq/rng.hpp"
#include "uvq/zoo.hpp"

namespace uvq {

void PncConfig::validate() const {
    if (!(alpha > 0.5 && alpha < 1.0)) {
        throw UsageError("alpha must lie in (0.5, 1)");
    }
    if (candidates < 1) throw UsageError("candidates must be >= 1");
    if (batch < 1) throw UsageError("batch must be >= 1");
}

std::size_t freeze_pass(LayerAssignment& la, double alpha) {
    const std::vector<double> r = ratios(la);
    std::size_t newly = 0;
    for (std::size_t sv = 0; sv < la.count(); ++sv) {
        if (la.frozen[sv] != kUnfrozen) continue;
        const double* rv = &r[sv * la.n];
        std::size_t best = 0;
        for (std::size_t m = 1; m < la.n; ++m) {
            if (rv[m] > rv[best]) best = m;
        }
        if (rv[best] > alpha) {
            la.frozen[sv] = static_cast<std::int32_t>(best);
            ++newly;
        }
    }
    return newly;
}

std::size_t freeze_pass(AssignmentSet& set, double alpha) {
    std::size_t newly = 0;
    for (LayerAssignment& la : set.layers) newly += freeze_pass(la, alpha);
    return newly;
}

double discrepancy(const AssignmentSet& set) {
    double total = 0.0;
    for (const LayerAssignment& la : set.layers) {
        const Codebook& cb = set.codebook_for(la);
        total += sum_sq_diff(reconstruct_soft(la, cb), reconstruct_hard(la, cb));
    }
    return total;
}

std::vector<double> assignment_histogram(const AssignmentSet& set) {
    std::size_t max_n = 0;
    for (const LayerAssignment& la : set.layers) max_n = std::max(max_n, la.n);
    std::vector<double> hist(max_n, 0.0);
    std::size_t total = 0;
    for (const LayerAssignment& la : set.layers) {
        const std::vector<std::uint32_t> slots = hard_slots(la);
        for (std::uint32_t s : slots) hist[s] += 1.0;
        total += slots.size();
    }
    if (total) {
        for (double& v : hist) v /= static_cast<double>(total);
    }
    return hist;
}

double compressed_weight_mse(const TinyNet& reference, const TinyNet& hard,
                             const AssignmentSet& set) {
    double sq = 0.0;
    std::size_t count = 0;
    for (const LayerAssignment& la : set.layers) {
        const Tensor wf = canonical_weight(reference.layers[la.layer_index]);
        const Tensor wh = canonical_weight(hard.layers[la.layer_index]);
        sq += sum_sq_diff(wf, wh);
        count += wf.numel();
    }
    return count ? sq / static_cast<double>(count) : 0.0;
}

namespace {

// The bias / gamma / beta tensors; injected weights are driven by the logits.
std::vector<ParamRef> aux_params(const TinyNet& net) {
    std::vector<ParamRef> out;
    for (const ParamRef& p : trainable_params(net)) {
        if (p.which != ParamRef::Which::weight) out.push_back(p);
    }
    return out;
}

SubVectorPool layer_pool(const TinyNet& net, std::size_t layer_index, std::size_t d) {
    SubVectorPool pool;
    pool.d = d;
    const SubVectorGrid grid = decompose(canonical_weight(net.layers[layer_index]), d);
    pool.vectors = grid.data;
    pool.provenance.assign(grid.count(), 0);
    pool.sources = {net.name + "/layer" + std::to_string(layer_index)};
    return pool;
}

}  // namespace

CompressionOutcome compress(const TinyNet& net_fp, const Codebook& universal,
                            const Dataset& ds, const PncConfig& config) {
    config.validate();
    if (ds.calib.size() == 0) throw DataError("compress: empty calibration split");

    CompressionOutcome out;
    out.net_hard = net_fp;
    TinyNet& net_q = out.net_hard;
    AssignmentSet& set = out.assignments;
    set.universal = universal;

    for (std::size_t li : net_fp.compressible_layers()) {
        const LayerSpec& layer = net_fp.layers[li];
        const Tensor w2d = canonical_weight(layer);
        if (layer.output_head && config.head_per_layer) {
            SubVectorPool pool = layer_pool(net_fp, li, config.head_d);
            const std::size_t k = std::min(config.head_k, pool.count());
            set.per_layer.push_back(kmeans_codebook(pool, k, config.head_kmeans_iters,
                                                    seed_stream(config.seed, "head"))
                                        .codebook);
            const Codebook& cb = set.per_layer.back();
            LayerAssignment la =
                build_assignment(li, w2d, cb, std::min(config.candidates, cb.k),
                                 config.selection, config.init, config.seed);
            la.codebook_ref = CodebookRefKind::per_layer;
            la.per_layer_cb = set.per_layer.size() - 1;
            set.layers.push_back(std::move(la));
        } else {
            set.layers.push_back(build_assignment(
                li, w2d, universal, std::min(config.candidates, universal.k),
                config.selection, config.init, config.seed));
        }
    }

    PncTrace& trace = out.trace;
    trace.total_subvectors = set.total_subvectors();

    const std::vector<ParamRef> aux = aux_params(net_q);
    Adam adam(config.lr_params);
    std::vector<Adamax> adamax(set.layers.size(), Adamax(config.lr_ratios));

    const std::set<std::string> taps = all_block_names(net_fp);
    const std::size_t n_calib = ds.calib.size();
    const std::size_t steps_per_epoch = (n_calib + config.batch - 1) / config.batch;
    const std::size_t total_steps = config.max_epochs * steps_per_epoch;

    Rng order_rng(seed_stream(config.seed, "compress/order/" + net_fp.name));
    std::vector<std::size_t> order(n_calib);
    for (std::size_t i = 0; i < n_calib; ++i) order[i] = i;

    const std::size_t in_elems = ds.calib.inputs.numel() / n_calib;
    const std::size_t tgt_elems = ds.calib.targets.numel() / n_calib;

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.max_epochs && !set.fully_frozen();
         ++epoch) {
        order_rng.shuffle(order);
        for (std::size_t start = 0; start < n_calib && !set.fully_frozen();
             start += config.batch) {
            const std::size_t bsz = std::min(config.batch, n_calib - start);
            std::vector<std::size_t> xshape = ds.calib.inputs.shape;
            xshape[0] = bsz;
            std::vector<std::size_t> yshape = ds.calib.targets.shape;
            yshape[0] = bsz;
            Tensor x(xshape), y(yshape);
            for (std::size_t b = 0; b < bsz; ++b) {
                const std::size_t src = order[start + b];
                std::copy_n(&ds.calib.inputs.data[src * in_elems], in_elems,
                            &x.data[b * in_elems]);
                std::copy_n(&ds.calib.targets.data[src * tgt_elems], tgt_elems,
                            &y.data[b * tgt_elems]);
            }

            inject_soft(net_q, set);
            const ForwardTrace trace_fp = forward(net_fp, x, taps);
            const ForwardTrace trace_q = forward(net_q, x, taps);
            ObjectiveGradients grads = backward_to_logits(
                net_q, trace_q, y, trace_fp.block_features, set, config.weights);

            if (!std::isfinite(grads.loss.total)) {
                throw NumericError(net_fp.name + ": non-finite loss at step " +
                                   std::to_string(step));
            }

            const double scale =
                scheduled_lr(1.0, config.param_schedule, step, total_steps);
            adam.step(net_q, aux, grads.aux, scale);
            for (std::size_t ai = 0; ai < set.layers.size(); ++ai) {
                adamax[ai].step(set.layers[ai].logits, grads.logit_grads[ai]);
            }
            ++step;

            PncStepRecord rec;
            rec.step = step;
            rec.epoch = epoch;
            rec.loss = grads.loss;
            rec.newly_frozen =
                config.pnc_enabled ? freeze_pass(set, config.alpha) : 0;
            rec.frozen_total = set.total_frozen();

            if (config.eval_cadence && step % config.eval_cadence == 0) {
                TinyNet probe = net_q;
                inject_hard(probe, set);
                rec.hard_metric = evaluate(probe, ds.test);
            }
            trace.steps.push_back(rec);
        }
        trace.epochs_run = epoch + 1;
    }
    trace.steps_run = step;
    trace.converged = set.fully_frozen();

    if (!trace.converged && config.harden_leftovers) {
        trace.discrepancy_at_harden = discrepancy(set);
        for (LayerAssignment& la : set.layers) {
            const std::vector<std::uint32_t> slots = hard_slots(la);
            for (std::size_t sv = 0; sv < la.count(); ++sv) {
                if (la.frozen[sv] == kUnfrozen) {
                    la.frozen[sv] = static_cast<std::int32_t>(slots[sv]);
                    ++trace.leftover_hardened;
                }
            }
        }
    }

    inject_hard(net_q, set);
    for (LayerSpec& l : net_q.layers) {
        l.bias.snap_to_fp32();
        l.gamma.snap_to_fp32();
        l.beta.snap_to_fp32();
    }

    trace.rank_histogram = assignment_histogram(set);
    trace.final_weight_mse = compressed_weight_mse(net_fp, net_q, set);
    trace.final_hard_metric = evaluate(net_q, ds.test);
    return out;
}

}  // namespace uvq
