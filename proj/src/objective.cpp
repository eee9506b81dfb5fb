#include "uvq/objective.hpp"

#include <cmath>

namespace uvq {

double task_loss(const Tensor& output, const Tensor& target) {
    return mse(output, target);
}

double kd_loss(const std::map<std::string, Tensor>& blocks_fp,
               const std::map<std::string, Tensor>& blocks_q) {
    if (blocks_fp.size() != blocks_q.size()) {
        throw DataError("kd_loss: block sets differ");
    }
    double total = 0.0;
    for (const auto& [name, fp] : blocks_fp) {
        const auto it = blocks_q.find(name);
        if (it == blocks_q.end()) throw DataError("kd_loss: missing block '" + name + "'");
        const Tensor& q = it->second;
        if (!fp.same_shape(q)) throw DataError("kd_loss: block shape mismatch '" + name + "'");
        const double batch = static_cast<double>(fp.shape[0]);
        total += sum_sq_diff(fp, q) / batch;
    }
    return total;
}

double reg_loss(const std::vector<LayerAssignment>& assignments) {
    double total = 0.0;
    for (const LayerAssignment& la : assignments) {
        if (la.count() == 0) continue;
        const std::vector<double> r = ratios(la);
        double acc = 0.0;
        for (std::size_t sv = 0; sv < la.count(); ++sv) {
            if (la.frozen[sv] != kUnfrozen) continue;
            for (std::size_t m = 0; m < la.n; ++m) {
                const double rm = r[sv * la.n + m];
                acc += rm * (1.0 - rm);
            }
        }
        total += static_cast<double>(la.n) * acc / static_cast<double>(la.count());
    }
    return total;
}

LossBreakdown total_loss(double task, double kd, double reg,
                         const LossWeights& weights) {
    LossBreakdown b;
    b.task = task;
    b.kd = kd;
    b.reg = reg;
    b.total = weights.task * task + weights.kd * kd + weights.reg * reg;
    return b;
}

std::set<std::string> all_block_names(const TinyNet& net) {
    std::set<std::string> names;
    for (const BlockSpec& b : net.blocks) names.insert(b.name);
    return names;
}

LossBreakdown evaluate_losses(const ForwardTrace& trace_q, const Tensor& target,
                              const std::map<std::string, Tensor>& blocks_fp,
                              const AssignmentSet& set, const LossWeights& weights) {
    const double task = task_loss(trace_q.output, target);
    const double kd = kd_loss(blocks_fp, trace_q.block_features);
    const double reg = reg_loss(set.layers);
    return total_loss(task, kd, reg, weights);
}

ObjectiveGradients backward_to_logits(const TinyNet& net_q,
                                      const ForwardTrace& trace_q,
                                      const Tensor& target,
                                      const std::map<std::string, Tensor>& blocks_fp,
                                      const AssignmentSet& set,
                                      const LossWeights& weights) {
    ObjectiveGradients out;
    out.loss = evaluate_losses(trace_q, target, blocks_fp, set, weights);

    // dL_t/d(output), already weighted.
    Tensor grad_out(trace_q.output.shape);
    {
        const double scale =
            weights.task * 2.0 / static_cast<double>(trace_q.output.numel());
        for (std::size_t i = 0; i < grad_out.numel(); ++i) {
            grad_out[i] = scale * (trace_q.output[i] - target.data[i]);
        }
    }

    // dL_kd/d(block feature), injected at each block's last layer.
    std::map<std::size_t, Tensor> injections;
    for (const BlockSpec& b : net_q.blocks) {
        const auto fp_it = blocks_fp.find(b.name);
        if (fp_it == blocks_fp.end()) continue;
        const Tensor& fp = fp_it->second;
        const Tensor& q = trace_q.block_features.at(b.name);
        Tensor g(q.shape);
        const double scale = weights.kd * 2.0 / static_cast<double>(q.shape[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) {
            g[i] = scale * (q[i] - fp.data[i]);
        }
        injections.emplace(b.last, std::move(g));
    }

    out.aux = backward(net_q, trace_q, grad_out, injections);

    // Chain dL/dW -> dL/dr -> dL/dz per sub-vector.
    out.logit_grads.resize(set.layers.size());
    for (std::size_t ai = 0; ai < set.layers.size(); ++ai) {
        const LayerAssignment& la = set.layers[ai];
        const Codebook& cb = set.codebook_for(la);
        const Tensor dW = out.aux.layers[la.layer_index].weight.reshaped(
            {la.rows, la.src_cols});

        std::vector<double>& zg = out.logit_grads[ai];
        zg.assign(la.count() * la.n, 0.0);
        const std::vector<double> r = ratios(la);

        for (std::size_t sv = 0; sv < la.count(); ++sv) {
            if (la.frozen[sv] != kUnfrozen) continue;  // frozen: exact zero

            const std::size_t row = sv / la.cols;
            const std::size_t col = sv % la.cols;
            const std::size_t base = col * la.d;
            const std::size_t len = la.valid_len(sv);

            // dL/dr_m = <dL/dW_sv, c(a_m)> over valid positions, plus the
            // regularizer term n(1-2r)/count.
            std::vector<double> gr(la.n, 0.0);
            const double reg_scale = weights.reg * static_cast<double>(la.n) /
                                     static_cast<double>(la.count());
            for (std::size_t m = 0; m < la.n; ++m) {
                const std::span<const double> c =
                    cb.word(la.candidates[sv * la.n + m]);
                double dot = 0.0;
                for (std::size_t j = 0; j < len; ++j) {
                    dot += dW.at(row, base + j) * c[j];
                }
                const double rm = r[sv * la.n + m];
                gr[m] = dot + reg_scale * (1.0 - 2.0 * rm);
            }

            // Softmax Jacobian: dL/dz_m = r_m (gr_m - sum_j r_j gr_j).
            double mix = 0.0;
            for (std::size_t m = 0; m < la.n; ++m) mix += r[sv * la.n + m] * gr[m];
            for (std::size_t m = 0; m < la.n; ++m) {
                zg[sv * la.n + m] = r[sv * la.n + m] * (gr[m] - mix);
            }
        }
    }
    return out;
}

}  // namespace uvq
