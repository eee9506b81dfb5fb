#include "uvq/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uvq/rng.hpp"

namespace uvq {

std::pair<std::size_t, std::size_t> canonical_shape(const LayerSpec& layer) {
    if (layer.kind == LayerKind::dense) {
        return {layer.weight.shape[0], layer.weight.shape[1]};
    }
    if (layer.kind == LayerKind::conv3x3) {
        return {layer.weight.shape[0], layer.weight.shape[1] * 9};
    }
    throw DataError("layer has no canonical weight matrix");
}

Tensor canonical_weight(const LayerSpec& layer) {
    const auto [rows, cols] = canonical_shape(layer);
    return layer.weight.reshaped({rows, cols});
}

void set_canonical_weight(LayerSpec& layer, const Tensor& w2d) {
    const auto [rows, cols] = canonical_shape(layer);
    if (w2d.shape != std::vector<std::size_t>{rows, cols}) {
        throw DataError("canonical weight shape mismatch");
    }
    layer.weight = w2d.reshaped(layer.weight.shape);
}

SubVectorGrid decompose(const Tensor& w2d, std::size_t d) {
    if (w2d.rank() != 2) throw DataError("decompose expects a 2-D matrix");
    if (d == 0) throw UsageError("decompose: d must be positive");
    SubVectorGrid grid;
    grid.rows = w2d.shape[0];
    grid.src_cols = w2d.shape[1];
    grid.d = d;
    grid.cols = (grid.src_cols + d - 1) / d;
    const std::size_t rem = grid.src_cols % d;
    grid.valid_tail = rem == 0 ? d : rem;
    grid.data.assign(grid.rows * grid.cols * d, 0.0);
    for (std::size_t r = 0; r < grid.rows; ++r) {
        for (std::size_t c = 0; c < grid.src_cols; ++c) {
            grid.data[(r * grid.cols + c / d) * d + c % d] = w2d.at(r, c);
        }
    }
    return grid;
}

Tensor reassemble(const SubVectorGrid& grid) {
    Tensor w({grid.rows, grid.src_cols});
    for (std::size_t r = 0; r < grid.rows; ++r) {
        for (std::size_t c = 0; c < grid.src_cols; ++c) {
            w.at(r, c) = grid.data[(r * grid.cols + c / grid.d) * grid.d + c % grid.d];
        }
    }
    return w;
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double diff = a[j] - b[j];
        acc += diff * diff;
    }
    return acc;
}

std::vector<std::uint32_t> top_n_by(
    std::size_t k, std::size_t n,
    const std::vector<double>& score /* ascending = better */) {
    std::vector<std::uint32_t> idx(k);
    std::iota(idx.begin(), idx.end(), 0u);
    std::partial_sort(idx.begin(), idx.begin() + n, idx.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                          if (score[a] != score[b]) return score[a] < score[b];
                          return a < b;
                      });
    idx.resize(n);
    return idx;
}

}  // namespace

std::vector<std::uint32_t> find_candidates(std::span<const double> sv,
                                           const Codebook& cb, std::size_t n) {
    if (n > cb.k) throw UsageError("find_candidates: n exceeds codebook size");
    std::vector<double> dist(cb.k);
    for (std::size_t c = 0; c < cb.k; ++c) dist[c] = sq_dist(sv, cb.word(c));
    return top_n_by(cb.k, n, dist);
}

std::vector<double> init_logits(std::span<const double> sv, const Codebook& cb,
                                std::span<const std::uint32_t> candidates) {
    const std::size_t n = candidates.size();
    std::vector<double> d2(n);
    for (std::size_t m = 0; m < n; ++m) {
        d2[m] = std::max(sq_dist(sv, cb.word(candidates[m])), kDistFloor);
    }
    const double d2_last = d2[n - 1];
    std::vector<double> z(n);
    for (std::size_t m = 0; m < n; ++m) z[m] = std::log(d2_last / d2[m]);
    return z;
}

std::size_t LayerAssignment::num_frozen() const {
    std::size_t c = 0;
    for (std::int32_t f : frozen) {
        if (f != kUnfrozen) ++c;
    }
    return c;
}

LayerAssignment build_assignment(std::size_t layer_index, const Tensor& w2d,
                                 const Codebook& cb, std::size_t n,
                                 CandidateSelection selection, LogitInit init,
                                 std::uint64_t seed) {
    if (n < 1) throw UsageError("build_assignment: n must be >= 1");
    if (n > cb.k) throw UsageError("build_assignment: n exceeds codebook size");

    const SubVectorGrid grid = decompose(w2d, cb.d);
    LayerAssignment la;
    la.layer_index = layer_index;
    la.d = grid.d;
    la.rows = grid.rows;
    la.cols = grid.cols;
    la.src_cols = grid.src_cols;
    la.valid_tail = grid.valid_tail;
    la.n = n;
    la.k = cb.k;
    la.candidates.resize(grid.count() * n);
    la.logits.assign(grid.count() * n, 0.0);
    la.frozen.assign(grid.count(), kUnfrozen);

    Rng rng(seed_stream(seed, "candidates/" + std::to_string(layer_index)));

    for (std::size_t sv = 0; sv < grid.count(); ++sv) {
        const std::span<const double> v = grid.vec(sv);
        std::vector<std::uint32_t> cand;
        switch (selection) {
            case CandidateSelection::euclid:
                cand = find_candidates(v, cb, n);
                break;
            case CandidateSelection::cosine: {
                double vn = std::sqrt(
                    std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
                std::vector<double> score(cb.k);
                for (std::size_t c = 0; c < cb.k; ++c) {
                    const std::span<const double> w = cb.word(c);
                    const double wn = std::sqrt(
                        std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
                    double dot = 0.0;
                    for (std::size_t j = 0; j < cb.d; ++j) dot += v[j] * w[j];
                    const double denom = vn * wn;
                    score[c] = denom > 0.0 ? -dot / denom : 0.0;  // ascending = better
                }
                cand = top_n_by(cb.k, n, score);
                break;
            }
            case CandidateSelection::random: {
                const std::vector<std::size_t> picks =
                    rng.sample_without_replacement(cb.k, n);
                cand.assign(picks.begin(), picks.end());
                break;
            }
        }
        std::copy(cand.begin(), cand.end(), la.candidates.begin() + sv * n);
        if (init == LogitInit::inverse_distance) {
            const std::vector<double> z = init_logits(v, cb, cand);
            std::copy(z.begin(), z.end(), la.logits.begin() + sv * n);
        }
    }
    return la;
}

std::vector<double> ratios(const LayerAssignment& la) {
    std::vector<double> r(la.count() * la.n, 0.0);
    for (std::size_t sv = 0; sv < la.count(); ++sv) {
        double* out = &r[sv * la.n];
        if (la.frozen[sv] != kUnfrozen) {
            out[la.frozen[sv]] = 1.0;
            continue;
        }
        const double* z = &la.logits[sv * la.n];
        double mx = z[0];
        for (std::size_t m = 1; m < la.n; ++m) mx = std::max(mx, z[m]);
        double sum = 0.0;
        for (std::size_t m = 0; m < la.n; ++m) {
            out[m] = std::exp(z[m] - mx);
            sum += out[m];
        }
        for (std::size_t m = 0; m < la.n; ++m) out[m] /= sum;
    }
    return r;
}

std::vector<std::uint32_t> hard_slots(const LayerAssignment& la) {
    std::vector<std::uint32_t> slots(la.count());
    const std::vector<double> r = ratios(la);
    for (std::size_t sv = 0; sv < la.count(); ++sv) {
        if (la.frozen[sv] != kUnfrozen) {
            slots[sv] = static_cast<std::uint32_t>(la.frozen[sv]);
            continue;
        }
        const double* rv = &r[sv * la.n];
        std::size_t best = 0;
        for (std::size_t m = 1; m < la.n; ++m) {
            if (rv[m] > rv[best]) best = m;  // ties keep the lower slot
        }
        slots[sv] = static_cast<std::uint32_t>(best);
    }
    return slots;
}

std::vector<std::uint32_t> hard_indices(const LayerAssignment& la) {
    const std::vector<std::uint32_t> slots = hard_slots(la);
    std::vector<std::uint32_t> idx(la.count());
    for (std::size_t sv = 0; sv < la.count(); ++sv) {
        idx[sv] = la.candidates[sv * la.n + slots[sv]];
    }
    return idx;
}

namespace {

Tensor grid_to_matrix(const LayerAssignment& la, std::vector<double> grid_data) {
    SubVectorGrid grid;
    grid.rows = la.rows;
    grid.cols = la.cols;
    grid.d = la.d;
    grid.src_cols = la.src_cols;
    grid.valid_tail = la.valid_tail;
    grid.data = std::move(grid_data);
    return reassemble(grid);
}

}  // namespace

Tensor reconstruct_soft(const LayerAssignment& la, const Codebook& cb) {
    std::vector<double> out(la.count() * la.d, 0.0);
    const std::vector<double> r = ratios(la);
    for (std::size_t sv = 0; sv < la.count(); ++sv) {
        double* dst = &out[sv * la.d];
        if (la.frozen[sv] != kUnfrozen) {
            // One-hot: copy the codeword bits exactly.
            const std::uint32_t idx = la.candidates[sv * la.n + la.frozen[sv]];
            std::copy_n(cb.word(idx).begin(), la.d, dst);
        } else {
            for (std::size_t m = 0; m < la.n; ++m) {
                const double rm = r[sv * la.n + m];
                const std::span<const double> c =
                    cb.word(la.candidates[sv * la.n + m]);
                for (std::size_t j = 0; j < la.d; ++j) dst[j] += rm * c[j];
            }
        }
        for (std::size_t j = la.valid_len(sv); j < la.d; ++j) dst[j] = 0.0;
    }
    return grid_to_matrix(la, std::move(out));
}

Tensor reconstruct_hard(const LayerAssignment& la, const Codebook& cb) {
    std::vector<double> out(la.count() * la.d, 0.0);
    const std::vector<std::uint32_t> idx = hard_indices(la);
    for (std::size_t sv = 0; sv < la.count(); ++sv) {
        std::copy_n(cb.word(idx[sv]).begin(), la.d, &out[sv * la.d]);
        for (std::size_t j = la.valid_len(sv); j < la.d; ++j) out[sv * la.d + j] = 0.0;
    }
    return grid_to_matrix(la, std::move(out));
}

std::size_t AssignmentSet::total_subvectors() const {
    std::size_t t = 0;
    for (const LayerAssignment& la : layers) t += la.count();
    return t;
}

std::size_t AssignmentSet::total_frozen() const {
    std::size_t t = 0;
    for (const LayerAssignment& la : layers) t += la.num_frozen();
    return t;
}

void inject_soft(TinyNet& net, const AssignmentSet& set) {
    for (const LayerAssignment& la : set.layers) {
        set_canonical_weight(net.layers[la.layer_index],
                             reconstruct_soft(la, set.codebook_for(la)));
    }
}

void inject_hard(TinyNet& net, const AssignmentSet& set) {
    for (const LayerAssignment& la : set.layers) {
        set_canonical_weight(net.layers[la.layer_index],
                             reconstruct_hard(la, set.codebook_for(la)));
    }
}

}  // namespace uvq
