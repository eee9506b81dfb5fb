#include "uvq/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "uvq/assignment.hpp"
#include "uvq/rng.hpp"

namespace uvq {

std::vector<CodebookShape> default_codebook_menu() {
    return {{1u << 12, 4}, {1u << 16, 8}, {1u << 16, 16}, {1u << 16, 32}};
}

std::size_t available_subvectors(const TinyNet& net, std::size_t d) {
    std::size_t total = 0;
    for (std::size_t li : net.compressible_layers()) {
        const auto [rows, cols] = canonical_shape(net.layers[li]);
        total += rows * ((cols + d - 1) / d);
    }
    return total;
}

std::size_t paper_quota_subvectors(std::size_t k) { return 10 * k; }

SubVectorPool pool_subvectors(const std::vector<TinyNet>& nets, std::size_t d,
                              std::size_t quota_per_net, std::uint64_t seed) {
    if (nets.empty()) throw UsageError("pool_subvectors: no networks given");
    if (d == 0) throw UsageError("pool_subvectors: d must be positive");

    SubVectorPool pool;
    pool.d = d;
    for (std::size_t ni = 0; ni < nets.size(); ++ni) {
        const TinyNet& net = nets[ni];
        // Deterministic enumeration: layers in order, grid row-major.
        std::vector<double> all;
        for (std::size_t li : net.compressible_layers()) {
            const SubVectorGrid grid = decompose(canonical_weight(net.layers[li]), d);
            all.insert(all.end(), grid.data.begin(), grid.data.end());
        }
        const std::size_t avail = all.size() / d;
        if (quota_per_net > avail) {
            throw UsageError("pool_subvectors: quota " + std::to_string(quota_per_net) +
                             " exceeds " + std::to_string(avail) +
                             " available sub-vectors of net '" + net.name + "'");
        }
        Rng rng(seed_stream(seed, "pool/" + net.name));
        const std::vector<std::size_t> picks =
            rng.sample_without_replacement(avail, quota_per_net);
        for (std::size_t p : picks) {
            pool.vectors.insert(pool.vectors.end(), all.begin() + p * d,
                                all.begin() + (p + 1) * d);
            pool.provenance.push_back(static_cast<std::uint32_t>(ni));
        }
        pool.sources.push_back(net.name);
    }
    return pool;
}

KdeModel fit_kde(const SubVectorPool& pool, double bandwidth) {
    if (bandwidth <= 0.0) throw UsageError("KDE bandwidth must be positive");
    if (pool.count() == 0) throw UsageError("KDE over an empty pool");
    return KdeModel{&pool, bandwidth};
}

double kde_density(const KdeModel& model, std::span<const double> w) {
    const SubVectorPool& pool = *model.pool;
    if (w.size() != pool.d) throw DataError("kde_density dimension mismatch");
    const double h = model.bandwidth;
    const std::size_t n = pool.count();
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::span<const double> wi = pool.vec(i);
        double sq = 0.0;
        for (std::size_t j = 0; j < pool.d; ++j) {
            const double u = (w[j] - wi[j]) / h;
            sq += u * u;
        }
        sum += std::exp(-0.5 * sq);
    }
    const double dd = static_cast<double>(pool.d);
    const double norm = std::pow(2.0 * std::numbers::pi, -0.5 * dd) /
                        (static_cast<double>(n) * std::pow(h, dd));
    return norm * sum;
}

Codebook sample_codebook(const KdeModel& model, std::size_t k, std::size_t d,
                         std::uint64_t seed) {
    if (k < 1) throw UsageError("sample_codebook: k must be >= 1");
    const SubVectorPool& pool = *model.pool;
    if (pool.d != d) throw DataError("sample_codebook: pool dimension mismatch");
    Rng rng(seed_stream(seed, "codebook"));
    Codebook cb;
    cb.k = k;
    cb.d = d;
    cb.words.resize(k * d);
    for (std::size_t i = 0; i < k; ++i) {
        const std::span<const double> base = pool.vec(rng.uniform_int(pool.count()));
        for (std::size_t j = 0; j < d; ++j) {
            const double v = base[j] + model.bandwidth * rng.normal();
            cb.words[i * d + j] = static_cast<double>(static_cast<float>(v));
        }
    }
    return cb;
}

namespace {

double sq_dist(std::span<const double> a, const double* b, std::size_t d) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double diff = a[j] - b[j];
        acc += diff * diff;
    }
    return acc;
}

struct LloydState {
    std::vector<double> centroids;  // k x d
    std::vector<std::size_t> assign;
    double sse = 0.0;
};

// Assign each vector to its nearest centroid (ties to the lower index).
double assign_step(const SubVectorPool& pool, const std::vector<double>& centroids,
                   std::size_t k, std::vector<std::size_t>& assign) {
    const std::size_t n = pool.count(), d = pool.d;
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_c = 0;
        for (std::size_t c = 0; c < k; ++c) {
            const double dist = sq_dist(pool.vec(i), &centroids[c * d], d);
            if (dist < best) {
                best = dist;
                best_c = c;
            }
        }
        assign[i] = best_c;
        sse += best;
    }
    return sse;
}

std::vector<double> kmeanspp_seed(const SubVectorPool& pool, std::size_t k, Rng& rng) {
    const std::size_t n = pool.count(), d = pool.d;
    std::vector<double> centroids;
    centroids.reserve(k * d);
    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());

    std::size_t first = rng.uniform_int(n);
    centroids.insert(centroids.end(), pool.vec(first).begin(), pool.vec(first).end());
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dist = sq_dist(pool.vec(i), &centroids[(c - 1) * d], d);
            min_d2[i] = std::min(min_d2[i], dist);
            total += min_d2[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double r = rng.uniform() * total;
            for (std::size_t i = 0; i < n; ++i) {
                r -= min_d2[i];
                if (r <= 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.uniform_int(n);
        }
        centroids.insert(centroids.end(), pool.vec(pick).begin(), pool.vec(pick).end());
    }
    return centroids;
}

}  // namespace

KmeansResult lloyd_iterate(const SubVectorPool& pool, std::vector<double> centroids,
                           std::size_t k, std::size_t iters) {
    const std::size_t n = pool.count(), d = pool.d;
    std::vector<std::size_t> assign(n, 0);
    KmeansResult res;

    double sse = assign_step(pool, centroids, k, assign);
    res.sse_per_iter.push_back(sse);

    for (std::size_t it = 0; it < iters; ++it) {
        // Update step: centroid = mean of members.
        std::vector<double> sums(k * d, 0.0);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::span<const double> v = pool.vec(i);
            for (std::size_t j = 0; j < d; ++j) sums[assign[i] * d + j] += v[j];
            ++counts[assign[i]];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            for (std::size_t j = 0; j < d; ++j) {
                centroids[c * d + j] = sums[c * d + j] / static_cast<double>(counts[c]);
            }
        }
        // Empty clusters: re-seed from the point farthest from its centroid.
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            double worst = -1.0;
            std::size_t worst_i = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const double dist = sq_dist(pool.vec(i), &centroids[assign[i] * d], d);
                if (dist > worst) {
                    worst = dist;
                    worst_i = i;
                }
            }
            std::copy_n(pool.vec(worst_i).begin(), d, centroids.begin() + c * d);
        }

        std::vector<std::size_t> prev = assign;
        const double new_sse = assign_step(pool, centroids, k, assign);
        res.sse_per_iter.push_back(new_sse);
        sse = new_sse;
        if (assign == prev) break;
    }

    res.codebook.k = k;
    res.codebook.d = d;
    res.codebook.words = std::move(centroids);
    for (double& v : res.codebook.words) v = static_cast<double>(static_cast<float>(v));
    res.sse = sse;
    return res;
}

KmeansResult kmeans_codebook(const SubVectorPool& vectors, std::size_t k,
                             std::size_t iters, std::uint64_t seed,
                             std::size_t restarts) {
    if (k == 0) throw UsageError("kmeans_codebook: k must be >= 1");
    if (k > vectors.count()) {
        throw UsageError("kmeans_codebook: k exceeds vector count");
    }
    KmeansResult best;
    best.sse = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
        Rng rng(seed_stream(seed, "kmeans/restart" + std::to_string(r)));
        KmeansResult run =
            lloyd_iterate(vectors, kmeanspp_seed(vectors, k, rng), k, iters);
        if (run.sse < best.sse) best = std::move(run);
    }
    return best;
}

UniformQuantized uniform_quantize(const Tensor& w, std::size_t bits) {
    if (bits < 1 || bits > 8) throw UsageError("uniform_quantize: bits must be in 1..8");

    UniformQuantized out;
    out.quantizer.bits = bits;
    out.w_hat = Tensor::zeros(w.shape);

    double max_abs = 0.0, mean_abs = 0.0;
    for (double v : w.data) {
        max_abs = std::max(max_abs, std::fabs(v));
        mean_abs += std::fabs(v);
    }
    if (w.numel()) mean_abs /= static_cast<double>(w.numel());

    if (max_abs == 0.0) {
        out.quantizer.scale = 1.0;  // degenerate all-zero input
        return out;
    }

    if (bits == 1) {
        const double s = mean_abs;
        out.quantizer.scale = s;
        for (std::size_t i = 0; i < w.numel(); ++i) {
            out.w_hat[i] = w[i] >= 0.0 ? s : -s;
        }
        return out;
    }

    const double qmax = static_cast<double>((1u << (bits - 1)) - 1u);
    const double s = max_abs / qmax;
    out.quantizer.scale = s;
    for (std::size_t i = 0; i < w.numel(); ++i) {
        double q = std::round(w[i] / s);
        q = std::clamp(q, -qmax, qmax);
        out.w_hat[i] = s * q;
    }
    return out;
}

}  // namespace uvq
