#include "uvq/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "uvq/codebook.hpp"
#include "uvq/data.hpp"
#include "uvq/pnc.hpp"
#include "uvq/rng.hpp"
#include "uvq/storage.hpp"
#include "uvq/zoo.hpp"

namespace uvq {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Line-delimited structured run log.
class RunLog {
public:
    void open(const fs::path& path) {
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        out_.open(path, std::ios::trunc);
        if (!out_) throw DataError("cannot open run log " + path.string());
    }
    void event(const json& j) {
        if (out_.is_open()) out_ << j.dump() << "\n";
    }

private:
    std::ofstream out_;
};

std::uint64_t resolve_seed(const CLI::App* cmd, std::uint64_t flag_value) {
    if (cmd->count("--seed")) return flag_value;
    if (const char* env = std::getenv("UVQ_SEED")) {
        return static_cast<std::uint64_t>(std::strtoull(env, nullptr, 10));
    }
    return flag_value;
}

std::vector<TinyNet> load_zoo(const fs::path& dir,
                              const std::vector<std::string>& names) {
    std::vector<TinyNet> nets;
    for (const std::string& name : names) {
        const fs::path p = dir / (name + ".uvqw");
        if (!fs::exists(p)) {
            throw DataError("missing weight bundle " + p.string() +
                            " (run `uvq zoo` first)");
        }
        nets.push_back(load_bundle(p));
    }
    return nets;
}

std::vector<std::string> split_names(const std::string& csv) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : csv) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::size_t auto_quota(const std::vector<TinyNet>& nets, std::size_t d,
                       std::size_t k, std::size_t requested) {
    if (requested > 0) return requested;
    std::size_t avail = SIZE_MAX;
    for (const TinyNet& net : nets) {
        avail = std::min(avail, available_subvectors(net, d));
    }
    return std::min(avail, paper_quota_subvectors(k));
}

struct FittedCodebook {
    CodebookFile file;
    SubVectorPool pool;
};

FittedCodebook fit_universal(const std::vector<TinyNet>& nets, std::size_t k,
                             std::size_t d, double bandwidth, std::size_t quota,
                             std::uint64_t seed) {
    FittedCodebook out;
    const std::size_t q = auto_quota(nets, d, k, quota);
    out.pool = pool_subvectors(nets, d, q, seed);
    const KdeModel kde = fit_kde(out.pool, bandwidth);
    out.file.codebook = sample_codebook(kde, k, d, seed);
    out.file.bandwidth = bandwidth;
    out.file.seed = seed;
    out.file.quota_per_net = q;
    std::string sources;
    for (const TinyNet& n : nets) {
        if (!sources.empty()) sources += ",";
        sources += n.name;
    }
    out.file.sources = sources;
    return out;
}

json loss_json(const LossBreakdown& l) {
    return {{"task", l.task}, {"kd", l.kd}, {"reg", l.reg}, {"total", l.total}};
}

json report_json(const CompressionReport& r) {
    return {{"net", r.net_name},
            {"weight_mse", r.weight_mse},
            {"bits_per_weight", r.bits_per_weight},
            {"rate_weights_only", r.rate_weights_only},
            {"rate_weights_only_rounded", r.rate_weights_only_rounded},
            {"ratio_total", r.ratio_total},
            {"ratio_total_amortized", r.ratio_total_amortized},
            {"original_bytes", r.original_bytes},
            {"compressed_bytes", r.compressed_bytes},
            {"stream_bytes", r.stream_bytes},
            {"residual_bytes", r.residual_bytes},
            {"codebook_bytes", r.codebook_bytes},
            {"compressed_weights", r.compressed_weights},
            {"io_loads", r.io_loads}};
}

void write_trace(const fs::path& path, const PncTrace& trace) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open trace file " + path.string());
    for (const PncStepRecord& s : trace.steps) {
        json j = {{"event", "step"},
                  {"step", s.step},
                  {"epoch", s.epoch},
                  {"loss", loss_json(s.loss)},
                  {"newly_frozen", s.newly_frozen},
                  {"frozen_total", s.frozen_total}};
        if (!std::isnan(s.hard_metric)) j["hard_metric"] = s.hard_metric;
        out << j.dump() << "\n";
    }
    json fin = {{"event", "final"},
                {"total_subvectors", trace.total_subvectors},
                {"steps_run", trace.steps_run},
                {"epochs_run", trace.epochs_run},
                {"converged", trace.converged},
                {"leftover_hardened", trace.leftover_hardened},
                {"discrepancy_at_harden", trace.discrepancy_at_harden},
                {"rank_histogram", trace.rank_histogram},
                {"final_weight_mse", trace.final_weight_mse},
                {"final_hard_metric", trace.final_hard_metric}};
    out << fin.dump() << "\n";
}

const char* metric_label(const TinyNet& net) {
    return net.task == TaskKind::classification ? "accuracy" : "mse";
}

// --- zoo -------------------------------------------------------------------

struct ZooOpts {
    std::string out_dir;
    std::uint64_t seed = 42;
    std::size_t epochs = 0;  // 0: per-net default
};

int cmd_zoo(const ZooOpts& o, const CLI::App* cmd) {
    const std::uint64_t seed = resolve_seed(cmd, o.seed);
    RunLog log;
    log.open(fs::path(o.out_dir) / "zoo.runlog.jsonl");
    log.event({{"event", "config"},
               {"cmd", "zoo"},
               {"out", o.out_dir},
               {"seed", seed},
               {"epochs", o.epochs}});

    json summary = json::array();
    std::printf("%-6s %-14s %-8s %-10s %s\n", "net", "dataset", "epochs", "metric",
                "bundle");
    for (const std::string& name : zoo_names()) {
        const TinyNet init = make_net(name, seed);
        const Dataset ds = dataset_for(name, seed);
        const std::size_t epochs = o.epochs ? o.epochs : default_float_epochs(name);
        const TrainResult tr = train_float(init, ds, epochs, seed);

        const fs::path out = fs::path(o.out_dir) / (name + ".uvqw");
        save_bundle(out, tr.net);
        const std::uint64_t hash = fnv1a64(read_file(out));

        std::printf("%-6s %-14s %-8zu %-10.4f %s\n", name.c_str(), ds.name.c_str(),
                    epochs, tr.test_metric, out.string().c_str());
        json rec = {{"net", name},
                    {"dataset", ds.name},
                    {"epochs", epochs},
                    {"metric_kind", metric_label(tr.net)},
                    {"test_metric", tr.test_metric},
                    {"bundle", out.string()},
                    {"bundle_fnv1a64", hash}};
        summary.push_back(rec);
        log.event({{"event", "net_trained"}, {"record", rec}});
    }

    std::ofstream js(fs::path(o.out_dir) / "zoo.json", std::ios::trunc);
    js << json({{"seed", seed}, {"nets", summary}}).dump(2) << "\n";
    log.event({{"event", "result"}, {"nets", summary}});
    return kExitOk;
}

// --- fit-codebook ------------------------------------------------------------

struct FitOpts {
    std::string zoo_dir;
    std::string out_file;
    std::string nets_csv;
    std::size_t k = 256;
    std::size_t d = 4;
    double bandwidth = 0.01;
    std::size_t quota = 0;
    std::uint64_t seed = 42;
};

int cmd_fit_codebook(const FitOpts& o, const CLI::App* cmd) {
    const std::uint64_t seed = resolve_seed(cmd, o.seed);
    std::vector<std::string> names =
        o.nets_csv.empty() ? zoo_names() : split_names(o.nets_csv);
    const std::vector<TinyNet> nets = load_zoo(o.zoo_dir, names);
    const FittedCodebook fitted =
        fit_universal(nets, o.k, o.d, o.bandwidth, o.quota, seed);
    save_codebook(o.out_file, fitted.file);

    RunLog log;
    log.open(fs::path(o.out_file).string() + ".runlog.jsonl");
    log.event({{"event", "config"},
               {"cmd", "fit-codebook"},
               {"zoo", o.zoo_dir},
               {"nets", names},
               {"k", o.k},
               {"d", o.d},
               {"bandwidth", o.bandwidth},
               {"quota", fitted.file.quota_per_net},
               {"seed", seed},
               {"out", o.out_file}});
    const std::uint64_t hash = fnv1a64(read_file(o.out_file));
    log.event({{"event", "result"},
               {"pool_vectors", fitted.pool.count()},
               {"codebook_fnv1a64", hash}});

    std::printf("codebook %zux%zu sampled from %zu pooled sub-vectors (%s) -> %s\n",
                o.k, o.d, fitted.pool.count(), fitted.file.sources.c_str(),
                o.out_file.c_str());
    return kExitOk;
}

// --- compress -----------------------------------------------------------------

struct CompressOpts {
    std::string codebook_file;
    std::string model_file;
    std::string out_file;
    std::string trace_file;
    double alpha = 0.9999;
    std::size_t candidates = 64;
    std::size_t epochs = 150;
    std::size_t batch = 32;
    double lr_ratios = 0.3;
    double lr_params = 1e-3;
    std::string schedule = "cosine";
    std::uint64_t seed = 42;
    std::uint64_t data_seed = 0;  // 0: same as seed
    bool no_pnc = false;
    bool no_kd = false;
    bool no_reg = false;
    bool no_task = false;
    bool no_harden = false;
    std::string selection = "euclid";
    std::string ratio_init = "inv";
    bool head_universal = false;
    std::size_t head_k = 64;
    std::size_t head_d = 4;
    std::size_t eval_cadence = 0;
};

PncConfig to_pnc_config(const CompressOpts& o, std::uint64_t seed) {
    PncConfig cfg;
    cfg.alpha = o.alpha;
    cfg.candidates = o.candidates;
    cfg.max_epochs = o.epochs;
    cfg.batch = o.batch;
    cfg.lr_ratios = o.lr_ratios;
    cfg.lr_params = o.lr_params;
    if (o.schedule == "cosine") {
        cfg.param_schedule = LrSchedule::cosine;
    } else if (o.schedule == "constant") {
        cfg.param_schedule = LrSchedule::constant;
    } else {
        throw UsageError("unknown schedule '" + o.schedule + "'");
    }
    cfg.pnc_enabled = !o.no_pnc;
    cfg.harden_leftovers = !o.no_harden;
    cfg.eval_cadence = o.eval_cadence;
    cfg.weights.task = o.no_task ? 0.0 : 1.0;
    cfg.weights.kd = o.no_kd ? 0.0 : 1.0;
    cfg.weights.reg = o.no_reg ? 0.0 : 1.0;
    if (o.selection == "euclid") {
        cfg.selection = CandidateSelection::euclid;
    } else if (o.selection == "cosine") {
        cfg.selection = CandidateSelection::cosine;
    } else if (o.selection == "random") {
        cfg.selection = CandidateSelection::random;
    } else {
        throw UsageError("unknown selection '" + o.selection + "'");
    }
    if (o.ratio_init == "inv") {
        cfg.init = LogitInit::inverse_distance;
    } else if (o.ratio_init == "equal") {
        cfg.init = LogitInit::equal;
    } else {
        throw UsageError("unknown ratio init '" + o.ratio_init + "'");
    }
    cfg.head_per_layer = !o.head_universal;
    cfg.head_k = o.head_k;
    cfg.head_d = o.head_d;
    cfg.seed = seed;
    return cfg;
}

int cmd_compress(const CompressOpts& o, const CLI::App* cmd) {
    const std::uint64_t seed = resolve_seed(cmd, o.seed);
    const std::uint64_t data_seed = o.data_seed ? o.data_seed : seed;

    const TinyNet net_fp = load_bundle(o.model_file);
    const CodebookFile cbf = load_codebook(o.codebook_file);
    const Dataset ds = dataset_for(net_fp.name, data_seed);
    const PncConfig cfg = to_pnc_config(o, seed);

    RunLog log;
    log.open(fs::path(o.out_file).string() + ".runlog.jsonl");
    log.event({{"event", "config"},
               {"cmd", "compress"},
               {"codebook", o.codebook_file},
               {"model", o.model_file},
               {"out", o.out_file},
               {"alpha", cfg.alpha},
               {"candidates", cfg.candidates},
               {"epochs", cfg.max_epochs},
               {"batch", cfg.batch},
               {"lr_ratios", cfg.lr_ratios},
               {"lr_params", cfg.lr_params},
               {"schedule", o.schedule},
               {"pnc", cfg.pnc_enabled},
               {"harden_leftovers", cfg.harden_leftovers},
               {"loss_weights",
                {{"task", cfg.weights.task}, {"kd", cfg.weights.kd}, {"reg", cfg.weights.reg}}},
               {"selection", o.selection},
               {"ratio_init", o.ratio_init},
               {"head_per_layer", cfg.head_per_layer},
               {"seed", seed},
               {"data_seed", data_seed}});

    const CompressionOutcome outcome = compress(net_fp, cbf.codebook, ds, cfg);
    const CompressedModel model =
        build_compressed_model(outcome.net_hard, outcome.assignments);
    save_model(o.out_file, model);

    const fs::path trace_path = o.trace_file.empty()
                                    ? fs::path(o.out_file + ".trace.jsonl")
                                    : fs::path(o.trace_file);
    write_trace(trace_path, outcome.trace);

    for (const PncStepRecord& s : outcome.trace.steps) {
        log.event({{"event", "step"},
                   {"step", s.step},
                   {"loss", loss_json(s.loss)},
                   {"frozen_total", s.frozen_total}});
    }

    const double float_metric = evaluate(net_fp, ds.test);
    json result = {{"event", "result"},
                   {"net", net_fp.name},
                   {"metric_kind", metric_label(net_fp)},
                   {"float_metric", float_metric},
                   {"hard_metric", outcome.trace.final_hard_metric},
                   {"weight_mse", outcome.trace.final_weight_mse},
                   {"converged", outcome.trace.converged},
                   {"steps_run", outcome.trace.steps_run},
                   {"epochs_run", outcome.trace.epochs_run},
                   {"leftover_hardened", outcome.trace.leftover_hardened},
                   {"total_subvectors", outcome.trace.total_subvectors},
                   {"rank_histogram", outcome.trace.rank_histogram},
                   {"out", o.out_file}};
    log.event(result);

    std::printf("%s: float %s %.4f -> hard %.4f | weight mse %.3e | %zu/%zu frozen "
                "in %zu steps%s | %s\n",
                net_fp.name.c_str(), metric_label(net_fp), float_metric,
                outcome.trace.final_hard_metric, outcome.trace.final_weight_mse,
                outcome.trace.total_subvectors - outcome.trace.leftover_hardened,
                outcome.trace.total_subvectors, outcome.trace.steps_run,
                outcome.trace.converged ? "" : " (leftovers hardened)",
                o.out_file.c_str());
    return kExitOk;
}

// --- eval ----------------------------------------------------------------------

struct EvalOpts {
    std::string model_file;
    std::uint64_t data_seed = 42;
    std::string split = "test";
    std::string log_file;
};

int cmd_eval(const EvalOpts& o, const CLI::App* cmd) {
    (void)cmd;
    const auto bytes = read_file(o.model_file);
    if (bytes.size() < 4) throw DataError("file too short: " + o.model_file);

    TinyNet net;
    std::string kind;
    if (std::memcmp(bytes.data(), "UVQW", 4) == 0) {
        net = decode_bundle(bytes);
        kind = "float";
    } else if (std::memcmp(bytes.data(), "UVQC", 4) == 0) {
        net = reconstruct_net(decode_model(bytes));
        kind = "compressed";
    } else {
        throw DataError("unrecognized file format: " + o.model_file);
    }

    const Dataset ds = dataset_for(net.name, o.data_seed);
    const Split* split = &ds.test;
    if (o.split == "train") {
        split = &ds.train;
    } else if (o.split == "calib") {
        split = &ds.calib;
    } else if (o.split != "test") {
        throw UsageError("unknown split '" + o.split + "'");
    }

    const double metric = evaluate(net, *split);
    json j = {{"net", net.name},
              {"kind", kind},
              {"split", o.split},
              {"metric_kind", metric_label(net)},
              {"metric", metric}};
    std::printf("%s\n", j.dump().c_str());
    if (!o.log_file.empty()) {
        RunLog log;
        log.open(o.log_file);
        log.event({{"event", "config"},
                   {"cmd", "eval"},
                   {"model", o.model_file},
                   {"data_seed", o.data_seed},
                   {"split", o.split}});
        log.event({{"event", "result"}, {"record", j}});
    }
    return kExitOk;
}

// --- baseline -------------------------------------------------------------------

struct BaselineOpts {
    std::string zoo_dir;
    std::string type = "all";  // all | uq | pvq | uvq
    std::size_t bits = 2;
    std::size_t k = 256;
    std::size_t d = 4;
    std::string codebook_file;
    double bandwidth = 0.01;
    std::size_t quota = 0;
    std::size_t iters = 30;
    std::uint64_t seed = 42;
    std::string log_file;
};

struct BaselineRow {
    std::string type;
    std::size_t codebook_bytes = 0;
    double mse = 0.0;
    double rate = 0.0;
    std::size_t io = 0;
};

double uq_suite_mse(const std::vector<TinyNet>& nets, std::size_t bits) {
    double sq = 0.0;
    std::size_t count = 0;
    for (const TinyNet& net : nets) {
        for (std::size_t li : net.compressible_layers()) {
            const Tensor w = canonical_weight(net.layers[li]);
            const UniformQuantized q = uniform_quantize(w, bits);
            sq += sum_sq_diff(w, q.w_hat);
            count += w.numel();
        }
    }
    return sq / static_cast<double>(count);
}

double uvq_suite_mse(const std::vector<TinyNet>& nets, const Codebook& cb) {
    double sq = 0.0;
    std::size_t count = 0;
    for (const TinyNet& net : nets) {
        for (std::size_t li : net.compressible_layers()) {
            const Tensor w = canonical_weight(net.layers[li]);
            const SubVectorGrid grid = decompose(w, cb.d);
            for (std::size_t sv = 0; sv < grid.count(); ++sv) {
                const auto nearest = find_candidates(grid.vec(sv), cb, 1);
                const std::span<const double> c = cb.word(nearest[0]);
                const std::span<const double> v = grid.vec(sv);
                for (std::size_t j = 0; j < grid.valid_len(sv); ++j) {
                    const double diff = v[j] - c[j];
                    sq += diff * diff;
                }
            }
            count += w.numel();
        }
    }
    return sq / static_cast<double>(count);
}

struct PvqResult {
    double mse = 0.0;
    std::size_t codebook_bytes = 0;
    std::size_t layer_count = 0;
};

PvqResult pvq_suite_mse(const std::vector<TinyNet>& nets, std::size_t k,
                        std::size_t d, std::size_t iters, std::uint64_t seed) {
    PvqResult res;
    double sq = 0.0;
    std::size_t count = 0;
    for (const TinyNet& net : nets) {
        for (std::size_t li : net.compressible_layers()) {
            const Tensor w = canonical_weight(net.layers[li]);
            const SubVectorGrid grid = decompose(w, d);
            SubVectorPool pool;
            pool.d = d;
            pool.vectors = grid.data;
            pool.provenance.assign(grid.count(), 0);
            pool.sources = {net.name};
            const std::size_t kk = std::min(k, pool.count());
            const KmeansResult km = kmeans_codebook(
                pool, kk, iters, seed_stream(seed, net.name + std::to_string(li)), 4);
            for (std::size_t sv = 0; sv < grid.count(); ++sv) {
                const auto nearest = find_candidates(grid.vec(sv), km.codebook, 1);
                const std::span<const double> c = km.codebook.word(nearest[0]);
                const std::span<const double> v = grid.vec(sv);
                for (std::size_t j = 0; j < grid.valid_len(sv); ++j) {
                    const double diff = v[j] - c[j];
                    sq += diff * diff;
                }
            }
            count += w.numel();
            res.codebook_bytes += kk * d * 4;
            ++res.layer_count;
        }
    }
    res.mse = sq / static_cast<double>(count);
    return res;
}

int cmd_baseline(const BaselineOpts& o, const CLI::App* cmd) {
    const std::uint64_t seed = resolve_seed(cmd, o.seed);
    const std::vector<TinyNet> nets = load_zoo(o.zoo_dir, zoo_names());

    std::vector<BaselineRow> rows;
    if (o.type == "all" || o.type == "uq") {
        BaselineRow r;
        r.type = "UQ";
        r.mse = uq_suite_mse(nets, o.bits);
        r.rate = 32.0 / static_cast<double>(o.bits);
        r.io = 0;
        rows.push_back(r);
    }
    if (o.type == "all" || o.type == "pvq") {
        const PvqResult pv = pvq_suite_mse(nets, o.k, o.d, o.iters, seed);
        BaselineRow r;
        r.type = "P-VQ";
        r.mse = pv.mse;
        r.codebook_bytes = pv.codebook_bytes;
        r.rate = weights_only_rate(o.k, o.d);
        r.io = pv.layer_count;
        rows.push_back(r);
    }
    if (o.type == "all" || o.type == "uvq") {
        Codebook cb;
        if (!o.codebook_file.empty()) {
            cb = load_codebook(o.codebook_file).codebook;
        } else {
            cb = fit_universal(nets, o.k, o.d, o.bandwidth, o.quota, seed)
                     .file.codebook;
        }
        BaselineRow r;
        r.type = "U-VQ";
        r.mse = uvq_suite_mse(nets, cb);
        r.codebook_bytes = cb.k * cb.d * 4;
        r.rate = weights_only_rate(cb.k, cb.d);
        r.io = 1;
        rows.push_back(r);
    }

    std::printf("%-6s %-10s %-12s %-8s %-6s\n", "Type", "C(bytes)", "MSE", "Rate", "I/O");
    json jrows = json::array();
    for (const BaselineRow& r : rows) {
        std::printf("%-6s %-10zu %-12.4e %-8.2f %-6zu\n", r.type.c_str(),
                    r.codebook_bytes, r.mse, r.rate, r.io);
        jrows.push_back({{"type", r.type},
                         {"codebook_bytes", r.codebook_bytes},
                         {"mse", r.mse},
                         {"rate", r.rate},
                         {"io", r.io}});
    }
    std::printf("%s\n", json({{"baseline", jrows}}).dump().c_str());
    if (!o.log_file.empty()) {
        RunLog log;
        log.open(o.log_file);
        log.event({{"event", "config"},
                   {"cmd", "baseline"},
                   {"zoo", o.zoo_dir},
                   {"type", o.type},
                   {"bits", o.bits},
                   {"k", o.k},
                   {"d", o.d},
                   {"seed", seed}});
        log.event({{"event", "result"}, {"baseline", jrows}});
    }
    return kExitOk;
}

// --- report ----------------------------------------------------------------------

struct ReportOpts {
    std::vector<std::string> model_files;
    std::vector<std::string> bundle_files;
    std::string sharing = "universal";
    std::size_t resident_layers = 0;  // 0: compressed layer count of the suite
    std::size_t networks = 0;         // 0: number of models given
    std::string format = "table";
    std::string log_file;
};

int cmd_report(const ReportOpts& o, const CLI::App* cmd) {
    (void)cmd;
    if (o.model_files.size() != o.bundle_files.size()) {
        throw UsageError("need one --bundle per --model");
    }
    CodebookSharing sharing;
    if (o.sharing == "universal") {
        sharing = CodebookSharing::universal;
    } else if (o.sharing == "per-layer") {
        sharing = CodebookSharing::per_layer;
    } else {
        throw UsageError("unknown sharing '" + o.sharing + "'");
    }

    std::vector<CompressedModel> models;
    std::vector<TinyNet> originals;
    std::size_t suite_layers = 0;
    for (std::size_t i = 0; i < o.model_files.size(); ++i) {
        models.push_back(load_model(o.model_files[i]));
        originals.push_back(load_bundle(o.bundle_files[i]));
        suite_layers += models.back().layers.size();
    }
    const std::size_t resident =
        o.resident_layers ? o.resident_layers : suite_layers;
    const std::size_t networks = o.networks ? o.networks : models.size();

    std::vector<CompressionReport> reports;
    for (std::size_t i = 0; i < models.size(); ++i) {
        reports.push_back(
            account(models[i], originals[i], sharing, resident, networks));
    }

    // Aggregate over the suite: weight-count-weighted MSE, summed sizes, and
    // one universal codebook counted once.
    CompressionReport agg;
    agg.net_name = "all";
    double sq = 0.0;
    std::size_t stream_bits = 0, universal_bytes = 0, head_bytes = 0;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const CompressionReport& r = reports[i];
        sq += r.weight_mse * static_cast<double>(r.compressed_weights);
        agg.compressed_weights += r.compressed_weights;
        agg.original_bytes += r.original_bytes;
        agg.stream_bytes += r.stream_bytes;
        agg.residual_bytes += r.residual_bytes;
        stream_bits += r.stream_bytes * 8;
        std::size_t model_universal = 0;
        if (models[i].universal) {
            model_universal = models[i].universal->k * models[i].universal->d * 4;
        }
        universal_bytes = std::max(universal_bytes, model_universal);
        head_bytes += r.codebook_bytes - model_universal;
    }
    agg.weight_mse =
        agg.compressed_weights ? sq / static_cast<double>(agg.compressed_weights) : 0.0;
    agg.bits_per_weight =
        agg.compressed_weights
            ? static_cast<double>(stream_bits) / static_cast<double>(agg.compressed_weights)
            : 0.0;
    agg.rate_weights_only = agg.bits_per_weight > 0 ? 32.0 / agg.bits_per_weight : 0.0;
    agg.rate_weights_only_rounded = std::lround(agg.rate_weights_only);
    // The shared universal codebook is stored once for the whole suite.
    agg.codebook_bytes = universal_bytes + head_bytes;
    agg.compressed_bytes = agg.stream_bytes + agg.residual_bytes + agg.codebook_bytes;
    agg.ratio_total = static_cast<double>(agg.original_bytes) /
                      static_cast<double>(agg.compressed_bytes);
    agg.ratio_total_amortized = agg.ratio_total;
    agg.io_loads = sharing == CodebookSharing::universal ? 1 : resident;

    const bool aggregate = reports.size() > 1;
    if (o.format == "json") {
        json out = json::array();
        for (const CompressionReport& r : reports) out.push_back(report_json(r));
        json j = {{"networks", out}};
        if (aggregate) j["aggregate"] = report_json(agg);
        std::printf("%s\n", j.dump(2).c_str());
    } else if (o.format == "csv") {
        std::printf("net,weight_mse,bits_per_weight,rate_weights_only,"
                    "rate_rounded,ratio_total,ratio_total_amortized,codebook_bytes,"
                    "io_loads\n");
        const auto row = [](const CompressionReport& r) {
            std::printf("%s,%.6e,%.4f,%.2f,%ld,%.2f,%.2f,%zu,%zu\n",
                        r.net_name.c_str(), r.weight_mse, r.bits_per_weight,
                        r.rate_weights_only, r.rate_weights_only_rounded,
                        r.ratio_total, r.ratio_total_amortized, r.codebook_bytes,
                        r.io_loads);
        };
        for (const CompressionReport& r : reports) row(r);
        if (aggregate) row(agg);
    } else if (o.format == "table") {
        std::printf("%-8s %-13s %-8s %-18s %-10s %-10s %-10s %s\n", "net", "MSE",
                    "bits/w", "rate(weights)", "ratio", "amortized", "codebook",
                    "I/O");
        const auto row = [](const CompressionReport& r) {
            std::printf("%-8s %-13.4e %-8.4f %6.2fx (%ldx)%6s %-10.2f %-10.2f %-10zu %zu\n",
                        r.net_name.c_str(), r.weight_mse, r.bits_per_weight,
                        r.rate_weights_only, r.rate_weights_only_rounded, "",
                        r.ratio_total, r.ratio_total_amortized, r.codebook_bytes,
                        r.io_loads);
        };
        for (const CompressionReport& r : reports) row(r);
        if (aggregate) row(agg);
    } else {
        throw UsageError("unknown format '" + o.format + "'");
    }
    if (!o.log_file.empty()) {
        RunLog log;
        log.open(o.log_file);
        log.event({{"event", "config"},
                   {"cmd", "report"},
                   {"models", o.model_files},
                   {"bundles", o.bundle_files},
                   {"sharing", o.sharing},
                   {"resident_layers", resident},
                   {"networks", networks}});
        json out = json::array();
        for (const CompressionReport& r : reports) out.push_back(report_json(r));
        json result = {{"event", "result"}, {"networks", out}};
        if (aggregate) result["aggregate"] = report_json(agg);
        log.event(result);
    }
    return kExitOk;
}

// --- ablate -----------------------------------------------------------------------

struct AblateOpts {
    std::string preset;
    std::string zoo_dir;
    std::string out_dir;
    std::string net = "mlp2";
    std::uint64_t seed = 42;
    std::size_t k = 256;
    std::size_t d = 4;
    double bandwidth = 0.01;
    std::size_t quota = 0;
    std::size_t candidates = 8;
    std::size_t epochs = 150;
    double alpha = 0.9999;
    std::size_t batch = 32;
};

struct AblateArm {
    std::string name;
    PncConfig cfg;
    const Codebook* codebook = nullptr;
};

json run_arms(const std::vector<AblateArm>& arms, const TinyNet& net_fp,
              const Dataset& ds) {
    const double float_metric = evaluate(net_fp, ds.test);
    std::printf("%-24s %-10s %-8s %-9s %-9s\n", "arm", "metric", "steps",
                "converged", "leftover");
    std::printf("%-24s %-10.4f %-8s %-9s %-9s\n", "float", float_metric, "-", "-", "-");
    json out = json::array();
    for (const AblateArm& arm : arms) {
        const CompressionOutcome res = compress(net_fp, *arm.codebook, ds, arm.cfg);
        std::printf("%-24s %-10.4f %-8zu %-9s %-9zu\n", arm.name.c_str(),
                    res.trace.final_hard_metric, res.trace.steps_run,
                    res.trace.converged ? "yes" : "no", res.trace.leftover_hardened);
        out.push_back({{"arm", arm.name},
                       {"hard_metric", res.trace.final_hard_metric},
                       {"weight_mse", res.trace.final_weight_mse},
                       {"steps_run", res.trace.steps_run},
                       {"converged", res.trace.converged},
                       {"leftover_hardened", res.trace.leftover_hardened},
                       {"rank_histogram", res.trace.rank_histogram}});
    }
    return {{"float_metric", float_metric}, {"arms", out}};
}

int cmd_ablate(const AblateOpts& o, const CLI::App* cmd) {
    const std::uint64_t seed = resolve_seed(cmd, o.seed);
    const std::vector<TinyNet> nets = load_zoo(o.zoo_dir, zoo_names());
    const TinyNet* target = nullptr;
    for (const TinyNet& n : nets) {
        if (n.name == o.net) target = &n;
    }
    if (!target) throw UsageError("net '" + o.net + "' is not in the zoo");
    const Dataset ds = dataset_for(o.net, seed);

    PncConfig base;
    base.alpha = o.alpha;
    base.candidates = o.candidates;
    base.max_epochs = o.epochs;
    base.batch = o.batch;
    base.seed = seed;

    json result;
    std::printf("preset: %s (net %s, shared seed %llu)\n", o.preset.c_str(),
                o.net.c_str(), static_cast<unsigned long long>(seed));

    if (o.preset == "codebook-source-sweep") {
        // Cumulative source subsets, the target net first.
        std::vector<std::string> order = {o.net};
        for (const std::string& n : zoo_names()) {
            if (n != o.net) order.push_back(n);
        }
        std::vector<Codebook> books;
        std::vector<AblateArm> arms;
        for (std::size_t take = 1; take <= order.size(); ++take) {
            std::vector<TinyNet> subset;
            std::string label;
            for (std::size_t i = 0; i < take; ++i) {
                for (const TinyNet& n : nets) {
                    if (n.name == order[i]) subset.push_back(n);
                }
                label += (i ? "+" : "") + order[i];
            }
            books.push_back(
                fit_universal(subset, o.k, o.d, o.bandwidth, o.quota, seed)
                    .file.codebook);
            AblateArm arm{label, base, nullptr};
            arms.push_back(arm);
        }
        for (std::size_t i = 0; i < arms.size(); ++i) arms[i].codebook = &books[i];
        result = run_arms(arms, *target, ds);
    } else {
        const Codebook cb =
            fit_universal(nets, o.k, o.d, o.bandwidth, o.quota, seed).file.codebook;
        std::vector<AblateArm> arms;
        if (o.preset == "n-sweep") {
            for (std::size_t n : {std::size_t{1}, std::size_t{8}, std::size_t{64}}) {
                AblateArm arm{"n=" + std::to_string(n), base, &cb};
                arm.cfg.candidates = n;
                arms.push_back(arm);
            }
        } else if (o.preset == "alpha-sweep") {
            for (double a : {0.9, 0.95, 0.99, 0.999, 0.9999}) {
                AblateArm arm{"alpha=" + std::to_string(a), base, &cb};
                arm.cfg.alpha = a;
                arms.push_back(arm);
            }
        } else if (o.preset == "pnc-onoff") {
            AblateArm on{"pnc", base, &cb};
            AblateArm off{"no-pnc", base, &cb};
            off.cfg.pnc_enabled = false;
            arms.push_back(on);
            arms.push_back(off);
        } else if (o.preset == "loss-knockouts") {
            AblateArm full{"full", base, &cb};
            AblateArm no_t{"no-task", base, &cb};
            no_t.cfg.weights.task = 0.0;
            AblateArm no_kd{"no-kd", base, &cb};
            no_kd.cfg.weights.kd = 0.0;
            AblateArm no_r{"no-reg", base, &cb};
            no_r.cfg.weights.reg = 0.0;
            arms = {full, no_t, no_kd, no_r};
        } else if (o.preset == "init-sweep") {
            AblateArm rand{"random", base, &cb};
            rand.cfg.selection = CandidateSelection::random;
            rand.cfg.init = LogitInit::equal;
            AblateArm cos{"cosine", base, &cb};
            cos.cfg.selection = CandidateSelection::cosine;
            cos.cfg.init = LogitInit::equal;
            AblateArm euc{"euclidean", base, &cb};
            euc.cfg.selection = CandidateSelection::euclid;
            euc.cfg.init = LogitInit::equal;
            AblateArm eui{"euclidean+init", base, &cb};
            eui.cfg.selection = CandidateSelection::euclid;
            eui.cfg.init = LogitInit::inverse_distance;
            arms = {rand, cos, euc, eui};
        } else {
            throw UsageError(
                "unknown preset '" + o.preset +
                "' (n-sweep, alpha-sweep, pnc-onoff, loss-knockouts, "
                "codebook-source-sweep, init-sweep)");
        }
        result = run_arms(arms, *target, ds);
    }

    if (!o.out_dir.empty()) {
        fs::create_directories(o.out_dir);
        const fs::path out =
            fs::path(o.out_dir) / ("ablate_" + o.preset + ".json");
        std::ofstream f(out, std::ios::trunc);
        result["preset"] = o.preset;
        result["net"] = o.net;
        result["seed"] = seed;
        f << result.dump(2) << "\n";
        std::printf("wrote %s\n", out.string().c_str());
    }
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"universal-codebook vector quantization toolkit"};
    app.require_subcommand(1);

    ZooOpts zoo;
    CLI::App* c_zoo = app.add_subcommand("zoo", "train and bundle the float net zoo");
    c_zoo->add_option("--out", zoo.out_dir, "output directory")->required();
    c_zoo->add_option("--seed", zoo.seed, "base seed (env UVQ_SEED as fallback)");
    c_zoo->add_option("--epochs", zoo.epochs, "override per-net default epochs");

    FitOpts fit;
    CLI::App* c_fit =
        app.add_subcommand("fit-codebook", "pool sub-vectors, fit KDE, sample codebook");
    c_fit->add_option("--zoo", fit.zoo_dir, "zoo directory")->required();
    c_fit->add_option("--out", fit.out_file, "output codebook file")->required();
    c_fit->add_option("--nets", fit.nets_csv, "comma-separated source nets (default all)");
    c_fit->add_option("--k", fit.k, "codeword count");
    c_fit->add_option("--d", fit.d, "codeword length");
    c_fit->add_option("--bandwidth", fit.bandwidth, "KDE bandwidth");
    c_fit->add_option("--quota", fit.quota, "sub-vectors per net (0 = auto)");
    c_fit->add_option("--seed", fit.seed, "seed");

    CompressOpts comp;
    CLI::App* c_comp = app.add_subcommand("compress", "construct a low-bit network");
    c_comp->add_option("--codebook", comp.codebook_file, "codebook file")->required();
    c_comp->add_option("--model", comp.model_file, "weight bundle")->required();
    c_comp->add_option("--out", comp.out_file, "output compressed model")->required();
    c_comp->add_option("--trace", comp.trace_file, "trace JSONL path");
    c_comp->add_option("--alpha", comp.alpha, "freeze threshold");
    c_comp->add_option("--candidates", comp.candidates, "candidate assignments n");
    c_comp->add_option("--epochs", comp.epochs, "max epochs");
    c_comp->add_option("--batch", comp.batch, "batch size");
    c_comp->add_option("--lr-ratios", comp.lr_ratios, "Adamax lr for logits");
    c_comp->add_option("--lr-params", comp.lr_params, "Adam lr for other params");
    c_comp->add_option("--schedule", comp.schedule, "param lr schedule: cosine|constant");
    c_comp->add_option("--seed", comp.seed, "seed");
    c_comp->add_option("--data-seed", comp.data_seed, "dataset seed (default: --seed)");
    c_comp->add_flag("--no-pnc", comp.no_pnc, "disable progressive freezing");
    c_comp->add_flag("--no-kd", comp.no_kd, "drop the distillation loss");
    c_comp->add_flag("--no-reg", comp.no_reg, "drop the ratio regularizer");
    c_comp->add_flag("--no-task", comp.no_task, "drop the task loss");
    c_comp->add_flag("--no-harden", comp.no_harden, "keep leftovers soft at budget end");
    c_comp->add_option("--selection", comp.selection, "candidates: euclid|cosine|random");
    c_comp->add_option("--ratio-init", comp.ratio_init, "logit init: inv|equal");
    c_comp->add_flag("--head-universal", comp.head_universal,
                     "quantize the output head against the universal codebook");
    c_comp->add_option("--head-k", comp.head_k, "per-layer head codebook size");
    c_comp->add_option("--head-d", comp.head_d, "per-layer head codeword length");
    c_comp->add_option("--eval-cadence", comp.eval_cadence,
                       "steps between hard-metric probes (0 = off)");

    EvalOpts ev;
    CLI::App* c_eval = app.add_subcommand("eval", "evaluate a bundle or compressed model");
    c_eval->add_option("--model", ev.model_file, "model file")->required();
    c_eval->add_option("--data-seed", ev.data_seed, "dataset seed");
    c_eval->add_option("--split", ev.split, "train|calib|test");
    c_eval->add_option("--log", ev.log_file, "write a JSONL run log");

    BaselineOpts base;
    CLI::App* c_base = app.add_subcommand("baseline", "UQ / P-VQ / U-VQ quantization error");
    c_base->add_option("--zoo", base.zoo_dir, "zoo directory")->required();
    c_base->add_option("--type", base.type, "all|uq|pvq|uvq");
    c_base->add_option("--bits", base.bits, "UQ bit width");
    c_base->add_option("--k", base.k, "codebook size");
    c_base->add_option("--d", base.d, "codeword length");
    c_base->add_option("--codebook", base.codebook_file, "existing U-VQ codebook");
    c_base->add_option("--bandwidth", base.bandwidth, "KDE bandwidth");
    c_base->add_option("--quota", base.quota, "pool quota (0 = auto)");
    c_base->add_option("--iters", base.iters, "k-means iterations");
    c_base->add_option("--seed", base.seed, "seed");
    c_base->add_option("--log", base.log_file, "write a JSONL run log");

    ReportOpts rep;
    CLI::App* c_rep =
        app.add_subcommand("report", "compression accounting, per network and aggregate");
    c_rep->add_option("--model", rep.model_files, "compressed model(s)")->required();
    c_rep->add_option("--bundle", rep.bundle_files, "original bundle(s), one per model")
        ->required();
    c_rep->add_option("--sharing", rep.sharing, "universal|per-layer");
    c_rep->add_option("--resident-layers", rep.resident_layers,
                      "compressed layers across the resident suite");
    c_rep->add_option("--networks", rep.networks, "networks sharing the codebook");
    c_rep->add_option("--format", rep.format, "table|csv|json");
    c_rep->add_option("--log", rep.log_file, "write a JSONL run log");

    AblateOpts abl;
    CLI::App* c_abl = app.add_subcommand("ablate", "run an ablation preset");
    c_abl->add_option("--preset", abl.preset,
                      "n-sweep|alpha-sweep|pnc-onoff|loss-knockouts|"
                      "codebook-source-sweep|init-sweep")
        ->required();
    c_abl->add_option("--zoo", abl.zoo_dir, "zoo directory")->required();
    c_abl->add_option("--out", abl.out_dir, "output directory for tables");
    c_abl->add_option("--net", abl.net, "target net");
    c_abl->add_option("--seed", abl.seed, "shared base seed");
    c_abl->add_option("--k", abl.k, "codebook size");
    c_abl->add_option("--d", abl.d, "codeword length");
    c_abl->add_option("--bandwidth", abl.bandwidth, "KDE bandwidth");
    c_abl->add_option("--quota", abl.quota, "pool quota (0 = auto)");
    c_abl->add_option("--candidates", abl.candidates, "candidate assignments n");
    c_abl->add_option("--epochs", abl.epochs, "max epochs per arm");
    c_abl->add_option("--alpha", abl.alpha, "freeze threshold");
    c_abl->add_option("--batch", abl.batch, "batch size");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (c_zoo->parsed()) return cmd_zoo(zoo, c_zoo);
        if (c_fit->parsed()) return cmd_fit_codebook(fit, c_fit);
        if (c_comp->parsed()) return cmd_compress(comp, c_comp);
        if (c_eval->parsed()) return cmd_eval(ev, c_eval);
        if (c_base->parsed()) return cmd_baseline(base, c_base);
        if (c_rep->parsed()) return cmd_report(rep, c_rep);
        if (c_abl->parsed()) return cmd_ablate(abl, c_abl);
        throw UsageError("no subcommand given");
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitUsage;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return kExitNumeric;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace uvq
