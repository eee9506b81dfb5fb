#include "doctest.h"

#include <cmath>

#include "test_util.hpp"
#include "uvq/pnc.hpp"
#include "uvq/storage.hpp"
#include "uvq/zoo.hpp"

using namespace uvq;
using test::close_rel;
using test::random_tensor;

namespace {

constexpr std::uint64_t kSeedForPnc = 19;

LayerAssignment two_slot(double r_max) {
    LayerAssignment la;
    la.d = 1;
    la.rows = 1;
    la.cols = 1;
    la.src_cols = 1;
    la.valid_tail = 1;
    la.n = 2;
    la.k = 4;
    la.candidates = {0, 1};
    la.logits = {std::log(r_max / (1.0 - r_max)), 0.0};
    la.frozen = {kUnfrozen};
    return la;
}

Codebook random_codebook(Rng& rng, std::size_t k, std::size_t d) {
    Codebook cb;
    cb.k = k;
    cb.d = d;
    Tensor w = random_tensor(rng, {k * d}, 0.5);
    w.snap_to_fp32();
    cb.words = w.data;
    return cb;
}

}  // namespace

TEST_CASE("freeze_pass freezes above alpha and never below") {
    LayerAssignment hot = two_slot(0.99995);
    CHECK(freeze_pass(hot, 0.9999) == 1);
    CHECK(hot.frozen[0] == 0);

    LayerAssignment cold = two_slot(0.999);
    CHECK(freeze_pass(cold, 0.9999) == 0);
    CHECK(cold.frozen[0] == kUnfrozen);
}

TEST_CASE("n=1 sub-vectors freeze on the first pass") {
    LayerAssignment la;
    la.d = 1;
    la.rows = 2;
    la.cols = 1;
    la.src_cols = 1;
    la.valid_tail = 1;
    la.n = 1;
    la.k = 4;
    la.candidates = {3, 2};
    la.logits = {0.0, 0.0};
    la.frozen = {kUnfrozen, kUnfrozen};
    CHECK(freeze_pass(la, 0.9999) == 2);
    CHECK(la.fully_frozen());
}

TEST_CASE("frozen sub-vectors never change slot") {
    LayerAssignment la = two_slot(0.99995);
    freeze_pass(la, 0.9999);
    REQUIRE(la.frozen[0] == 0);
    la.logits = {-50.0, 50.0};  // would now prefer slot 1
    CHECK(freeze_pass(la, 0.9999) == 0);
    CHECK(la.frozen[0] == 0);
    CHECK(ratios(la) == std::vector<double>{1.0, 0.0});
}

TEST_CASE("discrepancy of the worked midpoint example is 2") {
    AssignmentSet set;
    set.universal.k = 2;
    set.universal.d = 2;
    set.universal.words = {0, 0, 2, 2};
    LayerAssignment la;
    la.d = 2;
    la.rows = 1;
    la.cols = 1;
    la.src_cols = 2;
    la.valid_tail = 2;
    la.n = 2;
    la.k = 2;
    la.candidates = {0, 1};
    la.logits = {0.0, 0.0};  // ratios 0.5/0.5; hard ties to slot 0 = (0,0)
    la.frozen = {kUnfrozen};
    set.layers.push_back(la);

    CHECK(discrepancy(set) == doctest::Approx(2.0));

    set.layers[0].frozen[0] = 0;
    CHECK(discrepancy(set) == 0.0);
}

TEST_CASE("freezing only removes discrepancy terms") {
    Rng rng(42);
    AssignmentSet set;
    set.universal = random_codebook(rng, 32, 2);
    Tensor w = random_tensor(rng, {6, 8}, 0.5);
    set.layers.push_back(build_assignment(0, w, set.universal, 4));
    for (double& z : set.layers[0].logits) z += rng.normal(0.0, 0.5);

    double prev = discrepancy(set);
    for (double alpha : {0.9, 0.7, 0.51}) {
        freeze_pass(set, alpha);
        const double cur = discrepancy(set);
        CHECK(cur <= prev + 1e-12);
        prev = cur;
    }
}

TEST_CASE("lower alpha freezes a superset on identical state") {
    Rng rng(43);
    Codebook cb = random_codebook(rng, 32, 2);
    Tensor w = random_tensor(rng, {6, 8}, 0.5);
    LayerAssignment base = build_assignment(0, w, cb, 4);
    for (double& z : base.logits) z += rng.normal(0.0, 2.0);

    LayerAssignment hi = base, lo = base;
    freeze_pass(hi, 0.9999);
    freeze_pass(lo, 0.51);
    for (std::size_t sv = 0; sv < base.count(); ++sv) {
        if (hi.frozen[sv] != kUnfrozen) {
            CHECK(lo.frozen[sv] == hi.frozen[sv]);
        }
    }
    CHECK(lo.num_frozen() >= hi.num_frozen());
}

TEST_CASE("assignment histogram is a distribution with n=1 at rank zero") {
    Rng rng(44);
    AssignmentSet set;
    set.universal = random_codebook(rng, 16, 2);
    Tensor w = random_tensor(rng, {4, 8}, 0.5);
    set.layers.push_back(build_assignment(0, w, set.universal, 1));
    const std::vector<double> hist = assignment_histogram(set);
    REQUIRE(hist.size() == 1);
    CHECK(hist[0] == doctest::Approx(1.0));

    AssignmentSet set4;
    set4.universal = set.universal;
    set4.layers.push_back(build_assignment(0, w, set4.universal, 4));
    for (double& z : set4.layers[0].logits) z += rng.normal();
    const std::vector<double> h4 = assignment_histogram(set4);
    double sum = 0.0;
    for (double v : h4) sum += v;
    CHECK(std::fabs(sum - 1.0) <= 1e-12);
}

namespace {

// Dataset whose calibration targets are the float net's own outputs, so an
// exactly representable net has zero task loss.
Dataset self_consistent_dataset(const TinyNet& net, Rng& rng, std::size_t n) {
    Dataset ds;
    ds.name = "self";
    std::vector<std::size_t> xshape = {n};
    for (std::size_t e : net.input_shape) xshape.push_back(e);
    ds.calib.inputs = random_tensor(rng, xshape);
    ds.calib.targets = forward(net, ds.calib.inputs).output;
    ds.test = ds.calib;
    ds.train = ds.calib;
    return ds;
}

}  // namespace

TEST_CASE("a net whose weights are codewords is a fixed point of compress") {
    Rng rng(45);
    Codebook cb = random_codebook(rng, 16, 2);

    TinyNet net;
    net.name = "fixed";
    net.task = TaskKind::regression;
    net.input_shape = {4};
    LayerSpec d0;
    d0.kind = LayerKind::dense;
    d0.compressible = true;
    d0.output_head = true;
    d0.weight = Tensor({3, 4});
    for (std::size_t sv = 0; sv < 6; ++sv) {
        const std::size_t pick = rng.uniform_int(16);
        d0.weight.data[sv * 2] = cb.word(pick)[0];
        d0.weight.data[sv * 2 + 1] = cb.word(pick)[1];
    }
    d0.bias = Tensor::zeros({3});
    net.layers = {d0};
    net.blocks = {{"all", 0, 0}};

    const Dataset ds = self_consistent_dataset(net, rng, 16);

    PncConfig cfg;
    cfg.candidates = 4;
    cfg.max_epochs = 5;
    cfg.batch = 8;
    cfg.head_per_layer = false;  // quantize the head against the universal book
    cfg.seed = 7;
    const CompressionOutcome out = compress(net, cb, ds, cfg);

    CHECK(out.trace.converged);
    CHECK(out.trace.leftover_hardened == 0);
    CHECK(discrepancy(out.assignments) == 0.0);
    CHECK(out.trace.final_weight_mse == 0.0);
    CHECK(out.trace.steps.front().loss.task == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(out.trace.steps.front().loss.kd == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("compress terminates fully hard and freezes monotonically") {
    Rng rng(46);
    const TinyNet net = make_mlp2(3);
    const Dataset ds = make_two_cluster_2d(3);
    Codebook cb = random_codebook(rng, 64, 4);

    PncConfig cfg;
    cfg.candidates = 4;
    cfg.max_epochs = 3;
    cfg.batch = 64;
    cfg.seed = 9;
    const CompressionOutcome out = compress(net, cb, ds, cfg);

    CHECK(out.assignments.fully_frozen());
    std::size_t prev = 0;
    for (const PncStepRecord& s : out.trace.steps) {
        CHECK(s.frozen_total >= prev);
        prev = s.frozen_total;
    }
    // Histogram freqs sum to one.
    double sum = 0.0;
    for (double v : out.trace.rank_histogram) sum += v;
    CHECK(std::fabs(sum - 1.0) <= 1e-12);
}

TEST_CASE("n=1 compression equals nearest-codeword quantization bit-exactly") {
    Rng rng(47);
    const TinyNet net = make_mlp2(5);
    const Dataset ds = make_two_cluster_2d(5);
    Codebook cb = random_codebook(rng, 64, 4);

    PncConfig cfg;
    cfg.candidates = 1;
    cfg.max_epochs = 2;
    cfg.head_per_layer = false;
    cfg.seed = 11;
    const CompressionOutcome out = compress(net, cb, ds, cfg);
    CHECK(out.trace.converged);

    for (std::size_t li : net.compressible_layers()) {
        const Tensor w = canonical_weight(net.layers[li]);
        const SubVectorGrid grid = decompose(w, cb.d);
        Tensor expect({grid.rows, grid.src_cols});
        for (std::size_t sv = 0; sv < grid.count(); ++sv) {
            const auto nearest = find_candidates(grid.vec(sv), cb, 1);
            for (std::size_t j = 0; j < grid.valid_len(sv); ++j) {
                expect.at(sv / grid.cols, (sv % grid.cols) * grid.d + j) =
                    cb.word(nearest[0])[j];
            }
        }
        CHECK(canonical_weight(out.net_hard.layers[li]).data == expect.data);
    }
}

TEST_CASE("compress rejects invalid configs and empty calibration data") {
    const TinyNet net = make_mlp2(3);
    Rng rng(48);
    Codebook cb = random_codebook(rng, 16, 4);
    Dataset empty;
    PncConfig cfg;
    CHECK_THROWS_AS(compress(net, cb, empty, cfg), DataError);

    PncConfig bad;
    bad.alpha = 1.5;
    CHECK_THROWS_AS(compress(net, cb, make_two_cluster_2d(1), bad), UsageError);
}

TEST_CASE("the nearest-candidate rank is the histogram mode on real runs") {
    Rng rng(51);
    const TinyNet net = make_mlp2(kSeedForPnc);
    const Dataset ds = make_two_cluster_2d(kSeedForPnc);
    Codebook cb = random_codebook(rng, 256, 4);

    PncConfig cfg;
    cfg.candidates = 8;
    cfg.max_epochs = 60;
    cfg.seed = 23;
    const CompressionOutcome out = compress(net, cb, ds, cfg);
    const std::vector<double>& hist = out.trace.rank_histogram;
    REQUIRE(!hist.empty());
    for (std::size_t m = 1; m < hist.size(); ++m) {
        CHECK(hist[0] >= hist[m]);
    }
}

TEST_CASE("progressive freezing never ends below forced hardening") {
    Rng rng(50);
    const TinyNet net = make_mlp2(kSeedForPnc);
    const Dataset ds = make_two_cluster_2d(kSeedForPnc);
    Codebook cb = random_codebook(rng, 256, 4);

    PncConfig cfg;
    cfg.candidates = 8;
    cfg.max_epochs = 60;
    cfg.seed = 21;
    const CompressionOutcome pnc = compress(net, cb, ds, cfg);
    PncConfig forced = cfg;
    forced.pnc_enabled = false;
    const CompressionOutcome off = compress(net, cb, ds, forced);
    CHECK(pnc.trace.final_hard_metric >= off.trace.final_hard_metric);
}

TEST_CASE("fully frozen nets round-trip bit-identically through decode_and_run") {
    Rng rng(49);
    const TinyNet net = make_mlp2(7);
    const Dataset ds = make_two_cluster_2d(7);
    Codebook cb = random_codebook(rng, 64, 4);

    PncConfig cfg;
    cfg.candidates = 4;
    cfg.max_epochs = 2;
    cfg.seed = 13;
    const CompressionOutcome out = compress(net, cb, ds, cfg);
    const CompressedModel model =
        build_compressed_model(out.net_hard, out.assignments);

    const Tensor direct = forward(out.net_hard, ds.test.inputs).output;
    const Tensor decoded = decode_and_run(model, ds.test.inputs);
    CHECK(direct.data == decoded.data);

    const auto bytes = encode_model(model);
    const Tensor from_bytes = decode_and_run(decode_model(bytes), ds.test.inputs);
    CHECK(direct.data == from_bytes.data);
}
