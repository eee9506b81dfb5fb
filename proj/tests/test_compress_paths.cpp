#include "doctest.h"

#include <cmath>

#include "test_util.hpp"
#include "uvq/pnc.hpp"
#include "uvq/storage.hpp"
#include "uvq/zoo.hpp"

using namespace uvq;
using test::random_tensor;

namespace {

Codebook snapped_codebook(Rng& rng, std::size_t k, std::size_t d) {
    Codebook cb;
    cb.k = k;
    cb.d = d;
    Tensor w = random_tensor(rng, {k * d}, 0.4);
    w.snap_to_fp32();
    cb.words = w.data;
    return cb;
}

// Net whose compressible layer width is not divisible by the codeword length,
// so the final sub-vector column is zero-padded.
TinyNet padded_net(Rng& rng) {
    TinyNet net;
    net.name = "padded";
    net.task = TaskKind::regression;
    net.input_shape = {5};
    LayerSpec d0;
    d0.kind = LayerKind::dense;
    d0.weight = random_tensor(rng, {6, 5}, 0.5);
    d0.bias = random_tensor(rng, {6}, 0.2);
    LayerSpec relu;
    relu.kind = LayerKind::relu;
    LayerSpec d1;
    d1.kind = LayerKind::dense;
    d1.compressible = true;
    d1.output_head = true;
    d1.weight = random_tensor(rng, {3, 6}, 0.5);  // 6 columns, d = 4: pad 2
    d1.bias = random_tensor(rng, {3}, 0.2);
    net.layers = {d0, relu, d1};
    net.blocks = {{"b0", 0, 1}, {"head", 2, 2}};
    for (LayerSpec& l : net.layers) {
        l.weight.snap_to_fp32();
        l.bias.snap_to_fp32();
    }
    return net;
}

Dataset tiny_regression(const TinyNet& net, Rng& rng) {
    Dataset ds;
    ds.name = "tiny";
    Tensor x = random_tensor(rng, {24, net.input_shape[0]});
    ds.calib = {x, forward(net, x).output};
    ds.train = ds.calib;
    Tensor xt = random_tensor(rng, {24, net.input_shape[0]});
    ds.test = {xt, forward(net, xt).output};
    return ds;
}

}  // namespace

TEST_CASE("padded layers compress and round-trip bit-identically") {
    Rng rng(61);
    const TinyNet net = padded_net(rng);
    const Dataset ds = tiny_regression(net, rng);
    const Codebook cb = snapped_codebook(rng, 32, 4);

    PncConfig cfg;
    cfg.candidates = 4;
    cfg.max_epochs = 3;
    cfg.batch = 8;
    cfg.head_per_layer = false;
    cfg.seed = 3;
    const CompressionOutcome out = compress(net, cb, ds, cfg);

    // Pad positions never leak into the reconstructed matrix.
    const LayerAssignment& la = out.assignments.layers[0];
    CHECK(la.valid_tail == 2);
    CHECK(la.cols == 2);
    const Tensor hard = canonical_weight(out.net_hard.layers[2]);
    CHECK(hard.shape == std::vector<std::size_t>{3, 6});

    const CompressedModel model = build_compressed_model(out.net_hard, out.assignments);
    const auto bytes = encode_model(model);
    const Tensor direct = forward(out.net_hard, ds.test.inputs).output;
    CHECK(decode_and_run(decode_model(bytes), ds.test.inputs).data == direct.data);

    // Accounting still reports over the real (unpadded) weight count.
    const CompressionReport rep =
        account(model, net, CodebookSharing::universal, 1, 1);
    CHECK(rep.compressed_weights == 18);
    // 6 sub-vectors at 5 bits each over 18 real weights.
    CHECK(rep.bits_per_weight == doctest::Approx(6.0 * 5.0 / 18.0));
}

TEST_CASE("conv nets with batchnorm flow through compression and storage") {
    Rng rng(62);
    const TinyNet net = make_cnn(31);
    const Dataset ds = make_patterns_8x8(31);
    const Codebook cb = snapped_codebook(rng, 64, 4);

    PncConfig cfg;
    cfg.candidates = 4;
    cfg.max_epochs = 2;
    cfg.seed = 5;
    cfg.eval_cadence = 4;
    const CompressionOutcome out = compress(net, cb, ds, cfg);
    CHECK(out.assignments.fully_frozen());

    // Probes ran at the requested cadence.
    bool probed = false;
    for (const PncStepRecord& s : out.trace.steps) {
        if (s.step % 4 == 0) {
            CHECK(!std::isnan(s.hard_metric));
            probed = true;
        } else {
            CHECK(std::isnan(s.hard_metric));
        }
    }
    CHECK(probed);

    const CompressedModel model = build_compressed_model(out.net_hard, out.assignments);
    const auto bytes = encode_model(model);
    const Tensor direct = forward(out.net_hard, ds.test.inputs).output;
    CHECK(decode_and_run(decode_model(bytes), ds.test.inputs).data == direct.data);

    // Conv weights reconstruct through the canonical [oc, ic*9] view.
    for (const CompressedLayerRecord& rec : model.layers) {
        const LayerSpec& l = model.skeleton[rec.layer_index];
        if (l.kind == LayerKind::conv3x3) {
            CHECK(rec.src_cols == l.weight.shape[1] * 9);
        }
    }
}

TEST_CASE("head codebooks may use a different codeword length") {
    Rng rng(63);
    const TinyNet net = make_mlp3(33);
    const Dataset ds = make_cluster_16d(33);
    const Codebook cb = snapped_codebook(rng, 64, 8);  // universal d = 8

    PncConfig cfg;
    cfg.candidates = 4;
    cfg.max_epochs = 2;
    cfg.head_k = 16;
    cfg.head_d = 4;  // head book d = 4
    cfg.seed = 7;
    const CompressionOutcome out = compress(net, cb, ds, cfg);

    REQUIRE(out.assignments.per_layer.size() == 1);
    CHECK(out.assignments.per_layer[0].d == 4);
    bool saw_head = false;
    for (const LayerAssignment& la : out.assignments.layers) {
        if (la.codebook_ref == CodebookRefKind::per_layer) {
            saw_head = true;
            CHECK(la.d == 4);
        } else {
            CHECK(la.d == 8);
        }
    }
    CHECK(saw_head);

    const CompressedModel model = build_compressed_model(out.net_hard, out.assignments);
    const auto bytes = encode_model(model);
    const Tensor direct = forward(out.net_hard, ds.test.inputs).output;
    CHECK(decode_and_run(decode_model(bytes), ds.test.inputs).data == direct.data);
}

TEST_CASE("candidate count clamps to small head codebooks") {
    Rng rng(64);
    const TinyNet net = make_mlp2(35);
    const Dataset ds = make_two_cluster_2d(35);
    const Codebook cb = snapped_codebook(rng, 256, 4);

    PncConfig cfg;
    cfg.candidates = 64;
    cfg.max_epochs = 1;
    cfg.head_k = 8;  // head has fewer codewords than requested candidates
    cfg.seed = 9;
    const CompressionOutcome out = compress(net, cb, ds, cfg);
    for (const LayerAssignment& la : out.assignments.layers) {
        if (la.codebook_ref == CodebookRefKind::per_layer) {
            CHECK(la.n <= 8);
            CHECK(la.k <= 8);
        } else {
            CHECK(la.n == 64);
        }
    }
}
