#include "doctest.h"

#include <cstdio>
#include <filesystem>

#include "test_util.hpp"
#include "uvq/pnc.hpp"
#include "uvq/storage.hpp"
#include "uvq/zoo.hpp"

using namespace uvq;
using test::random_tensor;

namespace {

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "uvq_storage_test";
    std::filesystem::create_directories(dir);
    return dir;
}

// Bit-at-a-time reference writer for the packing oracle.
std::vector<std::uint8_t> naive_pack(const std::vector<std::uint32_t>& idx,
                                     std::size_t bits) {
    std::vector<bool> bitstream;
    for (std::uint32_t v : idx) {
        for (std::size_t b = 0; b < bits; ++b) bitstream.push_back((v >> b) & 1u);
    }
    std::vector<std::uint8_t> bytes((bitstream.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < bitstream.size(); ++i) {
        if (bitstream[i]) bytes[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    }
    return bytes;
}

}  // namespace

TEST_CASE("bits_per_index is ceil(log2 k)") {
    CHECK(bits_per_index(1) == 0);
    CHECK(bits_per_index(2) == 1);
    CHECK(bits_per_index(3) == 2);
    CHECK(bits_per_index(16) == 4);
    CHECK(bits_per_index(17) == 5);
    CHECK(bits_per_index(1u << 16) == 16);
    CHECK_THROWS_AS(bits_per_index(0), UsageError);
}

TEST_CASE("packing matches the worked example and the naive oracle") {
    const std::vector<std::uint32_t> idx = {1, 2, 3};
    const auto bytes = pack_assignments(idx, 16);
    CHECK(bytes == std::vector<std::uint8_t>{0x21, 0x03});
    CHECK(bytes == naive_pack(idx, 4));

    CHECK(pack_assignments({}, 16).empty());
    CHECK_THROWS_AS(pack_assignments(std::vector<std::uint32_t>{16}, 16), DataError);
}

TEST_CASE("pack/unpack round-trips random streams across bit widths") {
    Rng rng(31);
    for (std::size_t bits = 1; bits <= 16; ++bits) {
        const std::size_t k = std::size_t{1} << bits;
        std::vector<std::uint32_t> idx(97);
        for (auto& v : idx) v = static_cast<std::uint32_t>(rng.uniform_int(k));
        const auto bytes = pack_assignments(idx, k);
        CHECK(bytes == naive_pack(idx, bits));
        CHECK(unpack_assignments(bytes, idx.size(), k) == idx);
    }
    // Non-power-of-two k packs at ceil(log2 k) bits.
    std::vector<std::uint32_t> idx = {0, 4, 9};
    const auto bytes = pack_assignments(idx, 10);
    CHECK(bytes == naive_pack(idx, 4));
    CHECK(unpack_assignments(bytes, 3, 10) == idx);
}

TEST_CASE("unpack rejects wrong lengths and out-of-range indices") {
    CHECK_THROWS_AS(unpack_assignments(std::vector<std::uint8_t>{0x01}, 3, 16),
                    DataError);
    // Two 4-bit indices, the second decoding to 12 >= k = 10.
    const std::vector<std::uint8_t> bad = {0xC1};
    CHECK_THROWS_AS(unpack_assignments(bad, 2, 10), DataError);
}

TEST_CASE("weight bundles round-trip bit-identically") {
    const TinyNet net = make_cnn(21);  // covers conv + batchnorm records
    const auto bytes = encode_bundle(net);
    const TinyNet back = decode_bundle(bytes);
    CHECK(encode_bundle(back) == bytes);

    CHECK(back.name == net.name);
    CHECK(back.input_shape == net.input_shape);
    REQUIRE(back.layers.size() == net.layers.size());
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        CHECK(back.layers[li].kind == net.layers[li].kind);
        CHECK(back.layers[li].compressible == net.layers[li].compressible);
        CHECK(back.layers[li].weight.data == net.layers[li].weight.data);
        CHECK(back.layers[li].running_var.data == net.layers[li].running_var.data);
    }
    REQUIRE(back.blocks.size() == net.blocks.size());
    CHECK(back.blocks[1].name == net.blocks[1].name);
}

TEST_CASE("decoders reject implausible dimensions as data errors") {
    Rng rng(29);
    CodebookFile cf;
    cf.codebook.k = 4;
    cf.codebook.d = 2;
    cf.codebook.words = random_tensor(rng, {8}).data;
    auto bytes = encode_codebook(cf);
    // The k field sits right after magic + version; blow it up.
    for (std::size_t i = 8; i < 16; ++i) bytes[i] = 0xFF;
    CHECK_THROWS_AS(decode_codebook(bytes), DataError);
}

TEST_CASE("decoders fail closed on corrupt inputs") {
    const TinyNet net = make_mlp2(22);
    auto bytes = encode_bundle(net);

    auto truncated = bytes;
    truncated.resize(truncated.size() / 2);
    CHECK_THROWS_AS(decode_bundle(truncated), DataError);

    auto wrong_magic = bytes;
    wrong_magic[0] = 'X';
    CHECK_THROWS_AS(decode_bundle(wrong_magic), DataError);

    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_bundle(trailing), DataError);

    auto bad_version = bytes;
    bad_version[4] = 9;
    CHECK_THROWS_AS(decode_bundle(bad_version), DataError);
}

TEST_CASE("codebook files round-trip") {
    Rng rng(23);
    CodebookFile cf;
    cf.codebook.k = 32;
    cf.codebook.d = 4;
    Tensor w = random_tensor(rng, {32 * 4});
    w.snap_to_fp32();
    cf.codebook.words = w.data;
    cf.bandwidth = 0.01;
    cf.seed = 99;
    cf.quota_per_net = 640;
    cf.sources = "mlp2,mlp3";

    const auto bytes = encode_codebook(cf);
    const CodebookFile back = decode_codebook(bytes);
    CHECK(back.codebook.words == cf.codebook.words);
    CHECK(back.bandwidth == cf.bandwidth);
    CHECK(back.sources == cf.sources);
    CHECK(encode_codebook(back) == bytes);
}

TEST_CASE("compressed models round-trip and rebuild identical nets") {
    Rng rng(24);
    const TinyNet net = make_mlp2(25);
    const Dataset ds = make_two_cluster_2d(25);
    Codebook cb;
    cb.k = 64;
    cb.d = 4;
    Tensor words = random_tensor(rng, {64 * 4}, 0.4);
    words.snap_to_fp32();
    cb.words = words.data;

    PncConfig cfg;
    cfg.candidates = 4;
    cfg.max_epochs = 2;
    cfg.seed = 4;
    const CompressionOutcome out = compress(net, cb, ds, cfg);
    const CompressedModel model = build_compressed_model(out.net_hard, out.assignments);

    const auto bytes = encode_model(model);
    const CompressedModel back = decode_model(bytes);
    CHECK(encode_model(back) == bytes);

    const TinyNet direct = reconstruct_net(model);
    const TinyNet decoded = reconstruct_net(back);
    for (std::size_t li = 0; li < direct.layers.size(); ++li) {
        CHECK(direct.layers[li].weight.data == decoded.layers[li].weight.data);
        CHECK(direct.layers[li].weight.data == out.net_hard.layers[li].weight.data);
        CHECK(direct.layers[li].bias.data == out.net_hard.layers[li].bias.data);
    }

    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    CHECK_THROWS_AS(decode_model(truncated), DataError);
}

TEST_CASE("file round-trips are byte-identical") {
    const auto dir = temp_dir();
    const TinyNet net = make_ae(26);
    save_bundle(dir / "ae.uvqw", net);
    const auto bytes = read_file(dir / "ae.uvqw");
    CHECK(bytes == encode_bundle(net));
    const TinyNet back = load_bundle(dir / "ae.uvqw");
    save_bundle(dir / "ae2.uvqw", back);
    CHECK(read_file(dir / "ae2.uvqw") == bytes);
    CHECK(fnv1a64(bytes) == fnv1a64(read_file(dir / "ae2.uvqw")));
}

TEST_CASE("account reproduces the published rate arithmetic") {
    CHECK(weights_only_rate(1u << 12, 4) == doctest::Approx(32.0 * 4 / 12));
    CHECK(std::lround(weights_only_rate(1u << 12, 4) * 100.0) == 1067);  // 10.67x
    CHECK(std::lround(weights_only_rate(1u << 12, 4)) == 11);            // "11x"
    CHECK(weights_only_rate(1u << 16, 8) == doctest::Approx(16.0));
    CHECK(weights_only_rate(1u << 16, 16) == doctest::Approx(32.0));
    CHECK(weights_only_rate(1u << 16, 32) == doctest::Approx(64.0));
}

TEST_CASE("account on a uniformly compressed model matches the closed form") {
    Rng rng(27);
    const TinyNet net = make_mlp2(28);
    const Dataset ds = make_two_cluster_2d(28);
    Codebook cb;
    cb.k = 256;
    cb.d = 4;
    Tensor words = random_tensor(rng, {256 * 4}, 0.4);
    words.snap_to_fp32();
    cb.words = words.data;

    PncConfig cfg;
    cfg.candidates = 2;
    cfg.max_epochs = 1;
    cfg.head_per_layer = false;  // uniform (k, d) across all compressed layers
    cfg.seed = 5;
    const CompressionOutcome out = compress(net, cb, ds, cfg);
    const CompressedModel model = build_compressed_model(out.net_hard, out.assignments);

    const CompressionReport rep =
        account(model, net, CodebookSharing::universal, 99, 4);
    CHECK(rep.bits_per_weight == doctest::Approx(2.0));
    CHECK(rep.rate_weights_only == doctest::Approx(weights_only_rate(256, 4)));
    CHECK(rep.io_loads == 1);  // universal sharing loads one codebook, always

    const CompressionReport per =
        account(model, net, CodebookSharing::per_layer, 514, 4);
    CHECK(per.io_loads == 514);

    // Reported sizes are recomputable from shapes alone.
    std::size_t expect_stream_bits = 0;
    for (const CompressedLayerRecord& rec : model.layers) {
        expect_stream_bits += rec.rows * rec.cols * 8;
    }
    CHECK(rep.stream_bytes == (expect_stream_bits + 7) / 8);
    CHECK(rep.codebook_bytes == 256 * 4 * 4);
    CHECK(rep.compressed_bytes ==
          rep.stream_bytes + rep.residual_bytes + rep.codebook_bytes);
    CHECK(rep.ratio_total_amortized > rep.ratio_total);
    // Decoded-weight MSE reproduces the trace value exactly.
    CHECK(rep.weight_mse ==
          doctest::Approx(out.trace.final_weight_mse).epsilon(1e-12));
}
