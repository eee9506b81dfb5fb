#include "doctest.h"

#include <filesystem>

#include "uvq/cli.hpp"
#include "uvq/storage.hpp"

using namespace uvq;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "uvq_cli_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string s(const fs::path& p) { return p.string(); }

}  // namespace

TEST_CASE("cli pipeline: zoo, fit-codebook, compress, eval, report") {
    const fs::path dir = fresh_dir("pipeline");
    const fs::path zoo = dir / "zoo";

    // Short float training keeps this test fast; determinism is what matters.
    REQUIRE(run_cli({"zoo", "--out", s(zoo), "--seed", "7", "--epochs", "2"}) == 0);
    for (const char* n : {"mlp2.uvqw", "mlp3.uvqw", "cnn.uvqw", "ae.uvqw"}) {
        CHECK(fs::exists(zoo / n));
    }
    CHECK(fs::exists(zoo / "zoo.json"));
    CHECK(fs::exists(zoo / "zoo.runlog.jsonl"));

    const fs::path cb = dir / "cb.uvqk";
    REQUIRE(run_cli({"fit-codebook", "--zoo", s(zoo), "--out", s(cb), "--k", "64",
                     "--d", "4", "--seed", "7"}) == 0);
    CHECK(load_codebook(cb).codebook.k == 64);

    const fs::path model = dir / "mlp2.uvqc";
    REQUIRE(run_cli({"compress", "--codebook", s(cb), "--model", s(zoo / "mlp2.uvqw"),
                     "--out", s(model), "--candidates", "4", "--epochs", "2",
                     "--seed", "7"}) == 0);
    CHECK(fs::exists(model));
    CHECK(fs::exists(fs::path(s(model) + ".trace.jsonl")));
    CHECK(fs::exists(fs::path(s(model) + ".runlog.jsonl")));

    CHECK(run_cli({"eval", "--model", s(zoo / "mlp2.uvqw"), "--data-seed", "7"}) == 0);
    CHECK(run_cli({"eval", "--model", s(model), "--data-seed", "7"}) == 0);
    CHECK(run_cli({"report", "--model", s(model), "--bundle", s(zoo / "mlp2.uvqw"),
                   "--format", "json"}) == 0);
    CHECK(run_cli({"report", "--model", s(model), "--bundle", s(zoo / "mlp2.uvqw"),
                   "--format", "csv"}) == 0);
}

TEST_CASE("cli runs are replayable bit-for-bit") {
    const fs::path a = fresh_dir("replay_a");
    const fs::path b = fresh_dir("replay_b");
    REQUIRE(run_cli({"zoo", "--out", s(a), "--seed", "11", "--epochs", "2"}) == 0);
    REQUIRE(run_cli({"zoo", "--out", s(b), "--seed", "11", "--epochs", "2"}) == 0);
    for (const char* n : {"mlp2.uvqw", "mlp3.uvqw", "cnn.uvqw", "ae.uvqw"}) {
        CHECK(fnv1a64(read_file(a / n)) == fnv1a64(read_file(b / n)));
    }

    const fs::path cb = a / "cb.uvqk";
    REQUIRE(run_cli({"fit-codebook", "--zoo", s(a), "--out", s(cb), "--k", "64",
                     "--d", "4", "--seed", "11"}) == 0);
    const fs::path m1 = a / "m1.uvqc", m2 = a / "m2.uvqc";
    REQUIRE(run_cli({"compress", "--codebook", s(cb), "--model", s(a / "mlp2.uvqw"),
                     "--out", s(m1), "--candidates", "4", "--epochs", "2", "--seed",
                     "11"}) == 0);
    REQUIRE(run_cli({"compress", "--codebook", s(cb), "--model", s(a / "mlp2.uvqw"),
                     "--out", s(m2), "--candidates", "4", "--epochs", "2", "--seed",
                     "11"}) == 0);
    CHECK(read_file(m1) == read_file(m2));
}

TEST_CASE("cli exit codes distinguish usage and data failures") {
    CHECK(run_cli({"zoo"}) == kExitUsage);               // missing --out
    CHECK(run_cli({"no-such-command"}) == kExitUsage);
    CHECK(run_cli({"eval", "--model", "/nonexistent/x.uvqw"}) == kExitData);

    const fs::path dir = fresh_dir("badflag");
    CHECK(run_cli({"compress", "--codebook", s(dir / "missing.uvqk"), "--model",
                   s(dir / "missing.uvqw"), "--out", s(dir / "out.uvqc")}) ==
          kExitData);
}

TEST_CASE("diverging compression exits with the numeric failure code") {
    const fs::path dir = fresh_dir("numeric");
    REQUIRE(run_cli({"zoo", "--out", s(dir), "--seed", "5", "--epochs", "1"}) == 0);
    const fs::path cb = dir / "cb.uvqk";
    REQUIRE(run_cli({"fit-codebook", "--zoo", s(dir), "--out", s(cb), "--k", "32",
                     "--d", "4", "--seed", "5"}) == 0);

    // Poison the bundle with an overflowing weight so squared feature distances overflow.
    TinyNet net = load_bundle(dir / "mlp2.uvqw");
    net.layers[0].weight[0] = 1e200;
    save_bundle(dir / "bad.uvqw", net);
    CHECK(run_cli({"compress", "--codebook", s(cb), "--model", s(dir / "bad.uvqw"),
                   "--out", s(dir / "bad.uvqc"), "--epochs", "1", "--seed", "5"}) ==
          kExitNumeric);
}

TEST_CASE("UVQ_SEED is the seed fallback when --seed is absent") {
    const fs::path a = fresh_dir("envseed_a");
    const fs::path b = fresh_dir("envseed_b");
    setenv("UVQ_SEED", "1234", 1);
    REQUIRE(run_cli({"zoo", "--out", s(a), "--epochs", "1"}) == 0);
    unsetenv("UVQ_SEED");
    REQUIRE(run_cli({"zoo", "--out", s(b), "--seed", "1234", "--epochs", "1"}) == 0);
    CHECK(read_file(a / "mlp2.uvqw") == read_file(b / "mlp2.uvqw"));
}

TEST_CASE("uq and pvq baselines print a comparison") {
    const fs::path dir = fresh_dir("baseline");
    REQUIRE(run_cli({"zoo", "--out", s(dir), "--seed", "3", "--epochs", "2"}) == 0);
    CHECK(run_cli({"baseline", "--zoo", s(dir), "--type", "uq", "--bits", "2"}) == 0);
    CHECK(run_cli({"baseline", "--zoo", s(dir), "--type", "pvq", "--k", "16", "--d",
                   "4", "--iters", "5", "--seed", "3"}) == 0);
}
