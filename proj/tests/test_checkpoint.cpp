// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hyperalign/checkpoint.hpp"
#include "hyperalign/pipeline.hpp"

using namespace hyperalign;

namespace {

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "hyperalign_test_checkpoint";
    std::filesystem::create_directories(dir);
    return dir / name;
}

ExperimentConfig tiny_config(std::uint64_t seed) {
    return parse_config(nlohmann::json{
        {"seed", seed},
        {"schedule", {{"steps", 10}}},
        {"keysteps", {{"count", 3}}},
        {"data", {{"train_size", 300}}},
        {"denoiser", {{"hidden", {8, 8}}}},
        {"hypernet", {{"target_layers", {0, 1}}, {"encoder_hidden", {6}}, {"ffn_hidden", 4}}},
        {"preference", {{"per_condition", 20}, {"budget", 20000}}},
        {"train_base", {{"iterations", 15}, {"batch_size", 32}}},
        {"align", {{"iterations", 3}, {"batch_size", 8}, {"pool_per_condition", 10}}},
    });
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream(p, std::ios::binary) << bytes;
}

}  // namespace

TEST_CASE("denoiser round trip is bitwise") {
    const ExperimentConfig cfg = tiny_config(3);
    const DenoiserNet net = run_train_base(cfg).net;
    const auto path = scratch("base.ckpt");
    const std::string digest = save_denoiser(path, net);
    CHECK(digest == denoiser_digest(net));
    const DenoiserNet back = load_denoiser(path);
    CHECK(back == net);

    const CheckpointHeader h = inspect_checkpoint(path);
    CHECK(h.kind == CheckpointKind::denoiser);
    CHECK(h.hash == digest);
}

TEST_CASE("identical configs train to identical checkpoints") {
    const auto a = scratch("a.ckpt"), b = scratch("b.ckpt"), c = scratch("c.ckpt");
    const std::string ha = save_denoiser(a, run_train_base(tiny_config(9)).net);
    const std::string hb = save_denoiser(b, run_train_base(tiny_config(9)).net);
    const std::string hc = save_denoiser(c, run_train_base(tiny_config(10)).net);
    CHECK(ha == hb);
    CHECK(slurp(a) == slurp(b));
    CHECK(ha != hc);
}

TEST_CASE("hypernet round trip and base pairing") {
    const ExperimentConfig cfg = tiny_config(5);
    const DenoiserNet net = run_train_base(cfg).net;
    const HyperNet hnet = run_align(cfg, net).hnet;
    const auto path = scratch("hyper.ckpt");
    save_hypernet(path, hnet, net);
    CHECK(load_hypernet(path, net) == hnet);
    CHECK(inspect_checkpoint(path).kind == CheckpointKind::hypernet);

    const DenoiserNet other = run_train_base(tiny_config(6)).net;
    CHECK_THROWS_WITH_AS(load_hypernet(path, other), doctest::Contains("different base denoiser"), CheckpointError);
    CHECK_THROWS_WITH_AS(load_denoiser(path), doctest::Contains("hypernet"), CheckpointError);
}

TEST_CASE("corrupt files are rejected") {
    const DenoiserNet net(DenoiserConfig{}, RngStream(1));
    const auto good = scratch("good.ckpt"), bad = scratch("bad.ckpt");
    save_denoiser(good, net);
    const std::string bytes = slurp(good);

    SUBCASE("flipped payload byte") {
        std::string b = bytes;
        b[b.size() - 3] = static_cast<char>(b[b.size() - 3] ^ 0x10);
        spit(bad, b);
        CHECK_THROWS_WITH_AS(load_denoiser(bad), doctest::Contains("hash mismatch"), CheckpointError);
    }
    SUBCASE("truncated payload") {
        spit(bad, bytes.substr(0, bytes.size() - 8));
        CHECK_THROWS_AS(load_denoiser(bad), CheckpointError);
    }
    SUBCASE("not a checkpoint") {
        spit(bad, "{\"hello\": 1}\n");
        CHECK_THROWS_WITH_AS(load_denoiser(bad), doctest::Contains("not a checkpoint"), CheckpointError);
        spit(bad, "");
        CHECK_THROWS_WITH_AS(load_denoiser(bad), doctest::Contains("empty"), CheckpointError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_WITH_AS(load_denoiser(scratch("absent.ckpt")), doctest::Contains("absent.ckpt"), CheckpointError);
    }
}
