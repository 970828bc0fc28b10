// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "hyperalign/config.hpp"

using namespace hyperalign;
using nlohmann::json;

namespace {

std::string error_of(const json& doc) {
    try {
        parse_config(doc);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

std::filesystem::path scratch_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "hyperalign_test_config";
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("minimal config fills the documented defaults") {
    const ExperimentConfig c = parse_config(json{{"seed", 11}});
    CHECK(c.seed == 11);
    CHECK(c.train.seed == 11);
    CHECK(c.align.seed == 11);
    CHECK(c.paradigm == Paradigm::vp);
    CHECK(c.steps == 100);
    CHECK(c.beta_min == 1e-3);
    CHECK(c.beta_max == 0.2);
    CHECK(c.hypernet.target_layers == std::vector<std::size_t>{0, 1, 2});
    CHECK(c.denoiser.parameterization == Parameterization::epsilon);
    CHECK(c.preference.eta_for(c.steps) == std::vector<double>(100, 1.0));
}

TEST_CASE("flow paradigm selects the velocity parameterization") {
    const ExperimentConfig c = parse_config(json{{"seed", 1}, {"paradigm", "flow"}});
    CHECK(c.paradigm == Paradigm::flow);
    CHECK(c.denoiser.parameterization == Parameterization::velocity);
}

TEST_CASE("schema errors name the key") {
    CHECK(error_of(json::object()).find("missing required key 'seed'") != std::string::npos);
    CHECK(error_of(json{{"seed", 1}, {"sede", 2}}).find("unknown key 'sede'") != std::string::npos);
    CHECK(error_of(json{{"seed", 1}, {"align", {{"itterations", 2}}}}).find("'align.itterations'") != std::string::npos);
    CHECK(error_of(json{{"seed", "one"}}).find("'seed' has the wrong type") != std::string::npos);
    CHECK(error_of(json{{"seed", 1}, {"schedule", {{"steps", 1.5}}}}).find("'schedule.steps'") != std::string::npos);
    CHECK(error_of(json{{"seed", 1}, {"train_base", {{"batch_size", -4}}}}).find("'train_base.batch_size'") !=
          std::string::npos);
    CHECK(error_of(json{{"seed", 1}, {"hypernet", {{"target_layers", {0, 1.5}}}}}).find("target_layers") !=
          std::string::npos);
    CHECK(error_of(json{{"seed", 1}, {"paradigm", "ddim"}}).find("paradigm") != std::string::npos);
    CHECK(error_of(json{{"seed", 1}, {"bench", {{"methods", {"base", "magic"}}}}}).find("'magic'") !=
          std::string::npos);
    CHECK(error_of(json{{"seed", 1}, {"bench", {{"methods", {"base", "base"}}}}}).find("twice") != std::string::npos);
    CHECK(error_of(json{{"seed", 1}, {"bench", {{"projections", 16}}}}).find("projections") != std::string::npos);
    CHECK(error_of(json{{"seed", 1}, {"bench", {{"samples_per_condition", 999}}}}).find("samples_per_condition") !=
          std::string::npos);
    CHECK(error_of(json{{"seed", 1}, {"keysteps", {{"count", 1}}}}).find("keysteps.count") != std::string::npos);
    CHECK(error_of(json{{"seed", 1}, {"schedule", {{"steps", 10}}}, {"keysteps", {{"count", 11}}}})
              .find("keysteps.count") != std::string::npos);
    CHECK(error_of(json{{"seed", 1}, {"data", {{"std", 0.0}}}}).find("data.std") != std::string::npos);
}

TEST_CASE("eta accepts a number or one entry per step") {
    json doc = {{"seed", 1}, {"schedule", {{"steps", 3}}}, {"keysteps", {{"count", 2}}}};
    doc["preference"] = {{"eta", 0.5}};
    CHECK(parse_config(doc).preference.eta_for(3) == std::vector<double>{0.5, 0.5, 0.5});
    doc["preference"] = {{"eta", {0.1, 0.2, 0.3}}};
    CHECK(parse_config(doc).preference.eta_for(3) == std::vector<double>{0.1, 0.2, 0.3});
    doc["preference"] = {{"eta", {0.1, 0.2}}};
    CHECK(error_of(doc).find("2 entries") != std::string::npos);
    doc["preference"] = {{"eta", {0.1, -0.2, 0.3}}};
    CHECK(error_of(doc).find(">= 0") != std::string::npos);
    doc["preference"] = {{"eta", "high"}};
    CHECK_FALSE(error_of(doc).empty());
}

TEST_CASE("referenced files must exist and resolve against the config directory") {
    const auto dir = scratch_dir();
    const auto missing = dir / "nope.ckpt";
    std::filesystem::remove(missing);
    CHECK(error_of(json{{"seed", 1}, {"bench", {{"base_checkpoint", missing.string()}}}}).find(missing.string()) !=
          std::string::npos);

    std::ofstream(dir / "present.ckpt") << "x";
    const json doc = {{"seed", 1}, {"output_dir", "run"}, {"bench", {{"base_checkpoint", "present.ckpt"}}}};
    std::ofstream(dir / "cfg.json") << doc.dump();
    const ExperimentConfig c = load_config(dir / "cfg.json");
    CHECK(c.bench.base_checkpoint == dir / "present.ckpt");
    CHECK(c.output_dir == dir / "run");

    CHECK_THROWS_WITH_AS(load_config(dir / "absent.json"), doctest::Contains("absent.json"), ConfigError);
    std::ofstream(dir / "broken.json") << "{\"seed\": 1,";
    CHECK_THROWS_WITH_AS(load_config(dir / "broken.json"), doctest::Contains("not valid JSON"), ConfigError);
}

TEST_CASE("echo round trip and hash") {
    const json doc = {{"seed", 4}, {"schedule", {{"steps", 30}}}, {"align", {{"losses", "reward"}}}};
    const ExperimentConfig c = parse_config(doc);
    const ExperimentConfig back = parse_config(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());
    CHECK(c.hash().size() == 16);
    CHECK(parse_config(doc).hash() == c.hash());

    ExperimentConfig other = c;
    other.reseed(5);
    CHECK(other.seed == 5);
    CHECK(other.train.seed == 5);
    CHECK(other.align.seed == 5);
    CHECK(other.hash() != c.hash());
}

TEST_CASE("keystep sidecar") {
    const auto path = scratch_dir() / "keysteps.json";
    KeystepSchedule k;
    k.T = 100;
    k.steps = {100, 70, 40, 10};
    write_keysteps(path, k);
    const KeystepSchedule back = read_keysteps(path);
    CHECK(back.T == 100);
    CHECK(back.steps == k.steps);

    std::ofstream(path) << R"({"T": 100, "steps": [90, 40]})";
    CHECK_THROWS_AS(read_keysteps(path), ConfigError);  // must start at T
    std::ofstream(path) << R"({"T": 100, "steps": [100, 40], "extra": 1})";
    CHECK_THROWS_WITH_AS(read_keysteps(path), doctest::Contains("extra"), ConfigError);
}
