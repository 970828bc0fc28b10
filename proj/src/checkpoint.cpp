// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include "hyperalign/serialize.hpp"

namespace hyperalign {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "hyperalign-checkpoint";

json denoiser_config_json(const DenoiserConfig& c) {
    return {{"data_dim", c.data_dim},         {"num_conditions", c.num_conditions},
            {"time_features", c.time_features}, {"cond_embedding", c.cond_embedding},
            {"hidden", c.hidden},             {"parameterization", to_string(c.parameterization)}};
}

DenoiserConfig denoiser_config_from(const json& j) {
    DenoiserConfig c;
    c.data_dim = j.at("data_dim").get<std::size_t>();
    c.num_conditions = j.at("num_conditions").get<std::size_t>();
    c.time_features = j.at("time_features").get<std::size_t>();
    c.cond_embedding = j.at("cond_embedding").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    c.parameterization = parameterization_from_string(j.at("parameterization").get<std::string>());
    return c;
}

json hypernet_config_json(const HyperNetConfig& c) {
    return {{"target_layers", c.target_layers}, {"rank", c.rank},
            {"query_tokens", c.query_tokens},   {"kv_tokens", c.kv_tokens},
            {"token_width", c.token_width},     {"encoder_hidden", c.encoder_hidden},
            {"ffn_hidden", c.ffn_hidden},       {"lora_scale", c.lora_scale}};
}

HyperNetConfig hypernet_config_from(const json& j) {
    HyperNetConfig c;
    c.target_layers = j.at("target_layers").get<std::vector<std::size_t>>();
    c.rank = j.at("rank").get<std::size_t>();
    c.query_tokens = j.at("query_tokens").get<std::size_t>();
    c.kv_tokens = j.at("kv_tokens").get<std::size_t>();
    c.token_width = j.at("token_width").get<std::size_t>();
    c.encoder_hidden = j.at("encoder_hidden").get<std::vector<std::size_t>>();
    c.ffn_hidden = j.at("ffn_hidden").get<std::size_t>();
    c.lora_scale = j.at("lora_scale").get<double>();
    return c;
}

std::string encode_all(const std::vector<const Tensor*>& tensors) {
    std::string payload;
    for (const Tensor* t : tensors) payload += encode_tensor(*t);
    return payload;
}

std::string write_file(const std::filesystem::path& path, CheckpointKind kind, json config,
                       const std::vector<std::string>& names, const std::vector<const Tensor*>& tensors,
                       json extra = json::object()) {
    const std::string payload = encode_all(tensors);
    const std::string hash = hex_digest(fnv1a64(payload));
    json header = {{"format", kFormat}, {"version", kCheckpointVersion}, {"kind", to_string(kind)},
                   {"config", std::move(config)}, {"hash", hash}, {"tensors", names}};
    for (auto& [k, v] : extra.items()) header[k] = v;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("checkpoint: cannot write " + path.string());
    out << header.dump() << '\n';
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw CheckpointError("checkpoint: write failed for " + path.string());
    return hash;
}

struct RawCheckpoint {
    json header;
    CheckpointKind kind;
    std::string payload;
};

RawCheckpoint read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw CheckpointError("checkpoint: " + path.string() + " is empty");
    RawCheckpoint raw;
    try {
        raw.header = json::parse(line);
    } catch (const json::parse_error&) {
        throw CheckpointError("checkpoint: " + path.string() + " has no JSON header");
    }
    try {
        if (!raw.header.is_object() || raw.header.value("format", "") != kFormat)
            throw CheckpointError("checkpoint: " + path.string() + " is not a checkpoint file");
        const int version = raw.header.at("version").get<int>();
        if (version != kCheckpointVersion)
            throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
        const std::string kind = raw.header.at("kind").get<std::string>();
        if (kind == "denoiser") {
            raw.kind = CheckpointKind::denoiser;
        } else if (kind == "hypernet") {
            raw.kind = CheckpointKind::hypernet;
        } else {
            throw CheckpointError("checkpoint: unknown kind '" + kind + "'");
        }
        raw.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
        const std::string expected = raw.header.at("hash").get<std::string>();
        if (hex_digest(fnv1a64(raw.payload)) != expected)
            throw CheckpointError("checkpoint: " + path.string() + " payload hash mismatch (corrupt file)");
    } catch (const json::exception& e) {
        throw CheckpointError("checkpoint: malformed header in " + path.string() + ": " + e.what());
    }
    return raw;
}

void fill(const RawCheckpoint& raw, const std::vector<Tensor*>& params, const std::vector<std::string>& names,
          const std::filesystem::path& path) {
    if (raw.header.at("tensors").get<std::vector<std::string>>() != names)
        throw CheckpointError("checkpoint: tensor layout of " + path.string() + " does not match its config");
    std::istringstream is(raw.payload, std::ios::binary);
    try {
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor t = read_tensor(is);
            if (t.shape() != params[i]->shape())
                throw CheckpointError("checkpoint: tensor '" + names[i] + "' has shape " + shape_str(t.shape()) +
                                      ", expected " + shape_str(params[i]->shape()));
            *params[i] = std::move(t);
        }
    } catch (const FormatError& e) {
        throw CheckpointError("checkpoint: " + path.string() + ": " + e.what());
    }
    if (is.peek() != std::char_traits<char>::eof())
        throw CheckpointError("checkpoint: trailing bytes in " + path.string());
}

void expect_kind(const RawCheckpoint& raw, CheckpointKind want, const std::filesystem::path& path) {
    if (raw.kind != want) {
        throw CheckpointError(std::string("checkpoint: ") + path.string() + " holds a " + to_string(raw.kind) +
                              ", expected a " + to_string(want));
    }
}

}  // namespace

const char* to_string(CheckpointKind k) { return k == CheckpointKind::denoiser ? "denoiser" : "hypernet"; }

std::string denoiser_digest(const DenoiserNet& net) { return hex_digest(fnv1a64(encode_all(net.parameters()))); }

std::string save_denoiser(const std::filesystem::path& path, const DenoiserNet& net) {
    return write_file(path, CheckpointKind::denoiser, denoiser_config_json(net.config()), net.parameter_names(),
                      net.parameters());
}

DenoiserNet load_denoiser(const std::filesystem::path& path) {
    const RawCheckpoint raw = read_file(path);
    expect_kind(raw, CheckpointKind::denoiser, path);
    DenoiserConfig cfg;
    try {
        cfg = denoiser_config_from(raw.header.at("config"));
    } catch (const std::exception& e) {
        throw CheckpointError("checkpoint: bad denoiser config in " + path.string() + ": " + e.what());
    }
    DenoiserNet net(cfg, RngStream(0));
    fill(raw, net.parameters(), net.parameter_names(), path);
    return net;
}

std::string save_hypernet(const std::filesystem::path& path, const HyperNet& hnet, const DenoiserNet& net) {
    return write_file(path, CheckpointKind::hypernet, hypernet_config_json(hnet.config()), hnet.parameter_names(),
                      hnet.parameters(), {{"base_hash", denoiser_digest(net)}});
}

HyperNet load_hypernet(const std::filesystem::path& path, const DenoiserNet& net) {
    const RawCheckpoint raw = read_file(path);
    expect_kind(raw, CheckpointKind::hypernet, path);
    HyperNetConfig cfg;
    std::string base_hash;
    try {
        cfg = hypernet_config_from(raw.header.at("config"));
        base_hash = raw.header.at("base_hash").get<std::string>();
    } catch (const std::exception& e) {
        throw CheckpointError("checkpoint: bad hypernet config in " + path.string() + ": " + e.what());
    }
    if (base_hash != denoiser_digest(net))
        throw CheckpointError("checkpoint: " + path.string() + " was trained against a different base denoiser");
    HyperNet hnet(cfg, net, RngStream(0));
    fill(raw, hnet.parameters(), hnet.parameter_names(), path);
    return hnet;
}

CheckpointHeader inspect_checkpoint(const std::filesystem::path& path) {
    const RawCheckpoint raw = read_file(path);
    return {raw.kind, raw.header.at("config"), raw.header.at("hash").get<std::string>()};
}

}  // namespace hyperalign
