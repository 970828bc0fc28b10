// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint files: one line of JSON header, then the tensor payload in the
// shared binary encoding. The header carries the kind, a config echo and the
// FNV-1a digest of the payload bytes.
#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "hyperalign/denoiser.hpp"
#include "hyperalign/hypernet.hpp"

namespace hyperalign {

inline constexpr int kCheckpointVersion = 1;

enum class CheckpointKind { denoiser, hypernet };

const char* to_string(CheckpointKind k);

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CheckpointHeader {
    CheckpointKind kind = CheckpointKind::denoiser;
    nlohmann::json config;
    std::string hash;  // payload digest
};

/// Returns the payload digest written to the header.
std::string save_denoiser(const std::filesystem::path& path, const DenoiserNet& net);
DenoiserNet load_denoiser(const std::filesystem::path& path);

/// The header also records the hash of the denoiser the hypernet was built
/// against so mismatched pairs are rejected at load.
std::string save_hypernet(const std::filesystem::path& path, const HyperNet& hnet, const DenoiserNet& net);
HyperNet load_hypernet(const std::filesystem::path& path, const DenoiserNet& net);

/// Reads and verifies the header and payload digest without decoding.
CheckpointHeader inspect_checkpoint(const std::filesystem::path& path);

/// Digest of the denoiser's parameter payload.
std::string denoiser_digest(const DenoiserNet& net);

}  // namespace hyperalign
