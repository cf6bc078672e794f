#pragma once

#include <filesystem>

#include "groupmix/nn.hpp"

namespace groupmix {

enum class CheckpointFormat { binary, text };

// Binary: "GMLP" magic, u32 version, u32 layer count, then per layer
// (u64 in_dim, u64 out_dim, u8 activation), then per layer the row-major
// weights followed by the bias, as little-endian IEEE doubles. Text: a
// header line, one "layer in out activation" line per layer, then one line of
// %.17g values per weight row and per bias. Both load back bit-exactly.
void save_checkpoint(const Mlp& mlp, const std::filesystem::path& path,
                     CheckpointFormat format = CheckpointFormat::binary);

// Detects the format from the leading bytes.
Mlp load_checkpoint(const std::filesystem::path& path);

}  // namespace groupmix
