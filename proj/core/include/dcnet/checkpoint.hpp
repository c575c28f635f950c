#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dcnet/parameters.hpp"
#include "dcnet/tensor.hpp"

// Model checkpoint container. Layout (all integers little-endian), see
// docs/checkpoint_format.md:
//
//   magic "DCNETCKP" | u32 version | u32 meta_len | meta (UTF-8 JSON)
//   u32 count | count x { u32 name_len | name | u32 rank | rank x u64 extent
//                         | u8 dtype (1 = float64) | u64 n | n x f64 }
//   u64 FNV-1a hash of every preceding byte
namespace dcnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string metadata;  // JSON text
  std::vector<std::pair<std::string, Tensor>> arrays;
};

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store, const std::string& metadata);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies arrays into same-named parameters; names and shapes must match exactly.
void restore_parameters(ParameterStore& store, const Checkpoint& ckpt);

std::string encode_checkpoint(const ParameterStore& store, const std::string& metadata);
Checkpoint decode_checkpoint(const std::string& bytes);

}  // namespace dcnet
