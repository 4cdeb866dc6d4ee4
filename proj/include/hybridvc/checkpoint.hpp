#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hybridvc/restoration.hpp"

// Checkpoint archive:
//   magic "HVCK" | version u32 | header_len u64 | header JSON | payloads
// The header maps every tensor name to {shape, dtype, offset} and carries the
// network spec plus free-form training metadata. Payloads are row-major
// little-endian float32, concatenated in header order.
namespace hvc::checkpoint {

inline constexpr std::uint32_t kVersion = 1;

struct Checkpoint {
  restoration::Weights<float> weights;
  // JSON object with the training configuration (may be "{}").
  std::string train_config_json = "{}";
  // Digest of the step-1 tensors taken when step-2 training started; empty
  // before step 2.
  std::string step1_frozen_hash;
  // Training phase that produced the weights: "init", "step1", "step2",
  // "end_to_end".
  std::string phase = "init";
};

// SHA-256 (hex) over the names, shapes and raw bytes of the selected tensors.
std::string step1_digest(const restoration::Weights<float>& w);
std::string weights_digest(const restoration::Weights<float>& w);
std::string sha256_hex(const std::uint8_t* data, std::size_t size);
std::string file_digest(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
// Throws FormatError on malformed input and ValidationError when expected is
// given and the stored network spec differs.
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes,
                       const std::optional<restoration::NetworkSpec>& expected = {});

void save(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load(const std::filesystem::path& path,
                const std::optional<restoration::NetworkSpec>& expected = {});

std::string spec_to_json(const restoration::NetworkSpec& spec);
restoration::NetworkSpec spec_from_json(const std::string& json);

}  // namespace hvc::checkpoint
