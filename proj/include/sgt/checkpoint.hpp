// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container (little-endian):
//
//   magic    8 bytes  "SGTCKPT\0"
//   version  u32
//   length   u64      payload byte count
//   payload  length bytes
//   crc32    u32      zlib crc32 of the payload
//
// Payload fields in order: run config text, step, arch state, fixed plan,
// stage pool, growth window, log window, FLOPs ledger, Adam step count, then
// parameters, first moments and second moments as (rows, cols, float data)
// in the canonical parameter order. Batch sampling is a pure function of
// (seed, step, sample), so no generator cursor needs storing.

#pragma once

#include "sgt/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>

namespace sgt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const TrainerState& state, const std::filesystem::path& path);
TrainerState load_checkpoint(const std::filesystem::path& path);

/// Serialized form, exposed for tests.
std::string encode_checkpoint(const TrainerState& state, std::uint32_t version = kCheckpointVersion);
TrainerState decode_checkpoint(const std::string& bytes);

bool states_equal(const TrainerState& a, const TrainerState& b);

}  // namespace sgt
