#pragma once

#include <cstdint>
#include <string>

#include "demr/autodiff.hpp"

namespace demr {

std::uint32_t crc32(const unsigned char* data, std::size_t len);

/// Versioned binary container ("DEMRCK01", little-endian): every parameter
/// and its Adam moments as float32 tensors, the optimizer step count, the
/// config hash, and a trailing CRC32 over the whole payload. Values are
/// narrowed to float32 on save and widened exactly on load, so a
/// save/load/save cycle is byte-stable.
void save_checkpoint(const ParamStore& store, std::uint64_t cfg_hash,
                     const std::string& path);

/// Loads into an already-built store: names and shapes must match exactly.
/// Returns the stored config hash.
std::uint64_t load_checkpoint(ParamStore& store, const std::string& path);

}  // namespace demr
