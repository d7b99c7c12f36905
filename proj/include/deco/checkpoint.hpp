#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "deco/tensor.hpp"

namespace deco {

// Single-file parameter container. Layout (all integers little-endian):
//
//   "DCKP"                      4-byte magic
//   u32 version                 currently 1
//   u32 metadata_length         followed by that many bytes of UTF-8 JSON ("{}" when empty)
//   u32 entry_count
//   entry_count times:
//     u32 name_length, name bytes
//     u32 ndim, u64 extent[ndim]
//     f64 value[product(extent)]  IEEE-754 binary64, little-endian
//
// Entries are written in the order given; readers must not rely on order.
inline constexpr char kCheckpointMagic[4] = {'D', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct Checkpoint {
    std::string metadata = "{}";
    std::vector<NamedTensor> entries;

    const Tensor* find(const std::string& name) const;
    const Tensor& get(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);

// Loaded tensors are f64.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

// SHA-256 (hex) over names, shapes and binary64 values, in the given order.
std::string state_checksum(const std::vector<NamedTensor>& entries);

// Copies values from source into destination tensors with matching names (dtype converted).
// Missing names or shape mismatches raise DataError.
void assign_state(const std::vector<NamedTensor>& destination, const Checkpoint& source);

std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_hex(const std::string& text);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace deco
