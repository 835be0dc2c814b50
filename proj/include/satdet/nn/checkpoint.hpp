#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "satdet/nn/tensor.hpp"

namespace satdet::nn {

/// One named array of a parameter container. Payloads are stored
/// little-endian: IEEE-754 binary64 for real tensors, two's complement for
/// the integer payloads of quantized models.
struct StoredTensor {
    using Payload = std::variant<std::vector<double>, std::vector<std::int8_t>, std::vector<std::int32_t>>;

    std::string name;
    Shape shape;
    Payload payload;

    friend bool operator==(const StoredTensor&, const StoredTensor&) = default;
};

inline constexpr std::uint32_t kContainerVersion = 1;

/// Layout: "SATDETNN" | u32 version | u32 count | per tensor:
/// u8 dtype (0 f64, 1 i8, 2 i32) | u32 name length | name | u32 rank |
/// u32 dims[rank] | payload.
std::vector<std::uint8_t> encode_container(const std::vector<StoredTensor>& tensors);
std::vector<StoredTensor> decode_container(const std::vector<std::uint8_t>& bytes);

void write_container(const std::filesystem::path& path, const std::vector<StoredTensor>& tensors);
std::vector<StoredTensor> read_container(const std::filesystem::path& path);

} // namespace satdet::nn
