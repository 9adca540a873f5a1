#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "mseg/tensor.hpp"

namespace mseg {

// Binary volume container: magic "MVOL", version u16, dtype u16 (1 = f32,
// 2 = u8), channels u32, extents X/Y/Z u32, little-endian payload in
// channel-major then x-fastest order. In memory that is a row-major
// [C, Z, Y, X] tensor.

constexpr std::uint16_t kMvolVersion = 1;
constexpr std::uint16_t kMvolF32 = 1;
constexpr std::uint16_t kMvolU8 = 2;

struct MvolBadMagic : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MvolTruncated : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MvolExtentOverflow : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// f32 tensors are [C, Z, Y, X]; u8 label volumes are [Z, Y, X] (one channel).
void write_mvol(const Tensor& tensor, const std::string& path);
void write_mvol(const LabelVolume& labels, const std::string& path);

Tensor read_mvol_f32(const std::string& path);
LabelVolume read_mvol_u8(const std::string& path);
std::uint16_t mvol_dtype(const std::string& path);

}  // namespace mseg
