#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "saccade/attention.hpp"
#include "saccade/tensor.hpp"

namespace saccade {

// Stream files: 4-byte magic, u8 version = 1, u32 LE T, C, H, W, then
// T*C*H*W little-endian float32 values in [t][c][h][w] order. Values are
// stored as float32, so round trips are exact for float-representable data.
class FixtureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public FixtureError {
 public:
  using FixtureError::FixtureError;
};
class TruncatedPayloadError : public FixtureError {
 public:
  using FixtureError::FixtureError;
};
class DimMismatchError : public FixtureError {
 public:
  using FixtureError::FixtureError;
};

inline constexpr char kAttentionMagic[] = "ATTN";
inline constexpr char kVideoMagic[] = "VIDS";

// `stream` is T x C x H x W.
std::vector<std::uint8_t> encode_stream(const Tensor& stream, const std::string& magic);
Tensor decode_stream(const std::vector<std::uint8_t>& bytes, const std::string& magic);

void write_fixture(const std::filesystem::path& path, const Tensor& stream,
                   const std::string& magic = kAttentionMagic);
Tensor read_fixture(const std::filesystem::path& path,
                    const std::string& magic = kAttentionMagic);

// Stack / split T maps of identical shape C x H x W.
Tensor stack_frames(const std::vector<Tensor>& frames);
std::vector<Tensor> unstack_frames(const Tensor& stream);
std::vector<AttentionMap> to_attention(const Tensor& stream);

}  // namespace saccade
