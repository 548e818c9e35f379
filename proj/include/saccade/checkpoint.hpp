#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "saccade/autograd.hpp"

namespace saccade {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parameter checkpoint layout:
//   4-byte magic, u8 version (1), u32 dim count, u32 dims...,
//   then every parameter as 64-bit floats in declaration order.
// All integers little-endian.
std::vector<std::uint8_t> encode_checkpoint(const std::string& magic,
                                            const std::vector<std::uint32_t>& dims,
                                            const ParameterRefs& params);
// Rejects a wrong magic, version, dims header, or payload length.
void decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                       const std::string& magic,
                       const std::vector<std::uint32_t>& dims,
                       const ParameterRefs& params);

void save_checkpoint(const std::filesystem::path& path, const std::string& magic,
                     const std::vector<std::uint32_t>& dims,
                     const ParameterRefs& params);
void load_checkpoint(const std::filesystem::path& path, const std::string& magic,
                     const std::vector<std::uint32_t>& dims,
                     const ParameterRefs& params);

}  // namespace saccade
