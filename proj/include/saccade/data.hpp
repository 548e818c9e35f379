#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "saccade/attention.hpp"
#include "saccade/nn.hpp"
#include "saccade/tensor.hpp"

namespace saccade {

// SplitMix64 finaliser; used to derive independent RNG streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t mix_seed(std::uint64_t seed, std::string_view stream);

enum class Trajectory {
  kLeftRight,
  kTopDown,
  kStatic,
  kRightLeft,
  kBottomUp,
  kDiagonal,
};
inline constexpr std::size_t kTrajectoryKinds = 6;

struct SequenceSpec {
  std::size_t frames = 10;
  std::size_t height = 48;
  std::size_t width = 48;
  std::size_t classes = 3;
};

struct SyntheticSequence {
  std::uint64_t seq_id = 0;
  std::uint64_t seed = 0;  // RNG seed of this sequence
  std::size_t label = 0;
  Trajectory kind = Trajectory::kStatic;
  double speed = 0.0;  // pixels per frame
  std::vector<Tensor> frames;                  // T images, 3 x H x W
  std::vector<std::array<double, 2>> centers;  // blob (row, col) per frame
};

// One bright Gaussian blob over uniform noise. The blob is stretched along
// its direction of motion, so a single moving frame hints at its class.
// Labels are assigned round-robin over seq_id; class c follows trajectory c.
SyntheticSequence gen_sequence(const SequenceSpec& spec, std::uint64_t seq_id,
                               std::uint64_t seed);
// Sequences [first_id, first_id + n), generated in parallel over `jobs`
// threads; identical output for any job count.
std::vector<SyntheticSequence> gen_dataset(const SequenceSpec& spec, std::size_t n,
                                           std::uint64_t seed,
                                           std::uint64_t first_id = 0,
                                           std::size_t jobs = 1);

struct BlobAttentionSpec {
  std::size_t frames = 8;
  std::size_t channels = 8;
  std::size_t height = 8;
  std::size_t width = 8;
  double speed = 1.0;  // cells per frame
  double sigma = 1.2;
};

// A Gaussian bump translating along one of the four axis directions at
// constant speed, with random per-channel gains. Values lie in [0, 1].
std::vector<AttentionMap> translating_blob_attention(const BlobAttentionSpec& spec,
                                                     Rng& rng);

// Runs fn(i) for i in [0, n) over up to `jobs` threads. Exceptions from any
// worker are rethrown (first by index) after all threads join.
void parallel_for(std::size_t n, std::size_t jobs,
                  const std::function<void(std::size_t)>& fn);

}  // namespace saccade
