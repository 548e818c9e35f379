#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "saccade/spatial.hpp"

namespace saccade {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Flat key=value run configuration. Every key has a default; unknown keys
// and malformed values raise ConfigError.
struct RunConfig {
  std::uint64_t seed = 1;

  // Data.
  std::size_t frames = 10;
  std::size_t image_height = 48;
  std::size_t image_width = 48;
  std::size_t classes = 3;
  std::size_t train_sequences = 120;
  std::size_t test_sequences = 90;

  // Model.
  std::size_t d = 2;
  std::size_t crop_height = 16;
  std::size_t crop_width = 16;
  std::size_t k = 1;
  std::size_t crop_slots = 3;
  std::size_t lambda = 3;
  std::size_t attention_extent = 3;
  std::size_t hallucinator_hidden = 8;
  std::size_t classifier_hidden = 32;
  std::size_t policy_hidden = 128;
  std::size_t policy_layers = 2;
  std::size_t max_skip = 3;  // M
  Adjacency adjacency = Adjacency::kManhattan2;
  double suppression = 0.5;

  // Losses.
  double tau = 1.0;
  double theta_e = 1.0;
  std::array<double, 3> theta_h{1.0, 1.0, 1.0};
  bool normalize_efficiency_loss = true;

  // Optimisation.
  double learning_rate = 0.02;
  double momentum = 0.9;
  double clip_norm = 5.0;
  std::vector<std::size_t> lr_decay_epochs;
  double lr_decay_factor = 0.1;
  std::size_t epochs_features = 60;
  std::size_t epochs_hallucinator = 6;
  std::size_t epochs_spatial = 12;
  std::size_t epochs_temporal = 6;
  std::size_t batch_size = 8;

  // Cost accounting.
  std::size_t flops_per_mac = 2;
  std::string cost_table;  // empty: derive from the backbone

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  // Lines of key=value; blank lines and '#' comments are ignored.
  void merge_text(const std::string& text, const std::string& origin = "config");
  static RunConfig from_file(const std::filesystem::path& path);
  // Every key in declaration order, one per line.
  std::string to_text() const;

  SpatialConfig spatial() const;
  // Cross-field checks.
  void validate() const;
};

// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

}  // namespace saccade
