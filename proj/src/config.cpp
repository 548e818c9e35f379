#include "saccade/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace saccade {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) { return format_double(v); }

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || text.empty()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + text + "'");
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> parts;
  if (text.empty()) return parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ',');) parts.push_back(trim(p));
  return parts;
}

struct Field {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
Field number(std::string name, T RunConfig::*member) {
  return {name,
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt_double(c.*member);
            else return std::to_string(c.*member);
          },
          [member, name](RunConfig& c, const std::string& v) {
            c.*member = parse_number<T>(name, v);
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(number("seed", &RunConfig::seed));
    f.push_back(number("frames", &RunConfig::frames));
    f.push_back(number("image_height", &RunConfig::image_height));
    f.push_back(number("image_width", &RunConfig::image_width));
    f.push_back(number("classes", &RunConfig::classes));
    f.push_back(number("train_sequences", &RunConfig::train_sequences));
    f.push_back(number("test_sequences", &RunConfig::test_sequences));
    f.push_back(number("d", &RunConfig::d));
    f.push_back(number("crop_height", &RunConfig::crop_height));
    f.push_back(number("crop_width", &RunConfig::crop_width));
    f.push_back(number("k", &RunConfig::k));
    f.push_back(number("crop_slots", &RunConfig::crop_slots));
    f.push_back(number("lambda", &RunConfig::lambda));
    f.push_back(number("attention_extent", &RunConfig::attention_extent));
    f.push_back(number("hallucinator_hidden", &RunConfig::hallucinator_hidden));
    f.push_back(number("classifier_hidden", &RunConfig::classifier_hidden));
    f.push_back(number("policy_hidden", &RunConfig::policy_hidden));
    f.push_back(number("policy_layers", &RunConfig::policy_layers));
    f.push_back(number("max_skip", &RunConfig::max_skip));
    f.push_back({"adjacency", [](const RunConfig& c) { return to_string(c.adjacency); },
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.adjacency = parse_adjacency(v);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(std::string("config key 'adjacency': ") + e.what());
                   }
                 }});
    f.push_back(number("suppression", &RunConfig::suppression));
    f.push_back(number("tau", &RunConfig::tau));
    f.push_back(number("theta_e", &RunConfig::theta_e));
    f.push_back({"theta_h",
                 [](const RunConfig& c) {
                   return fmt_double(c.theta_h[0]) + "," + fmt_double(c.theta_h[1]) +
                          "," + fmt_double(c.theta_h[2]);
                 },
                 [](RunConfig& c, const std::string& v) {
                   const auto parts = split_commas(v);
                   if (parts.size() != 3) {
                     throw ConfigError("config key 'theta_h': expected three comma-separated weights");
                   }
                   for (std::size_t i = 0; i < 3; ++i) {
                     c.theta_h[i] = parse_number<double>("theta_h", parts[i]);
                   }
                 }});
    f.push_back({"normalize_efficiency_loss",
                 [](const RunConfig& c) {
                   return std::string(c.normalize_efficiency_loss ? "true" : "false");
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.normalize_efficiency_loss = parse_bool("normalize_efficiency_loss", v);
                 }});
    f.push_back(number("learning_rate", &RunConfig::learning_rate));
    f.push_back(number("momentum", &RunConfig::momentum));
    f.push_back(number("clip_norm", &RunConfig::clip_norm));
    f.push_back({"lr_decay_epochs",
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.lr_decay_epochs.size(); ++i) {
                     if (i) s += ",";
                     s += std::to_string(c.lr_decay_epochs[i]);
                   }
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.lr_decay_epochs.clear();
                   for (const auto& p : split_commas(v)) {
                     c.lr_decay_epochs.push_back(parse_number<std::size_t>("lr_decay_epochs", p));
                   }
                 }});
    f.push_back(number("lr_decay_factor", &RunConfig::lr_decay_factor));
    f.push_back(number("epochs_features", &RunConfig::epochs_features));
    f.push_back(number("epochs_hallucinator", &RunConfig::epochs_hallucinator));
    f.push_back(number("epochs_spatial", &RunConfig::epochs_spatial));
    f.push_back(number("epochs_temporal", &RunConfig::epochs_temporal));
    f.push_back(number("batch_size", &RunConfig::batch_size));
    f.push_back(number("flops_per_mac", &RunConfig::flops_per_mac));
    f.push_back({"cost_table", [](const RunConfig& c) { return c.cost_table; },
                 [](RunConfig& c, const std::string& v) { c.cost_table = v; }});
    return f;
  }();
  return all;
}

const Field& field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.name == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  field(key).set(*this, trim(value));
}

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const Field& f : fields()) n.push_back(f.name);
    return n;
  }();
  return names;
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c;
  c.merge_text(ss.str(), path.string());
  return c;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const Field& f : fields()) out += f.name + "=" + f.get(*this) + "\n";
  return out;
}

SpatialConfig RunConfig::spatial() const {
  return {k, d, crop_height, crop_width, suppression, adjacency};
}

void RunConfig::validate() const {
  auto fail = [](const std::string& why) { throw ConfigError("config: " + why); };
  if (frames < 1) fail("frames must be at least 1");
  if (classes < 2) fail("classes must be at least 2");
  if (classes > 6) fail("the synthetic generator supports at most 6 classes");
  if (image_height < 16 || image_width < 16) fail("images must be at least 16x16");
  if (k > crop_slots) fail("k exceeds crop_slots");
  if (max_skip < 1) fail("max_skip must be at least 1");
  if (attention_extent % 2 == 0) fail("attention_extent must be odd");
  if (!(tau > 0.0)) fail("tau must be positive");
  if (theta_e < 0.0) fail("theta_e must be nonnegative");
  for (double t : theta_h) {
    if (t < 0.0) fail("theta_h weights must be nonnegative");
  }
  if (flops_per_mac != 1 && flops_per_mac != 2) fail("flops_per_mac must be 1 or 2");
  if (learning_rate <= 0.0) fail("learning_rate must be positive");
  if (batch_size == 0) fail("batch_size must be at least 1");
  if (cost_table.empty() && lambda != 3) {
    fail("lambda must be 3 (the attention block) for the built-in backbone");
  }
  if (lambda == 0) fail("lambda must be at least 1");
  try {
    saccade::validate(spatial(), image_height, image_width);
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
}

}  // namespace saccade
