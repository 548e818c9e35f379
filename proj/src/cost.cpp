#include "saccade/cost.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace saccade {

Flops conv_flops(std::size_t c_in, std::size_t c_out, std::size_t kernel,
                 std::size_t h_out, std::size_t w_out, Flops flops_per_mac) {
  return flops_per_mac * c_in * c_out * kernel * kernel * h_out * w_out;
}

Flops gru_flops(std::size_t input, std::size_t hidden, std::size_t layers,
                Flops flops_per_mac) {
  Flops total = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = l == 0 ? input : hidden;
    // Two bias adds and a sum per gate row, reset product, blend.
    total += flops_per_mac * 3 * hidden * (in + hidden) + 12 * hidden;
  }
  return total;
}

Flops linear_flops(std::size_t in, std::size_t out, Flops flops_per_mac) {
  return flops_per_mac * in * out + out;
}

LayerCostTable::LayerCostTable(std::vector<LayerSpec> layers, std::size_t split,
                               Flops flops_per_mac)
    : layers_(std::move(layers)), split_(split), flops_per_mac_(flops_per_mac) {
  if (layers_.empty()) throw std::invalid_argument("cost table: no layers");
  if (flops_per_mac_ == 0) throw std::invalid_argument("cost table: zero flops per MAC");
  check_split(split_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    const bool bad = l.in_channels == 0 || l.out_channels == 0 || l.kernel == 0 ||
                     l.stride == 0 ||
                     (l.kind == LayerKind::kAttention && l.kernel % 2 == 0);
    if (bad) {
      throw std::invalid_argument("cost table: layer " + std::to_string(i + 1) +
                                  " has a zero or invalid extent");
    }
    if (i > 0 && layers_[i - 1].out_channels != l.in_channels) {
      throw std::invalid_argument("cost table: layer " + std::to_string(i + 1) +
                                  " expects " + std::to_string(l.in_channels) +
                                  " channels, previous layer gives " +
                                  std::to_string(layers_[i - 1].out_channels));
    }
  }
}

void LayerCostTable::check_split(std::size_t split) const {
  if (split < 1 || split > layers_.size()) {
    throw std::invalid_argument("cost table: split " + std::to_string(split) +
                                " outside [1, " + std::to_string(layers_.size()) + "]");
  }
}

LayerCostTable LayerCostTable::parse(const std::string& text, Flops flops_per_mac) {
  std::istringstream in(text);
  std::string line;
  std::vector<LayerSpec> layers;
  std::size_t split = 0;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;
    std::vector<std::size_t> v;
    for (std::size_t x; ls >> x;) v.push_back(x);
    if (!ls.eof()) {
      throw std::invalid_argument("cost table line " + std::to_string(lineno) +
                                  ": non-numeric field");
    }
    auto need = [&](std::size_t lo, std::size_t hi) {
      if (v.size() < lo || v.size() > hi) {
        throw std::invalid_argument("cost table line " + std::to_string(lineno) +
                                    ": wrong field count for '" + kind + "'");
      }
    };
    if (kind == "split") {
      need(1, 1);
      split = v[0];
    } else if (kind == "conv") {
      need(4, 5);
      layers.push_back({LayerKind::kConv, v[0], v[1], v[2], v[3], v.size() > 4 ? v[4] : 0});
    } else if (kind == "attention") {
      need(2, 2);
      layers.push_back({LayerKind::kAttention, v[0], v[0], v[1], 1, 0});
    } else if (kind == "pool") {
      need(1, 1);
      layers.push_back({LayerKind::kPool, v[0], v[0], 1, 1, 0});
    } else if (kind == "linear") {
      need(2, 2);
      layers.push_back({LayerKind::kLinear, v[0], v[1], 1, 1, 0});
    } else {
      throw std::invalid_argument("cost table line " + std::to_string(lineno) +
                                  ": unknown layer kind '" + kind + "'");
    }
  }
  if (split == 0) throw std::invalid_argument("cost table: missing split line");
  return LayerCostTable(std::move(layers), split, flops_per_mac);
}

LayerCostTable LayerCostTable::load(const std::filesystem::path& path,
                                    Flops flops_per_mac) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open cost table " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str(), flops_per_mac);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

std::string LayerCostTable::to_text() const {
  std::ostringstream out;
  out << "split " << split_ << "\n";
  for (const LayerSpec& l : layers_) {
    switch (l.kind) {
      case LayerKind::kConv:
        out << "conv " << l.in_channels << ' ' << l.out_channels << ' ' << l.kernel
            << ' ' << l.stride << ' ' << l.padding << "\n";
        break;
      case LayerKind::kAttention:
        out << "attention " << l.in_channels << ' ' << l.kernel << "\n";
        break;
      case LayerKind::kPool:
        out << "pool " << l.in_channels << "\n";
        break;
      case LayerKind::kLinear:
        out << "linear " << l.in_channels << ' ' << l.out_channels << "\n";
        break;
    }
  }
  return out.str();
}

std::vector<LayerCost> LayerCostTable::evaluate(std::size_t height,
                                                std::size_t width) const {
  std::vector<LayerCost> out;
  out.reserve(layers_.size());
  std::size_t h = height, w = width;
  const Flops mac = flops_per_mac_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    LayerCost c;
    switch (l.kind) {
      case LayerKind::kConv: {
        if (h + 2 * l.padding < l.kernel || w + 2 * l.padding < l.kernel) {
          throw std::invalid_argument("cost table: layer " + std::to_string(i + 1) +
                                      " gets a " + std::to_string(h) + "x" +
                                      std::to_string(w) + " input, too small");
        }
        c.out_height = (h + 2 * l.padding - l.kernel) / l.stride + 1;
        c.out_width = (w + 2 * l.padding - l.kernel) / l.stride + 1;
        c.flops = conv_flops(l.in_channels, l.out_channels, l.kernel, c.out_height,
                             c.out_width, mac);
        break;
      }
      case LayerKind::kAttention: {
        const Flops hw = h * w, ch = l.in_channels, r2 = l.kernel * l.kernel;
        // Three 1x1 projections, footprint logits, weighted sum of values.
        c.flops = 3 * mac * ch * ch * hw + 2 * mac * ch * r2 * hw;
        c.out_height = h;
        c.out_width = w;
        break;
      }
      case LayerKind::kPool:
        c.flops = l.in_channels * h * w;
        c.out_height = c.out_width = 1;
        break;
      case LayerKind::kLinear:
        c.flops = linear_flops(l.in_channels * h * w, l.out_channels, mac);
        c.out_height = c.out_width = 1;
        break;
    }
    h = c.out_height;
    w = c.out_width;
    out.push_back(c);
  }
  return out;
}

Flops LayerCostTable::total(std::size_t height, std::size_t width) const {
  Flops t = 0;
  for (const LayerCost& c : evaluate(height, width)) t += c.flops;
  return t;
}

Flops LayerCostTable::first_half(std::size_t height, std::size_t width,
                                 std::size_t split) const {
  check_split(split);
  const auto costs = evaluate(height, width);
  Flops t = 0;
  for (std::size_t i = 0; i < split; ++i) t += costs[i].flops;
  return t;
}

Flops LayerCostTable::second_half(std::size_t height, std::size_t width,
                                  std::size_t split) const {
  check_split(split);
  const auto costs = evaluate(height, width);
  Flops t = 0;
  for (std::size_t i = split; i < costs.size(); ++i) t += costs[i].flops;
  return t;
}

std::vector<std::pair<std::size_t, Flops>> scaling_curve(
    const LayerCostTable& table, std::span<const std::size_t> sides) {
  std::vector<std::pair<std::size_t, Flops>> out;
  for (std::size_t n : sides) {
    if (n == 0) throw std::invalid_argument("scaling_curve: side must be positive");
    out.emplace_back(n, table.total(n, n));
  }
  return out;
}

CostBreakdown breakdown(const LayerCostTable& table, const CostInputs& in) {
  const std::size_t split = in.split == 0 ? table.split() : in.split;
  CostBreakdown cb;
  cb.first_half = table.first_half(in.low_height, in.low_width, split);
  cb.second_half = table.second_half(in.low_height, in.low_width, split);
  cb.hallucinator = in.hallucinator;
  cb.sampler = in.sampler;
  cb.k = in.k;
  cb.crop = in.crop_height > 0 && in.crop_width > 0 ? table.total(in.crop_height, in.crop_width) : 0;
  cb.classifier = in.classifier;
  cb.o_pre = cb.first_half + cb.hallucinator + cb.sampler;
  cb.o_rest = cb.second_half + cb.k * cb.crop + cb.classifier;
  cb.o_full = cb.o_pre + cb.o_rest;
  return cb;
}

void check_complexity(const LayerCostTable& table, std::size_t image_height,
                      std::size_t image_width, const SpatialConfig& cfg) {
  validate(cfg, image_height, image_width);
  const Flops full = table.total(image_height, image_width);
  Flops sampled = table.total(image_height / cfg.d, image_width / cfg.d);
  if (cfg.k > 0) sampled += cfg.k * table.total(cfg.crop_height, cfg.crop_width);
  if (sampled >= full) {
    throw std::invalid_argument(
        "spatial: low-res pass plus " + std::to_string(cfg.k) + " crops costs " +
        std::to_string(sampled) + " FLOPS, not below the full-resolution " +
        std::to_string(full));
  }
}

std::string to_string(FrameStatus s) {
  switch (s) {
    case FrameStatus::kFull: return "FULL";
    case FrameStatus::kPrescan: return "PRESCAN";
    case FrameStatus::kSkip: return "SKIP";
  }
  return "?";
}

Flops charge(FrameStatus status, const CostBreakdown& cb) {
  switch (status) {
    case FrameStatus::kFull: return cb.o_full;
    case FrameStatus::kPrescan: return cb.o_pre;
    case FrameStatus::kSkip: return 0;
  }
  return 0;
}

double efficiency_loss(std::size_t n_full, std::size_t n_pre, std::size_t n_skip,
                       const CostBreakdown& cb, bool normalize) {
  const double raw = static_cast<double>(n_full) * static_cast<double>(cb.o_full) +
                     static_cast<double>(n_pre) * static_cast<double>(cb.o_pre);
  if (!normalize) return raw;
  const std::size_t frames = n_full + n_pre + n_skip;
  if (frames == 0 || cb.o_full == 0) return 0.0;
  return raw / (static_cast<double>(frames) * static_cast<double>(cb.o_full));
}

double tradeoff(double avg_gflops, double top1_percent) {
  if (!(top1_percent > 0.0)) {
    throw std::invalid_argument("tradeoff: top-1 accuracy must be positive");
  }
  return avg_gflops / top1_percent;
}

double speedup(double reference_avg, double model_avg) {
  if (!(model_avg > 0.0)) {
    throw std::invalid_argument("speedup: model average must be positive");
  }
  return reference_avg / model_avg;
}

double RunStats::avg_flops() const {
  return frames ? static_cast<double>(total_flops) / static_cast<double>(frames) : 0.0;
}

namespace {
double percent(std::size_t part, std::size_t whole) {
  return whole ? 100.0 * static_cast<double>(part) / static_cast<double>(whole) : 0.0;
}
}  // namespace

double RunStats::pct_full() const { return percent(n_full, frames); }
double RunStats::pct_pre() const { return percent(n_pre, frames); }
double RunStats::pct_skip() const { return percent(n_skip, frames); }

RunStats aggregate(std::span<const FrameDecision> stream) {
  RunStats s;
  for (const FrameDecision& d : stream) {
    ++s.frames;
    switch (d.status) {
      case FrameStatus::kFull: ++s.n_full; break;
      case FrameStatus::kPrescan: ++s.n_pre; break;
      case FrameStatus::kSkip: ++s.n_skip; break;
    }
    s.total_flops += d.flops;
  }
  return s;
}

RunStats aggregate(std::span<const std::vector<FrameDecision>> streams) {
  if (streams.empty()) throw std::invalid_argument("aggregate: no decision streams");
  RunStats total;
  for (const auto& stream : streams) {
    const RunStats s = aggregate(std::span<const FrameDecision>(stream));
    total.frames += s.frames;
    total.n_full += s.n_full;
    total.n_pre += s.n_pre;
    total.n_skip += s.n_skip;
    total.total_flops += s.total_flops;
  }
  return total;
}

}  // namespace saccade
