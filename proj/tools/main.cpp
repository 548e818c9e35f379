#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "saccade/checkpoint.hpp"
#include "saccade/config.hpp"
#include "saccade/cost.hpp"
#include "saccade/data.hpp"
#include "saccade/fixture.hpp"
#include "saccade/gradsuite.hpp"
#include "saccade/pipeline.hpp"

namespace fs = std::filesystem;
using namespace saccade;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

// A later phase was asked for before its inputs exist.
class PhaseOrderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::string out = "saccade_out";
  std::size_t jobs = 1;
};

RunConfig load_config(const Globals& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig{} : RunConfig::from_file(g.config_path);
  std::string text;
  for (const std::string& kv : g.overrides) text += kv + "\n";
  cfg.merge_text(text, "--set");
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

fs::path prepare_out(const Globals& g, const RunConfig& cfg) {
  const fs::path out(g.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw std::runtime_error("cannot create " + out.string() + ": " + ec.message());
  write_text(out / "config.txt", cfg.to_text());
  return out;
}

fs::path require(const fs::path& dir, const std::string& file, const std::string& needed_by,
                 const std::string& phase) {
  const fs::path p = dir / file;
  if (!fs::exists(p)) {
    throw PhaseOrderError(needed_by + " needs " + p.string() + "; run `train --phase " +
                          phase + "` first");
  }
  return p;
}

std::string zero_pad(std::size_t v, int width) {
  std::string s = std::to_string(v);
  return std::string(s.size() < static_cast<std::size_t>(width) ? width - s.size() : 0, '0') + s;
}

int cmd_gen_fixtures(const Globals& g, std::optional<std::size_t> count) {
  const RunConfig cfg = load_config(g);
  const fs::path out = prepare_out(g, cfg);
  const Models shape(cfg);
  const std::size_t n = count.value_or(cfg.test_sequences);
  const auto seqs = gen_dataset(sequence_spec(cfg), n, mix_seed(cfg.seed, "data.fixtures"), 0, g.jobs);

  BlobAttentionSpec blob;
  blob.frames = cfg.frames;
  blob.channels = shape.backbone.config().tap;
  blob.height = shape.tap_height();
  blob.width = shape.tap_width();

  std::vector<std::string> rows(n);
  parallel_for(n, g.jobs, [&](std::size_t i) {
    const SyntheticSequence& s = seqs[i];
    const std::string id = zero_pad(s.seq_id, 5);
    write_fixture(out / ("video_" + id + ".vids"), stack_frames(s.frames), kVideoMagic);
    Rng rng(mix_seed(s.seed, "attention"));
    std::vector<Tensor> maps;
    for (AttentionMap& a : translating_blob_attention(blob, rng)) maps.push_back(std::move(a.values));
    write_fixture(out / ("attention_" + id + ".attn"), stack_frames(maps), kAttentionMagic);
    const std::string tail = std::to_string(s.seq_id) + "," + std::to_string(s.label) + "," +
                             std::to_string(s.seed) + "\n";
    rows[i] = "video_" + id + ".vids,video," + tail + "attention_" + id + ".attn,attention," + tail;
  });
  std::string manifest = "file,kind,seq_id,label,seed\n";
  for (const std::string& r : rows) manifest += r;
  write_text(out / "manifest.csv", manifest);
  spdlog::info("wrote {} sequences to {}", n, out.string());
  return kOk;
}

int cmd_train(const Globals& g, const std::string& phase, std::string ckpt_dir) {
  const RunConfig cfg = load_config(g);
  if (ckpt_dir.empty()) ckpt_dir = g.out;
  const fs::path in(ckpt_dir);
  Models models(cfg);
  models.init();

  // Check prerequisites before touching the output directory.
  const bool needs_backbone = phase != "features";
  const bool needs_rest = phase == "temporal";
  fs::path backbone_p, hall_p, cls_p;
  if (needs_backbone) backbone_p = require(in, "backbone.ckpt", "phase " + phase, "features");
  if (needs_rest) {
    hall_p = require(in, "hallucinator.ckpt", "phase temporal", "hallucinator");
    cls_p = require(in, "classifier.ckpt", "phase temporal", "spatial");
  }
  if (needs_backbone) models.backbone.load(backbone_p);
  if (needs_rest) {
    models.hallucinator.load(hall_p);
    models.classifier.load(cls_p);
  }
  const fs::path out = prepare_out(g, cfg);

  const auto train = train_split(cfg, g.jobs);
  LossCurves curves;
  if (phase == "features") {
    curves = train_features(models, train);
    models.backbone.save(out / "backbone.ckpt");
  } else {
    const auto cache = precompute(models, train, g.jobs);
    if (phase == "hallucinator") {
      curves = train_hallucinator_phase(models, cache);
      models.hallucinator.save(out / "hallucinator.ckpt");
    } else if (phase == "spatial") {
      curves = train_spatial(models, cache);
      models.classifier.save(out / "classifier.ckpt");
    } else {
      curves = train_temporal(models, cache);
      models.policy.save(out / "policy.ckpt");
      models.classifier.save(out / "classifier.ckpt");
    }
  }
  write_text(out / "loss.csv", loss_csv(curves));
  for (const auto& [term, values] : curves) {
    if (!values.empty()) spdlog::info("{} {}: final {}", phase, term, values.back());
  }
  return kOk;
}

int cmd_simulate(const Globals& g, const std::string& mode_name, std::string ckpt_dir) {
  const RunConfig cfg = load_config(g);
  const RunMode mode = parse_mode(mode_name);
  if (ckpt_dir.empty()) ckpt_dir = g.out;
  const fs::path in(ckpt_dir);
  Models models(cfg);
  models.init();
  const std::string who = "simulate --mode " + mode_name;
  const fs::path b = require(in, "backbone.ckpt", who, "features");
  const fs::path c = require(in, "classifier.ckpt", who, "spatial");
  fs::path h, p;
  if (mode == RunMode::kAdaptive) {
    h = require(in, "hallucinator.ckpt", who, "hallucinator");
    p = require(in, "policy.ckpt", who, "temporal");
  }
  models.backbone.load(b);
  models.classifier.load(c);
  if (mode == RunMode::kAdaptive) {
    models.hallucinator.load(h);
    models.policy.load(p);
  }
  const fs::path out = prepare_out(g, cfg);
  const EvalReport r = evaluate(models, test_split(cfg, g.jobs), mode, g.jobs);
  write_text(out / "report.csv", report_csv(r));
  write_text(out / "trace.csv", trace_csv(r));
  write_text(out / "summary.csv", summary_csv(r));
  spdlog::info("{}: top1 {}%, avg GFLOPS/frame {}, speed-up {}", to_string(mode), r.top1,
               r.avg_flops() / 1e9, r.speedup());
  return kOk;
}

struct CostFlags {
  std::optional<double> gflops, top1, ref_avg, model_avg;
};

int cmd_cost_report(const Globals& g, const CostFlags& f) {
  if (f.gflops.has_value() != f.top1.has_value()) {
    throw CLI::ValidationError("--gflops and --top1 must be given together");
  }
  if (f.ref_avg.has_value() != f.model_avg.has_value()) {
    throw CLI::ValidationError("--ref-avg and --model-avg must be given together");
  }
  const RunConfig cfg = load_config(g);
  const fs::path out = prepare_out(g, cfg);
  const Models models(cfg);
  const CostBreakdown cb = models.cost();

  std::ostringstream s;
  s << "metric,value\n";
  auto row = [&s](const std::string& name, const std::string& v) { s << name << ',' << v << '\n'; };
  auto flops = [&row](const std::string& name, Flops v) { row(name, std::to_string(v)); };
  flops("first_half", cb.first_half);
  flops("hallucinator", cb.hallucinator);
  flops("sampler", cb.sampler);
  flops("second_half", cb.second_half);
  flops("crop", cb.crop);
  flops("k", cb.k);
  flops("classifier", cb.classifier);
  flops("o_pre", cb.o_pre);
  flops("o_rest", cb.o_rest);
  flops("o_full", cb.o_full);
  row("identity_o_full_minus_o_pre_minus_o_rest",
      std::to_string(static_cast<long long>(cb.o_full) - static_cast<long long>(cb.o_pre) -
                     static_cast<long long>(cb.o_rest)));
  static constexpr std::size_t kSides[] = {32, 48, 64, 96, 112, 160, 224};
  for (const auto& [side, v] : scaling_curve(models.cost_table(), kSides)) {
    flops("scaling_" + std::to_string(side), v);
  }
  if (f.gflops) row("tradeoff", format_double(tradeoff(*f.gflops, *f.top1)));
  if (f.ref_avg) row("speedup", format_double(speedup(*f.ref_avg, *f.model_avg)));

  write_text(out / "cost_report.csv", s.str());
  std::cout << s.str();
  return kOk;
}

int cmd_gradcheck(const Globals& g, const std::string& corrupt) {
  const RunConfig cfg = load_config(g);
  const fs::path out = prepare_out(g, cfg);
  const auto rows = run_gradient_suite(cfg.seed, corrupt);
  std::ostringstream s;
  s << "op,max_rel_err,threshold,verdict\n";
  bool ok = true;
  for (const GradSuiteRow& r : rows) {
    s << r.op << ',' << format_double(r.max_rel_err) << ',' << format_double(r.threshold) << ','
      << (r.pass ? "PASS" : "FAIL") << '\n';
    ok = ok && r.pass;
  }
  write_text(out / "gradcheck.csv", s.str());
  std::cout << s.str();
  if (!ok) spdlog::error("gradient check failed");
  return ok ? kOk : kFailure;
}

bool setup_logging() {
  auto logger = spdlog::stderr_color_mt("saccade");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  const char* env = std::getenv("SACCADE_LOG");
  if (env == nullptr || *env == '\0') return true;
  const std::string v(env);
  if (v == "error") spdlog::set_level(spdlog::level::err);
  else if (v == "warn") spdlog::set_level(spdlog::level::warn);
  else if (v == "info") spdlog::set_level(spdlog::level::info);
  else if (v == "debug") spdlog::set_level(spdlog::level::debug);
  else {
    std::cerr << "SACCADE_LOG must be one of error, warn, info, debug (got '" << v << "')\n";
    return false;
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  if (!setup_logging()) return kUsage;

  CLI::App app{"Adaptive spatio-temporal sampling for video recognition"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config_path, "key=value config file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
  app.add_option("--set", g.overrides, "extra KEY=VALUE config lines (repeatable)");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--jobs", g.jobs, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  auto* gen = app.add_subcommand("gen-fixtures", "write synthetic video and attention fixtures");
  std::optional<std::size_t> count;
  gen->add_option("--count", count, "number of sequences (default: test_sequences)");

  auto* train = app.add_subcommand("train", "run one training phase");
  std::string phase, train_ckpt;
  train->add_option("--phase", phase, "training phase")
      ->required()
      ->check(CLI::IsMember({"features", "hallucinator", "spatial", "temporal"}));
  train->add_option("--checkpoints", train_ckpt, "directory with earlier-phase checkpoints (default: --out)");

  auto* sim = app.add_subcommand("simulate", "evaluate on the test split");
  std::string mode = "adaptive", sim_ckpt;
  sim->add_option("--mode", mode, "inference mode")
      ->check(CLI::IsMember({"always_full", "adaptive"}))
      ->capture_default_str();
  sim->add_option("--checkpoints", sim_ckpt, "checkpoint directory (default: --out)");

  auto* cost = app.add_subcommand("cost-report", "per-frame cost breakdown and derived metrics");
  CostFlags cf;
  cost->add_option("--gflops", cf.gflops, "average GFLOPS for the trade-off row");
  cost->add_option("--top1", cf.top1, "top-1 percent for the trade-off row");
  cost->add_option("--ref-avg", cf.ref_avg, "reference average for the speed-up row");
  cost->add_option("--model-avg", cf.model_avg, "model average for the speed-up row");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  std::string corrupt;
  grad->add_option("--corrupt", corrupt)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*gen) return cmd_gen_fixtures(g, count);
    if (*train) return cmd_train(g, phase, train_ckpt);
    if (*sim) return cmd_simulate(g, mode, sim_ckpt);
    if (*cost) return cmd_cost_report(g, cf);
    if (*grad) return cmd_gradcheck(g, corrupt);
  } catch (const CLI::ValidationError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kUsage;
  } catch (const PhaseOrderError& e) {
    spdlog::error("phase order: {}", e.what());
    return kUsage;
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kUsage;
}
