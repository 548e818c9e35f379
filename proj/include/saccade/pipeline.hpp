#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "saccade/backbone.hpp"
#include "saccade/classifier.hpp"
#include "saccade/config.hpp"
#include "saccade/cost.hpp"
#include "saccade/data.hpp"
#include "saccade/hallucinator.hpp"
#include "saccade/temporal.hpp"

namespace saccade {

// Every trainable module of the system, dimensioned from one RunConfig.
struct Models {
  explicit Models(const RunConfig& cfg);

  RunConfig config;
  ToyBackbone backbone;
  Hallucinator hallucinator;
  ThreeHeadClassifier classifier;
  Policy policy;

  // Each module draws from its own stream of the config seed.
  void init();
  std::size_t low_height() const { return config.image_height / config.d; }
  std::size_t low_width() const { return config.image_width / config.d; }
  std::size_t tap_height() const { return backbone.tap_extent(low_height()); }
  std::size_t tap_width() const { return backbone.tap_extent(low_width()); }
  std::size_t tap_size() const;

  LayerCostTable cost_table() const;
  CostBreakdown cost() const;  // uses config.k
  CostBreakdown cost(std::size_t k) const;
};

SequenceSpec sequence_spec(const RunConfig& cfg);
std::vector<SyntheticSequence> train_split(const RunConfig& cfg, std::size_t jobs = 1);
std::vector<SyntheticSequence> test_split(const RunConfig& cfg, std::size_t jobs = 1);

// What the pipeline can ask of a frame. Implementations compute lazily.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::size_t frames() const = 0;
  virtual std::size_t label() const = 0;
  // Count-normalised tap attention of the low-resolution view (pre-scan).
  virtual const AttentionMap& attention(std::size_t t) = 0;
  // Pooled low-resolution feature (second half).
  virtual const Tensor& low_feature(std::size_t t) = 0;
  // Pooled features of the top-k crops, k <= crop slots.
  virtual std::vector<Tensor> crop_features(std::size_t t, std::size_t k) = 0;
};

// Runs the backbone on demand from raw frames.
class LiveSource : public FrameSource {
 public:
  LiveSource(Models& models, const SyntheticSequence& seq);
  std::size_t frames() const override { return seq_.frames.size(); }
  std::size_t label() const override { return seq_.label; }
  const AttentionMap& attention(std::size_t t) override;
  const Tensor& low_feature(std::size_t t) override;
  std::vector<Tensor> crop_features(std::size_t t, std::size_t k) override;

 private:
  struct Slot {
    std::optional<Tensor> low;
    std::optional<ToyBackbone::Prescan> prescan;
    std::optional<Tensor> feature;
    std::optional<std::vector<Tensor>> crops;  // all crop slots
  };
  Slot& prescanned(std::size_t t);

  Models& models_;
  const SyntheticSequence& seq_;
  std::vector<Slot> slots_;
};

// Every frame's features, computed once with the (frozen) backbone.
struct FrameCache {
  AttentionMap attention;
  Tensor low_feature;
  std::vector<Tensor> crop_features;  // top crop_slots regions, best first
};
struct SequenceCache {
  std::size_t seq_id = 0;
  std::size_t label = 0;
  std::vector<FrameCache> frames;
};

class CachedSource : public FrameSource {
 public:
  explicit CachedSource(const SequenceCache& cache) : cache_(cache) {}
  std::size_t frames() const override { return cache_.frames.size(); }
  std::size_t label() const override { return cache_.label; }
  const AttentionMap& attention(std::size_t t) override;
  const Tensor& low_feature(std::size_t t) override;
  std::vector<Tensor> crop_features(std::size_t t, std::size_t k) override;

 private:
  const SequenceCache& cache_;
};

std::vector<SequenceCache> precompute(Models& models,
                                      const std::vector<SyntheticSequence>& seqs,
                                      std::size_t jobs = 1);

enum class RunMode { kAlwaysFull, kAdaptive };
RunMode parse_mode(const std::string& name);
std::string to_string(RunMode m);

struct TraceRow {
  std::size_t t = 0;
  FrameStatus status = FrameStatus::kFull;
  std::optional<double> ssim;
  std::optional<std::size_t> m_star;
};

struct SequenceResult {
  std::size_t seq_id = 0;
  std::size_t label = 0;
  std::array<Tensor, kHeads> head_logits;
  Tensor logits;  // mean of the heads
  std::size_t pred = 0;
  std::vector<FrameDecision> decisions;
  std::vector<TraceRow> trace;
};

// Deterministic inference: Gumbel noise off, hard decisions. Classifier
// memories advance only on FULL frames.
SequenceResult run_sequence(Models& models, FrameSource& src, RunMode mode,
                            std::size_t seq_id = 0);

struct EvalReport {
  std::vector<SequenceResult> sequences;
  double top1 = 0.0;  // percent
  double top5 = 0.0;
  RunStats stats;
  Flops o_full = 0;
  double avg_flops() const { return stats.avg_flops(); }
  // Against an always-full run of the same configuration.
  double speedup() const;
  double tradeoff() const;  // average GFLOPS per top-1 point
};

// True when the label is among the k largest logits (ties broken toward the
// smaller index, as in a stable sort).
bool in_top_k(const Tensor& logits, std::size_t label, std::size_t k);
EvalReport summarize(std::vector<SequenceResult> results, Flops o_full);

EvalReport evaluate(Models& models, const std::vector<SequenceCache>& data,
                    RunMode mode, std::size_t jobs = 1);
EvalReport evaluate(Models& models, const std::vector<SyntheticSequence>& data,
                    RunMode mode, std::size_t jobs = 1);

// CSV text for the evaluation report and per-frame trace.
std::string report_csv(const EvalReport& r);
std::string trace_csv(const EvalReport& r);
std::string summary_csv(const EvalReport& r);

// Training phases. Each returns one loss curve per term, indexed by epoch.
using LossCurves = std::map<std::string, std::vector<double>>;

// Backbone plus throwaway linear probes on single low-resolution frames and
// on crops centred near the true blob.
LossCurves train_features(Models& models, const std::vector<SyntheticSequence>& train);
// Hallucinator on frozen-backbone attention streams.
LossCurves train_hallucinator_phase(Models& models, const std::vector<SequenceCache>& train);
// Classifier on frozen features with every frame FULL.
LossCurves train_spatial(Models& models, const std::vector<SequenceCache>& train);
// Policy and classifier jointly under L_class + theta_e * L_e, with hard
// Gumbel samples (noise on) and a straight-through FULL gate on the memory.
LossCurves train_temporal(Models& models, const std::vector<SequenceCache>& train);

// "epoch,term,value" rows, terms in name order within each epoch.
std::string loss_csv(const LossCurves& curves);

}  // namespace saccade
