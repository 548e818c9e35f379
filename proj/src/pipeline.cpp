#include "saccade/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "saccade/optim.hpp"

namespace saccade {

namespace {

HallucinatorConfig hallucinator_config(const RunConfig& cfg, const ToyBackbone& b) {
  HallucinatorConfig h;
  h.channels = b.config().tap;
  h.hidden = cfg.hallucinator_hidden;
  h.height = b.tap_extent(cfg.image_height / cfg.d);
  h.width = b.tap_extent(cfg.image_width / cfg.d);
  return h;
}

BackboneConfig backbone_config(const RunConfig& cfg) {
  BackboneConfig b;
  b.extent = cfg.attention_extent;
  return b;
}

Tensor flat(const Tensor& t) { return t.reshaped({t.size()}); }

SgdOptions sgd_options(const RunConfig& cfg) {
  SgdOptions o;
  o.learning_rate = cfg.learning_rate;
  o.momentum = cfg.momentum;
  o.clip_norm = cfg.clip_norm;
  o.decay_epochs = cfg.lr_decay_epochs;
  o.decay_factor = cfg.lr_decay_factor;
  return o;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

// One pass over `order` in minibatches: per-item tapes, gradients summed in
// item order and averaged, then one optimiser step. Returns the mean of each
// named loss term over the epoch.
struct Term {
  Var value;
  double weight = 1.0;  // in the optimised sum; curves record the raw value
};
using Terms = std::map<std::string, Term>;
using ItemLoss = std::function<Terms(Tape&, std::size_t)>;

std::map<std::string, double> run_epoch(SgdMomentum& opt, const ParameterRefs& frozen,
                                        const std::vector<std::size_t>& order,
                                        std::size_t batch, const ItemLoss& item) {
  const ParameterRefs& params = opt.parameters();
  std::map<std::string, double> totals;
  for (std::size_t start = 0; start < order.size(); start += batch) {
    const std::size_t end = std::min(order.size(), start + batch);
    std::vector<Tensor> sum;
    for (std::size_t j = start; j < end; ++j) {
      Tape tape;
      tape.freeze(frozen);
      const auto terms = item(tape, order[j]);
      Var loss;
      for (const auto& [name, term] : terms) {
        totals[name] += term.value.value()[0];
        Var w = ops::scale(term.value, term.weight);
        loss = loss.valid() ? ops::add(loss, w) : w;
      }
      tape.backward(loss);
      std::vector<Tensor> g = tape.grads(params);
      if (sum.empty()) {
        sum = std::move(g);
      } else {
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += g[i];
      }
    }
    for (Tensor& g : sum) g *= 1.0 / static_cast<double>(end - start);
    opt.step(sum);
  }
  for (auto& [name, v] : totals) v /= static_cast<double>(order.size());
  return totals;
}

void append_epoch(LossCurves& curves, const std::map<std::string, double>& epoch) {
  for (const auto& [name, v] : epoch) curves[name].push_back(v);
}

}  // namespace

Models::Models(const RunConfig& cfg)
    : config(cfg),
      backbone(backbone_config(cfg)),
      hallucinator(hallucinator_config(cfg, backbone)),
      classifier(ClassifierConfig{backbone.feature_dim(), cfg.crop_slots,
                                  cfg.classifier_hidden, cfg.classes}),
      policy(PolicyConfig{0, 0, cfg.max_skip, cfg.policy_hidden, cfg.policy_layers}) {
  config.validate();
  const std::size_t tap = tap_size();
  policy = Policy(PolicyConfig{tap, tap, cfg.max_skip, cfg.policy_hidden, cfg.policy_layers});
}

void Models::init() {
  const std::uint64_t s = config.seed;
  Rng b(mix_seed(s, "init.backbone"));
  backbone.init(b);
  Rng h(mix_seed(s, "init.hallucinator"));
  hallucinator.init(h);
  Rng c(mix_seed(s, "init.classifier"));
  classifier.init(c);
  Rng p(mix_seed(s, "init.policy"));
  policy.init(p);
}

std::size_t Models::tap_size() const {
  return backbone.config().tap * tap_height() * tap_width();
}

LayerCostTable Models::cost_table() const {
  if (!config.cost_table.empty()) {
    return LayerCostTable::load(config.cost_table, config.flops_per_mac);
  }
  return backbone.cost_table(config.flops_per_mac);
}

CostBreakdown Models::cost() const { return cost(config.k); }

CostBreakdown Models::cost(std::size_t k) const {
  CostInputs in;
  in.low_height = low_height();
  in.low_width = low_width();
  in.split = config.lambda;
  in.hallucinator = hallucinator.flops_per_step(config.flops_per_mac);
  in.sampler = policy.flops_per_step(config.flops_per_mac);
  in.k = k;
  in.crop_height = config.crop_height;
  in.crop_width = config.crop_width;
  in.classifier = classifier.flops_per_step(config.flops_per_mac);
  return breakdown(cost_table(), in);
}

SequenceSpec sequence_spec(const RunConfig& cfg) {
  return {cfg.frames, cfg.image_height, cfg.image_width, cfg.classes};
}

std::vector<SyntheticSequence> train_split(const RunConfig& cfg, std::size_t jobs) {
  return gen_dataset(sequence_spec(cfg), cfg.train_sequences, mix_seed(cfg.seed, "data.train"),
                     0, jobs);
}

std::vector<SyntheticSequence> test_split(const RunConfig& cfg, std::size_t jobs) {
  return gen_dataset(sequence_spec(cfg), cfg.test_sequences, mix_seed(cfg.seed, "data.test"),
                     0, jobs);
}

// ---------------------------------------------------------------------------
// Frame sources

LiveSource::LiveSource(Models& models, const SyntheticSequence& seq)
    : models_(models), seq_(seq), slots_(seq.frames.size()) {}

LiveSource::Slot& LiveSource::prescanned(std::size_t t) {
  Slot& s = slots_.at(t);
  if (!s.prescan) {
    s.low = downsample(seq_.frames[t], models_.config.d);
    s.prescan = models_.backbone.prescan(*s.low);
  }
  return s;
}

const AttentionMap& LiveSource::attention(std::size_t t) {
  return prescanned(t).prescan->attention;
}

const Tensor& LiveSource::low_feature(std::size_t t) {
  Slot& s = prescanned(t);
  if (!s.feature) s.feature = models_.backbone.finish(s.prescan->mid);
  return *s.feature;
}

std::vector<Tensor> LiveSource::crop_features(std::size_t t, std::size_t k) {
  Slot& s = prescanned(t);
  if (!s.crops) {
    SpatialConfig sc = models_.config.spatial();
    sc.k = models_.config.crop_slots;
    const FrameViews v = sample_frame(seq_.frames[t], *s.low, s.prescan->attention, sc);
    std::vector<Tensor> feats;
    for (const Tensor& c : v.crops) feats.push_back(models_.backbone.encode(c));
    s.crops = std::move(feats);
  }
  const std::size_t n = std::min(k, s.crops->size());
  return {s.crops->begin(), s.crops->begin() + static_cast<std::ptrdiff_t>(n)};
}

const AttentionMap& CachedSource::attention(std::size_t t) {
  return cache_.frames.at(t).attention;
}

const Tensor& CachedSource::low_feature(std::size_t t) {
  return cache_.frames.at(t).low_feature;
}

std::vector<Tensor> CachedSource::crop_features(std::size_t t, std::size_t k) {
  const auto& c = cache_.frames.at(t).crop_features;
  const std::size_t n = std::min(k, c.size());
  return {c.begin(), c.begin() + static_cast<std::ptrdiff_t>(n)};
}

std::vector<SequenceCache> precompute(Models& models,
                                      const std::vector<SyntheticSequence>& seqs,
                                      std::size_t jobs) {
  std::vector<SequenceCache> out(seqs.size());
  parallel_for(seqs.size(), jobs, [&](std::size_t i) {
    LiveSource src(models, seqs[i]);
    SequenceCache& c = out[i];
    c.seq_id = seqs[i].seq_id;
    c.label = seqs[i].label;
    for (std::size_t t = 0; t < src.frames(); ++t) {
      c.frames.push_back({src.attention(t), src.low_feature(t),
                          src.crop_features(t, models.config.crop_slots)});
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Inference

RunMode parse_mode(const std::string& name) {
  if (name == "always_full") return RunMode::kAlwaysFull;
  if (name == "adaptive") return RunMode::kAdaptive;
  throw std::invalid_argument("unknown mode '" + name + "' (always_full | adaptive)");
}

std::string to_string(RunMode m) {
  return m == RunMode::kAlwaysFull ? "always_full" : "adaptive";
}

SequenceResult run_sequence(Models& models, FrameSource& src, RunMode mode,
                            std::size_t seq_id) {
  const RunConfig& cfg = models.config;
  const CostBreakdown cb = models.cost();
  const GumbelOptions opt{cfg.tau, false, true};

  SequenceResult r;
  r.seq_id = seq_id;
  r.label = src.label();
  ThreeHeadClassifier::State memory = models.classifier.zero_state();
  ConvLstmState hall_state = models.hallucinator.zero_state();
  std::vector<Tensor> policy_state = models.policy.zero_state();
  AttentionMap predicted;
  SkipSchedule schedule(cfg.max_skip);

  for (std::size_t t = 0; t < src.frames(); ++t) {
    TraceRow row{t, FrameStatus::kFull, std::nullopt, std::nullopt};
    if (mode == RunMode::kAdaptive) {
      row.status = schedule.next([&] {
        const AttentionMap& a = src.attention(t);
        const double s = ssim(predicted, a);
        Policy::Decision d = models.policy.step(flat(a.values), flat(predicted.values), s,
                                                policy_state, opt, nullptr);
        policy_state = std::move(d.state);
        row.ssim = s;
        row.m_star = d.m_star;
        return d.m_star;
      });
      if (row.status != FrameStatus::kSkip) {
        auto step = models.hallucinator.step(src.attention(t), hall_state);
        predicted = std::move(step.prediction);
        hall_state = std::move(step.state);
      }
    }
    if (row.status == FrameStatus::kFull) {
      memory = models.classifier.update(
          src.low_feature(t), models.classifier.pack_crops(src.crop_features(t, cfg.k)),
          memory);
    }
    const std::size_t source =
        mode == RunMode::kAdaptive ? schedule.last_full() : t;
    r.decisions.push_back({row.status, charge(row.status, cb), source});
    r.trace.push_back(row);
  }
  r.head_logits = models.classifier.head_logits(memory);
  r.logits = mean_logits(r.head_logits);
  r.pred = decide(r.logits);
  return r;
}

bool in_top_k(const Tensor& logits, std::size_t label, std::size_t k) {
  if (label >= logits.size()) return false;
  std::size_t better = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (logits[i] > logits[label] || (logits[i] == logits[label] && i < label)) ++better;
  }
  return better < k;
}

double EvalReport::speedup() const {
  return saccade::speedup(static_cast<double>(o_full), avg_flops());
}

double EvalReport::tradeoff() const { return saccade::tradeoff(avg_flops() / 1e9, top1); }

EvalReport summarize(std::vector<SequenceResult> results, Flops o_full) {
  EvalReport rep;
  rep.o_full = o_full;
  rep.sequences = std::move(results);
  if (rep.sequences.empty()) return rep;
  std::size_t hit1 = 0, hit5 = 0;
  std::vector<std::vector<FrameDecision>> streams;
  for (const SequenceResult& s : rep.sequences) {
    hit1 += in_top_k(s.logits, s.label, 1);
    hit5 += in_top_k(s.logits, s.label, 5);
    streams.push_back(s.decisions);
  }
  const double n = static_cast<double>(rep.sequences.size());
  rep.top1 = 100.0 * static_cast<double>(hit1) / n;
  rep.top5 = 100.0 * static_cast<double>(hit5) / n;
  rep.stats = aggregate(streams);
  return rep;
}

EvalReport evaluate(Models& models, const std::vector<SequenceCache>& data, RunMode mode,
                    std::size_t jobs) {
  std::vector<SequenceResult> out(data.size());
  parallel_for(data.size(), jobs, [&](std::size_t i) {
    CachedSource src(data[i]);
    out[i] = run_sequence(models, src, mode, data[i].seq_id);
  });
  return summarize(std::move(out), models.cost().o_full);
}

EvalReport evaluate(Models& models, const std::vector<SyntheticSequence>& data,
                    RunMode mode, std::size_t jobs) {
  std::vector<SequenceResult> out(data.size());
  parallel_for(data.size(), jobs, [&](std::size_t i) {
    LiveSource src(models, data[i]);
    out[i] = run_sequence(models, src, mode, data[i].seq_id);
  });
  return summarize(std::move(out), models.cost().o_full);
}

std::string report_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "seq_id,frames,n_full,n_pre,n_skip,flops_total,pred,label,correct\n";
  for (const SequenceResult& s : r.sequences) {
    const RunStats st = aggregate(s.decisions);
    out << s.seq_id << ',' << st.frames << ',' << st.n_full << ',' << st.n_pre << ','
        << st.n_skip << ',' << st.total_flops << ',' << s.pred << ',' << s.label << ','
        << (s.pred == s.label ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string trace_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "seq,t,status,ssim,m_star\n";
  for (const SequenceResult& s : r.sequences) {
    for (const TraceRow& row : s.trace) {
      out << s.seq_id << ',' << row.t << ',' << to_string(row.status) << ','
          << (row.ssim ? format_double(*row.ssim) : "") << ','
          << (row.m_star ? std::to_string(*row.m_star) : "") << '\n';
    }
  }
  return out.str();
}

std::string summary_csv(const EvalReport& r) {
  std::ostringstream out;
  const RunStats& st = r.stats;
  out << "metric,value\n"
      << "sequences," << r.sequences.size() << '\n'
      << "frames," << st.frames << '\n'
      << "top1," << format_double(r.top1) << '\n'
      << "top5," << format_double(r.top5) << '\n'
      << "n_full," << st.n_full << '\n'
      << "n_pre," << st.n_pre << '\n'
      << "n_skip," << st.n_skip << '\n'
      << "total_flops," << st.total_flops << '\n';
  if (st.frames > 0) {
    out << "avg_flops," << format_double(st.avg_flops()) << '\n'
        << "pct_full," << format_double(st.pct_full()) << '\n'
        << "pct_pre," << format_double(st.pct_pre()) << '\n'
        << "pct_skip," << format_double(st.pct_skip()) << '\n'
        << "o_full," << r.o_full << '\n'
        << "speedup," << format_double(r.speedup()) << '\n';
    if (r.top1 > 0) out << "tradeoff," << format_double(r.tradeoff()) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Training

LossCurves train_features(Models& models, const std::vector<SyntheticSequence>& train) {
  const RunConfig& cfg = models.config;
  if (train.empty()) throw std::invalid_argument("train_features: empty dataset");
  const std::size_t F = models.backbone.feature_dim();
  Linear probe_low("probe.low", F, cfg.classes);
  Linear probe_crop("probe.crop", F, cfg.classes);
  Rng init(mix_seed(cfg.seed, "init.probes"));
  probe_low.init(init);
  probe_crop.init(init);

  ParameterRefs params = models.backbone.parameters();
  append(params, probe_low.parameters());
  append(params, probe_crop.parameters());
  SgdMomentum opt(params, sgd_options(cfg));
  Rng rng(mix_seed(cfg.seed, "train.features"));
  LossCurves curves;

  for (std::size_t epoch = 0; epoch < cfg.epochs_features; ++epoch) {
    opt.begin_epoch(epoch);
    const auto order = shuffled(train.size(), rng);
    const std::uint64_t epoch_seed = rng();
    auto item = [&](Tape& tape, std::size_t i) {
      const SyntheticSequence& s = train[i];
      Rng r(mix_seed(epoch_seed, i));
      std::uniform_int_distribution<std::size_t> pick(0, s.frames.size() - 1);
      const std::size_t t = pick(r);
      const Tensor& image = s.frames[t];
      Var low = tape.constant(downsample(image, cfg.d));
      Var f_low = models.backbone.encode(tape, low);

      // A crop near the blob, as a well-placed attention crop would be.
      std::uniform_real_distribution<double> jitter(-3.0, 3.0);
      auto place = [](double centre, std::size_t size, std::size_t extent) {
        const double top = std::floor(centre - static_cast<double>(size) / 2.0 + 0.5);
        const double hi = static_cast<double>(extent - size);
        return static_cast<std::size_t>(std::clamp(top, 0.0, hi));
      };
      const PixelBox box{place(s.centers[t][0] + jitter(r), cfg.crop_height, image.dim(1)),
                         place(s.centers[t][1] + jitter(r), cfg.crop_width, image.dim(2)),
                         cfg.crop_height, cfg.crop_width};
      Var f_crop = models.backbone.encode(tape, tape.constant(crop(image, box)));
      return Terms{
          {"probe_low", {ops::cross_entropy(probe_low.forward(tape, f_low), s.label)}},
          {"probe_crop", {ops::cross_entropy(probe_crop.forward(tape, f_crop), s.label)}}};
    };
    append_epoch(curves, run_epoch(opt, {}, order, cfg.batch_size, item));
  }
  return curves;
}

LossCurves train_hallucinator_phase(Models& models, const std::vector<SequenceCache>& train) {
  const RunConfig& cfg = models.config;
  if (train.empty()) throw std::invalid_argument("train_hallucinator: empty dataset");
  std::vector<AttentionSequence> data;
  for (const SequenceCache& c : train) {
    AttentionSequence s;
    for (const FrameCache& f : c.frames) s.push_back(f.attention);
    data.push_back(std::move(s));
  }
  Rng rng(mix_seed(cfg.seed, "train.hallucinator"));
  const HallucinatorTraining h = train_hallucinator(
      models.hallucinator, data, cfg.epochs_hallucinator, sgd_options(cfg), rng);
  return {{"belief", h.epoch_loss}};
}

LossCurves train_spatial(Models& models, const std::vector<SequenceCache>& train) {
  const RunConfig& cfg = models.config;
  if (train.empty()) throw std::invalid_argument("train_spatial: empty dataset");
  ThreeHeadClassifier& cls = models.classifier;
  SgdMomentum opt(cls.parameters(), sgd_options(cfg));
  Rng rng(mix_seed(cfg.seed, "train.spatial"));
  LossCurves curves;

  for (std::size_t epoch = 0; epoch < cfg.epochs_spatial; ++epoch) {
    opt.begin_epoch(epoch);
    const auto order = shuffled(train.size(), rng);
    auto item = [&](Tape& tape, std::size_t i) {
      const SequenceCache& s = train[i];
      ThreeHeadClassifier::StateVars state;
      for (std::size_t h = 0; h < kHeads; ++h) state[h] = tape.constant(Tensor({cls.config().hidden}));
      Var loss;
      for (std::size_t t = 0; t < s.frames.size(); ++t) {
        const FrameCache& f = s.frames[t];
        std::vector<Tensor> crops(f.crop_features.begin(),
                                  f.crop_features.begin() +
                                      static_cast<std::ptrdiff_t>(std::min(cfg.k, f.crop_features.size())));
        state = cls.update(tape, tape.constant(f.low_feature),
                           tape.constant(cls.pack_crops(crops)), state);
        Var l = class_loss(cls.head_logits(tape, state), s.label, cfg.theta_h);
        loss = loss.valid() ? ops::add(loss, l) : l;
      }
      return Terms{{"class", {ops::scale(loss, 1.0 / static_cast<double>(s.frames.size()))}}};
    };
    append_epoch(curves, run_epoch(opt, {}, order, cfg.batch_size, item));
  }
  return curves;
}

LossCurves train_temporal(Models& models, const std::vector<SequenceCache>& train) {
  const RunConfig& cfg = models.config;
  if (train.empty()) throw std::invalid_argument("train_temporal: empty dataset");
  ThreeHeadClassifier& cls = models.classifier;
  Policy& policy = models.policy;
  ParameterRefs params = cls.parameters();
  append(params, policy.parameters());
  SgdMomentum opt(params, sgd_options(cfg));
  Rng rng(mix_seed(cfg.seed, "train.temporal"));
  const CostBreakdown cb = models.cost();
  const double o_full = static_cast<double>(cb.o_full);
  const double o_pre = static_cast<double>(cb.o_pre);
  const GumbelOptions gopt{cfg.tau, true, true};
  LossCurves curves;

  for (std::size_t epoch = 0; epoch < cfg.epochs_temporal; ++epoch) {
    opt.begin_epoch(epoch);
    const auto order = shuffled(train.size(), rng);
    const std::uint64_t epoch_seed = rng();
    auto item = [&](Tape& tape, std::size_t i) {
      const SequenceCache& s = train[i];
      const std::size_t T = s.frames.size();
      Rng r(mix_seed(epoch_seed, i));
      ThreeHeadClassifier::StateVars memory;
      for (std::size_t h = 0; h < kHeads; ++h) {
        memory[h] = tape.constant(Tensor({cls.config().hidden}));
      }
      std::vector<Var> pstate;
      for (const Tensor& z : policy.zero_state()) pstate.push_back(tape.constant(z));
      ConvLstmState hstate = models.hallucinator.zero_state();
      AttentionMap predicted;

      auto candidate = [&](const FrameCache& f) {
        const std::size_t n = std::min(cfg.k, f.crop_features.size());
        std::vector<Tensor> crops(f.crop_features.begin(),
                                  f.crop_features.begin() + static_cast<std::ptrdiff_t>(n));
        return cls.update(tape, tape.constant(f.low_feature),
                          tape.constant(cls.pack_crops(crops)), memory);
      };
      auto hallucinate = [&](const AttentionMap& a) {
        auto step = models.hallucinator.step(a, hstate);
        predicted = std::move(step.prediction);
        hstate = std::move(step.state);
      };

      // Warm-up frame: FULL at full price.
      Var flops = tape.constant(Tensor({1}, o_full));
      Var loss_class;
      std::size_t remaining = 0;
      for (std::size_t t = 0; t < T; ++t) {
        const FrameCache& f = s.frames[t];
        if (t == 0) {
          memory = candidate(f);
          hallucinate(f.attention);
        } else if (remaining > 0) {
          --remaining;
        } else {
          const double sim = ssim(predicted, f.attention);
          Policy::Output o = policy.forward(
              tape, tape.constant(flat(f.attention.values)),
              tape.constant(flat(predicted.values)), tape.constant(Tensor({1}, sim)), pstate,
              gopt, &r);
          pstate = o.state;
          const std::size_t m = decide(o.r.value());
          Var gate = ops::slice(o.r, 0, {1});
          const auto next = candidate(f);
          for (std::size_t h = 0; h < kHeads; ++h) {
            memory[h] = ops::blend(gate, next[h], memory[h]);
          }
          // r0 * O_full + (1 - r0) * O_pre
          flops = ops::add(flops, ops::add_scalar(ops::scale(gate, o_full - o_pre), o_pre));
          remaining = m > 0 ? m - 1 : 0;
          hallucinate(f.attention);
        }
        Var l = class_loss(cls.head_logits(tape, memory), s.label, cfg.theta_h);
        loss_class = loss_class.valid() ? ops::add(loss_class, l) : l;
      }
      loss_class = ops::scale(loss_class, 1.0 / static_cast<double>(T));
      const double norm = cfg.normalize_efficiency_loss ? static_cast<double>(T) * o_full : 1e9;
      Var loss_e = ops::scale(flops, 1.0 / norm);
      return Terms{{"class", {loss_class}}, {"efficiency", {loss_e, cfg.theta_e}}};
    };
    append_epoch(curves, run_epoch(opt, {}, order, cfg.batch_size, item));
  }
  return curves;
}

std::string loss_csv(const LossCurves& curves) {
  std::ostringstream out;
  out << "epoch,term,value\n";
  std::size_t epochs = 0;
  for (const auto& [name, v] : curves) epochs = std::max(epochs, v.size());
  for (std::size_t e = 0; e < epochs; ++e) {
    for (const auto& [name, v] : curves) {
      if (e < v.size()) out << e << ',' << name << ',' << format_double(v[e]) << '\n';
    }
  }
  return out.str();
}

}  // namespace saccade
