#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "saccade/checkpoint.hpp"
#include "saccade/classifier.hpp"
#include "saccade/config.hpp"
#include "saccade/data.hpp"
#include "saccade/fixture.hpp"
#include "saccade/gradcheck.hpp"
#include "saccade/pipeline.hpp"
#include "test_util.hpp"

using namespace saccade;

namespace {

RunConfig small_config() {
  RunConfig c;
  c.frames = 6;
  c.train_sequences = 6;
  c.test_sequences = 6;
  c.policy_hidden = 16;
  c.epochs_features = 1;
  c.epochs_hallucinator = 1;
  c.epochs_spatial = 2;
  c.epochs_temporal = 2;
  c.batch_size = 3;
  return c;
}

Tensor float_tensor(Shape s, Rng& rng) {
  Tensor t = saccade::testing::random_tensor(std::move(s), rng, -10.0, 10.0);
  for (double& v : t.data()) v = static_cast<float>(v);
  return t;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("saccade_test_" + name);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

TEST(Config, TextRoundTripCoversEveryKey) {
  RunConfig a;
  a.seed = 99;
  a.theta_h = {0.5, 0.25, 2.0};
  a.lr_decay_epochs = {3, 7};
  a.adjacency = Adjacency::kEightWay;
  a.tau = 0.1;
  const std::string text = a.to_text();
  RunConfig b;
  b.merge_text(text);
  EXPECT_EQ(b.to_text(), text);
  std::size_t lines = 0;
  for (char ch : text) lines += ch == '\n';
  EXPECT_EQ(lines, RunConfig::keys().size());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  RunConfig c;
  EXPECT_THROW(c.set("no_such_key", "1"), ConfigError);
  EXPECT_THROW(c.set("frames", "ten"), ConfigError);
  EXPECT_THROW(c.set("frames", "-3"), ConfigError);
  EXPECT_THROW(c.set("theta_h", "1,2"), ConfigError);
  EXPECT_THROW(c.set("adjacency", "diagonal"), ConfigError);
  EXPECT_THROW(c.set("normalize_efficiency_loss", "maybe"), ConfigError);
  EXPECT_THROW(c.merge_text("seed 5\n"), ConfigError);
  c.merge_text("# comment\n\n k = 2 # trailing\n");
  EXPECT_EQ(c.k, 2u);
}

TEST(Config, CrossFieldValidation) {
  RunConfig ok;
  EXPECT_NO_THROW(ok.validate());
  auto broken = [](auto mutate) {
    RunConfig c;
    mutate(c);
    return c;
  };
  EXPECT_THROW(broken([](RunConfig& c) { c.classes = 1; }).validate(), ConfigError);
  EXPECT_THROW(broken([](RunConfig& c) { c.k = 4; }).validate(), ConfigError);
  EXPECT_THROW(broken([](RunConfig& c) { c.lambda = 2; }).validate(), ConfigError);
  EXPECT_THROW(broken([](RunConfig& c) { c.max_skip = 0; }).validate(), ConfigError);
  EXPECT_THROW(broken([](RunConfig& c) { c.d = 5; }).validate(), ConfigError);
  EXPECT_THROW(broken([](RunConfig& c) { c.tau = 0.0; }).validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// Synthetic data

TEST(Dataset, BitIdenticalUnderSeedAndJobs) {
  const SequenceSpec spec;
  const auto a = gen_dataset(spec, 12, 5, 0, 1);
  const auto b = gen_dataset(spec, 12, 5, 0, 4);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].frames, b[i].frames);
    EXPECT_EQ(a[i].label, b[i].label);
  }
  const auto c = gen_dataset(spec, 12, 6, 0, 1);
  EXPECT_NE(a[0].frames, c[0].frames);
}

TEST(Dataset, RoundRobinBalance) {
  SequenceSpec spec;
  spec.frames = 1;
  const auto d = gen_dataset(spec, 300, 1, 0, 4);
  std::vector<std::size_t> counts(3);
  for (const auto& s : d) ++counts[s.label];
  EXPECT_EQ(counts, (std::vector<std::size_t>{100, 100, 100}));
}

TEST(Dataset, StaticBlobBarelyMoves) {
  const SequenceSpec spec;
  for (std::uint64_t id = 2; id < 90; id += 3) {
    const auto s = gen_sequence(spec, id, 17);
    ASSERT_EQ(s.kind, Trajectory::kStatic);
    for (int axis = 0; axis < 2; ++axis) {
      double mean = 0, sq = 0;
      for (const auto& c : s.centers) mean += c[axis];
      mean /= static_cast<double>(s.centers.size());
      for (const auto& c : s.centers) sq += (c[axis] - mean) * (c[axis] - mean);
      EXPECT_LT(sq / static_cast<double>(s.centers.size()), 0.5);
    }
  }
}

TEST(Dataset, MovingBlobStaysInsideAndMoves) {
  const SequenceSpec spec;
  for (std::uint64_t id = 0; id < 30; ++id) {
    const auto s = gen_sequence(spec, id, 3);
    for (const auto& c : s.centers) {
      EXPECT_GE(c[0], 7.5);
      EXPECT_LE(c[0], 48 - 7.5);
      EXPECT_GE(c[1], 7.5);
      EXPECT_LE(c[1], 48 - 7.5);
    }
    if (s.kind != Trajectory::kStatic) EXPECT_GT(s.speed, 1.0);
    for (const Tensor& f : s.frames) {
      for (double v : f.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    }
  }
}

TEST(Dataset, RejectsBadClassCount) {
  SequenceSpec spec;
  spec.classes = 1;
  EXPECT_THROW(gen_sequence(spec, 0, 0), std::invalid_argument);
  spec.classes = 7;
  EXPECT_THROW(gen_sequence(spec, 0, 0), std::invalid_argument);
}

TEST(Dataset, ParallelForRethrowsLowestIndex) {
  try {
    parallel_for(20, 4, [](std::size_t i) {
      if (i == 7 || i == 13) throw std::runtime_error(std::to_string(i));
    });
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "7");
  }
}

// ---------------------------------------------------------------------------
// Fixtures

TEST(Fixture, RoundTripIsBitExact) {
  Rng rng(1);
  std::uniform_int_distribution<std::size_t> dim(1, 6);
  for (int i = 0; i < 100; ++i) {
    const Tensor t = float_tensor({dim(rng), dim(rng), dim(rng), dim(rng)}, rng);
    const Tensor back = decode_stream(encode_stream(t, kAttentionMagic), kAttentionMagic);
    ASSERT_EQ(back.shape(), t.shape());
    ASSERT_EQ(std::memcmp(back.raw(), t.raw(), t.size() * sizeof(double)), 0);
  }
  const Tensor big = float_tensor({10, 32, 7, 7}, rng);
  const auto path = temp_file("roundtrip.attn");
  write_fixture(path, big);
  EXPECT_EQ(read_fixture(path), big);
  std::filesystem::remove(path);
}

TEST(Fixture, HeaderLayout) {
  Tensor t({1, 1, 1, 2}, std::vector<double>{1.0, -2.0});
  const auto b = encode_stream(t, kAttentionMagic);
  ASSERT_EQ(b.size(), 4u + 1 + 16 + 8);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "ATTN");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[5 + 12], 2);  // W, little-endian
  EXPECT_EQ(b[21 + 3], 0x3f);  // 1.0f = 0x3f800000
}

TEST(Fixture, DistinctErrors) {
  Rng rng(2);
  const auto good = encode_stream(float_tensor({2, 3, 4, 4}, rng), kAttentionMagic);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_stream(bad_magic, kAttentionMagic), BadMagicError);
  EXPECT_THROW(decode_stream(good, kVideoMagic), BadMagicError);
  EXPECT_THROW(decode_stream({'A', 'T'}, kAttentionMagic), BadMagicError);

  auto truncated = good;
  truncated.resize(truncated.size() - 3);
  try {
    decode_stream(truncated, kAttentionMagic);
    FAIL();
  } catch (const TruncatedPayloadError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated payload"), std::string::npos);
  }
  auto short_header = good;
  short_header.resize(9);
  EXPECT_THROW(decode_stream(short_header, kAttentionMagic), TruncatedPayloadError);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(decode_stream(trailing, kAttentionMagic), DimMismatchError);

  auto zero_dim = good;
  std::memset(zero_dim.data() + 5, 0, 4);
  EXPECT_THROW(decode_stream(zero_dim, kAttentionMagic), DimMismatchError);
}

// ---------------------------------------------------------------------------
// Classifier

TEST(ClassLoss, WeightedArithmetic) {
  // Two-class logits [0, x] with label 0 give CE = log(1 + e^x).
  auto with_ce = [](double ce) {
    return Tensor::vector({0.0, std::log(std::exp(ce) - 1.0)});
  };
  const std::array<Tensor, kHeads> heads{with_ce(0.5), with_ce(0.3), with_ce(0.2)};
  EXPECT_NEAR(class_loss(heads, 0, {1, 1, 1}), 1.0, 1e-12);
  EXPECT_NEAR(class_loss(heads, 0, {1, 0, 0}), 0.5, 1e-12);
  EXPECT_THROW(class_loss(heads, 2, {1, 1, 1}), std::invalid_argument);
  EXPECT_THROW(class_loss(heads, 0, {1, -1, 1}), std::invalid_argument);
}

TEST(ClassLoss, MatchesLogSoftmaxOracle) {
  Rng rng(3);
  std::uniform_real_distribution<double> w(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::array<Tensor, kHeads> heads;
    for (auto& h : heads) h = saccade::testing::random_tensor({5}, rng, -6, 6);
    const HeadWeights theta{w(rng), w(rng), w(rng)};
    const std::size_t label = static_cast<std::size_t>(trial % 5);
    long double expect = 0;
    for (std::size_t h = 0; h < kHeads; ++h) {
      long double z = 0;
      for (double v : heads[h].data()) z += std::exp(static_cast<long double>(v));
      expect += theta[h] * (std::log(z) - heads[h][label]);
    }
    EXPECT_NEAR(class_loss(heads, label, theta), static_cast<double>(expect), 1e-10);
  }
}

TEST(Classifier, MeanOfHeads) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::array<Tensor, kHeads> heads;
    for (auto& h : heads) h = saccade::testing::random_tensor({4}, rng);
    const Tensor m = mean_logits(heads);
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_NEAR(m[i], (heads[0][i] + heads[1][i] + heads[2][i]) / 3.0, 1e-15);
    }
  }
  const Tensor same = Tensor::vector({0.25, -1.5, 3.0});
  EXPECT_EQ(mean_logits({same, same, same}), same);
}

TEST(Classifier, ZeroPaddedCropsStillClassify) {
  ThreeHeadClassifier c({4, 3, 5, 3});
  Rng rng(5);
  c.init(rng);
  const Tensor packed = c.pack_crops({});
  EXPECT_EQ(packed, Tensor({12}));
  const auto state = c.update(saccade::testing::random_tensor({4}, rng), packed, c.zero_state());
  const Tensor logits = mean_logits(c.head_logits(state));
  EXPECT_EQ(logits.size(), 3u);
  EXPECT_TRUE(logits.all_finite());

  const Tensor one = c.pack_crops({Tensor::vector({1, 2, 3, 4})});
  EXPECT_EQ(one[3], 4.0);
  EXPECT_EQ(one[4], 0.0);
  EXPECT_THROW(c.pack_crops({Tensor({4}), Tensor({4}), Tensor({4}), Tensor({4})}),
               std::invalid_argument);
  EXPECT_THROW(c.update(Tensor({3}), packed, c.zero_state()), std::invalid_argument);
}

TEST(Classifier, CrossEntropyHeadsGradcheck) {
  ThreeHeadClassifier c({3, 2, 4, 3});
  Rng rng(6);
  c.init(rng);
  const Tensor low = saccade::testing::random_tensor({3}, rng);
  const Tensor crops = saccade::testing::random_tensor({6}, rng);
  const auto r = check_gradients(c.parameters(), [&](Tape& tape) {
    ThreeHeadClassifier::StateVars s;
    for (auto& v : s) v = tape.constant(Tensor({4}));
    s = c.update(tape, tape.constant(low), tape.constant(crops), s);
    s = c.update(tape, tape.constant(low), tape.constant(crops), s);
    return class_loss(c.head_logits(tape, s), 1, {1.0, 0.5, 2.0});
  }, rng);
  EXPECT_LE(r.max_rel_err, 1e-4);
}

TEST(Ops, BlendGradcheck) {
  Rng rng(7);
  Parameter g{"g", Tensor::vector({0.3})};
  Parameter a{"a", saccade::testing::random_tensor({5}, rng)};
  Parameter b{"b", saccade::testing::random_tensor({5}, rng)};
  const Tensor w = saccade::testing::random_tensor({5}, rng);
  const auto r = check_gradients({&g, &a, &b}, [&](Tape& tape) {
    Var out = ops::blend(tape.bind(g), tape.bind(a), tape.bind(b));
    return ops::sum(ops::mul(out, tape.constant(w)));
  }, rng);
  EXPECT_LE(r.max_rel_err, 1e-6);
  Tape tape;
  EXPECT_EQ(ops::blend(tape.constant(Tensor::vector({1.0})), tape.constant(a.value),
                       tape.constant(b.value)).value(), a.value);
}

// ---------------------------------------------------------------------------
// Pipeline

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg_ = small_config();
    models_ = std::make_unique<Models>(cfg_);
    models_->init();
    data_ = test_split(cfg_, 2);
    cache_ = precompute(*models_, data_, 2);
  }
  RunConfig cfg_;
  std::unique_ptr<Models> models_;
  std::vector<SyntheticSequence> data_;
  std::vector<SequenceCache> cache_;
};

TEST_F(PipelineTest, CostIdentityAndShape) {
  const CostBreakdown cb = models_->cost();
  EXPECT_EQ(cb.o_full, cb.o_pre + cb.o_rest);
  EXPECT_EQ(models_->tap_size(), 8u * 6 * 6);
  EXPECT_EQ(models_->cost(3).o_rest - models_->cost(0).o_rest, 3 * cb.crop);
  const AttentionMap& a = cache_[0].frames[0].attention;
  EXPECT_EQ(a.values.shape(), (Shape{8, 6, 6}));
}

TEST_F(PipelineTest, AlwaysFullChargesTFull) {
  const EvalReport r = evaluate(*models_, cache_, RunMode::kAlwaysFull);
  const Flops o_full = models_->cost().o_full;
  for (const auto& s : r.sequences) {
    const RunStats st = aggregate(s.decisions);
    EXPECT_EQ(st.n_full, cfg_.frames);
    EXPECT_EQ(st.total_flops, cfg_.frames * o_full);
    for (const auto& row : s.trace) {
      EXPECT_EQ(row.status, FrameStatus::kFull);
      EXPECT_FALSE(row.ssim.has_value());
    }
  }
  EXPECT_DOUBLE_EQ(r.speedup(), 1.0);
}

TEST_F(PipelineTest, AdaptiveNeverChargesMore) {
  for (std::size_t m : {1u, 2u, 3u}) {
    models_->config.max_skip = m;
    models_->policy = Policy(PolicyConfig{models_->tap_size(), models_->tap_size(), m, 16, 2});
    Rng rng(m);
    models_->policy.init(rng);
    // The policy head, and so O_pre, grows with M.
    const Flops o_full = models_->cost().o_full;
    const EvalReport r = evaluate(*models_, cache_, RunMode::kAdaptive);
    for (const auto& s : r.sequences) {
      const RunStats st = aggregate(s.decisions);
      EXPECT_EQ(s.decisions.front().status, FrameStatus::kFull);
      EXPECT_EQ(st.n_full + st.n_pre + st.n_skip, cfg_.frames);
      EXPECT_LE(st.total_flops, cfg_.frames * o_full);
      if (m == 1) EXPECT_EQ(st.n_skip, 0u);
    }
    // Speed-up recomputed from raw totals.
    const double total = static_cast<double>(r.stats.total_flops);
    const double expect = static_cast<double>(o_full) * cfg_.frames * r.sequences.size() / total;
    EXPECT_NEAR(r.speedup(), expect, 1e-12 * expect);
  }
}

TEST_F(PipelineTest, LiveAndCachedSourcesAgree) {
  for (RunMode mode : {RunMode::kAlwaysFull, RunMode::kAdaptive}) {
    const EvalReport live = evaluate(*models_, data_, mode, 1);
    const EvalReport cached = evaluate(*models_, cache_, mode, 1);
    EXPECT_EQ(report_csv(live), report_csv(cached));
    EXPECT_EQ(trace_csv(live), trace_csv(cached));
    for (std::size_t i = 0; i < live.sequences.size(); ++i) {
      EXPECT_EQ(live.sequences[i].logits, cached.sequences[i].logits);
    }
  }
}

TEST_F(PipelineTest, DeterministicAcrossJobs) {
  const EvalReport a = evaluate(*models_, data_, RunMode::kAdaptive, 1);
  const EvalReport b = evaluate(*models_, data_, RunMode::kAdaptive, 4);
  EXPECT_EQ(report_csv(a), report_csv(b));
  EXPECT_EQ(trace_csv(a), trace_csv(b));
  EXPECT_EQ(summary_csv(a), summary_csv(b));
}

TEST_F(PipelineTest, FullFramesComputeTheSameWayInEitherMode) {
  // Replaying the adaptive run's FULL frames through the classifier alone
  // reproduces its final logits exactly.
  for (std::size_t i = 0; i < cache_.size(); ++i) {
    CachedSource src(cache_[i]);
    const SequenceResult r = run_sequence(*models_, src, RunMode::kAdaptive);
    auto memory = models_->classifier.zero_state();
    for (std::size_t t = 0; t < r.decisions.size(); ++t) {
      if (r.decisions[t].status != FrameStatus::kFull) continue;
      memory = models_->classifier.update(
          src.low_feature(t),
          models_->classifier.pack_crops(src.crop_features(t, cfg_.k)), memory);
    }
    EXPECT_EQ(mean_logits(models_->classifier.head_logits(memory)), r.logits);
  }
}

TEST_F(PipelineTest, ReportFormats) {
  const EvalReport r = evaluate(*models_, cache_, RunMode::kAdaptive);
  const std::string rep = report_csv(r);
  EXPECT_EQ(rep.substr(0, rep.find('\n')),
            "seq_id,frames,n_full,n_pre,n_skip,flops_total,pred,label,correct");
  const std::string tr = trace_csv(r);
  EXPECT_EQ(tr.substr(0, tr.find('\n')), "seq,t,status,ssim,m_star");
  std::size_t rows = 0;
  for (char ch : tr) rows += ch == '\n';
  EXPECT_EQ(rows, 1 + cache_.size() * cfg_.frames);
}

TEST(Evaluate, TopKStubs) {
  std::vector<SequenceResult> perfect;
  for (std::size_t i = 0; i < 30; ++i) {
    SequenceResult s;
    s.label = i % 3;
    s.logits = Tensor({3}, 0.0);
    s.logits[s.label] = 1.0;
    s.pred = s.label;
    s.decisions = {{FrameStatus::kFull, 10, 0}};
    perfect.push_back(s);
  }
  const EvalReport p = summarize(perfect, 10);
  EXPECT_EQ(p.top1, 100.0);
  EXPECT_EQ(p.top5, 100.0);

  std::vector<SequenceResult> coin;
  for (std::size_t i = 0; i < 400; ++i) {
    Rng rng(mix_seed(8, i));
    SequenceResult s;
    s.label = i % 2;
    s.logits = saccade::testing::random_tensor({2}, rng);
    s.pred = decide(s.logits);
    s.decisions = {{FrameStatus::kFull, 10, 0}};
    coin.push_back(s);
  }
  const EvalReport c = summarize(coin, 10);
  EXPECT_NEAR(c.top1, 50.0, 5.0);
  EXPECT_EQ(c.top5, 100.0);

  EXPECT_TRUE(in_top_k(Tensor::vector({1, 1, 1}), 0, 1));
  EXPECT_FALSE(in_top_k(Tensor::vector({1, 1, 1}), 1, 1));
  EXPECT_TRUE(in_top_k(Tensor::vector({1, 1, 1}), 2, 3));
}

TEST_F(PipelineTest, TrainingCurvesHaveOneEntryPerEpoch) {
  const auto train = train_split(cfg_, 2);
  const auto f = train_features(*models_, train);
  EXPECT_EQ(f.size(), 2u);
  EXPECT_EQ(f.at("probe_low").size(), cfg_.epochs_features);
  const auto cache = precompute(*models_, train, 2);
  EXPECT_EQ(train_hallucinator_phase(*models_, cache).at("belief").size(),
            cfg_.epochs_hallucinator);
  EXPECT_EQ(train_spatial(*models_, cache).at("class").size(), cfg_.epochs_spatial);
  const auto t = train_temporal(*models_, cache);
  EXPECT_EQ(t.at("class").size(), cfg_.epochs_temporal);
  EXPECT_EQ(t.at("efficiency").size(), cfg_.epochs_temporal);
  for (double e : t.at("efficiency")) {
    EXPECT_GT(e, 0.0);
    EXPECT_LE(e, 1.0);
  }
  const std::string csv = loss_csv(t);
  std::size_t rows = 0;
  for (char ch : csv) rows += ch == '\n';
  EXPECT_EQ(rows, 1 + 2 * cfg_.epochs_temporal);

  models_->config.epochs_temporal = 0;
  EXPECT_TRUE(train_temporal(*models_, cache).empty());
  EXPECT_EQ(loss_csv({}), "epoch,term,value\n");
  EXPECT_THROW(train_temporal(*models_, {}), std::invalid_argument);
}

TEST_F(PipelineTest, CheckpointsRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "saccade_test_ckpt";
  std::filesystem::create_directories(dir);
  models_->backbone.save(dir / "b");
  models_->classifier.save(dir / "c");
  Models other(cfg_);
  other.backbone.load(dir / "b");
  other.classifier.load(dir / "c");
  other.hallucinator = models_->hallucinator;
  other.policy = models_->policy;
  const EvalReport a = evaluate(*models_, data_, RunMode::kAdaptive);
  const EvalReport b = evaluate(other, data_, RunMode::kAdaptive);
  EXPECT_EQ(trace_csv(a), trace_csv(b));

  RunConfig wider = cfg_;
  wider.classes = 4;
  Models mismatch(wider);
  EXPECT_THROW(mismatch.classifier.load(dir / "c"), CheckpointError);
  std::filesystem::remove_all(dir);
}
