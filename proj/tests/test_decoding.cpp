#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "o2na/decoding.hpp"
#include "o2na/errors.hpp"
#include "support/tiny.hpp"

using namespace o2na;
using o2na::testing::tiny_dims;

namespace {

Vocabulary tiny_vocab() {
  const std::vector<std::string> words{"box", "cat", "dog", "x", "y", "z", "w"};
  return Vocabulary(words);
}

class DecodeFixture : public ::testing::Test {
 protected:
  DecodeFixture()
      : vocab(tiny_vocab()),
        objects({"box", "cat", "dog"}, vocab),
        model(make_dims(), 12),
        decoder(model, objects) {
    Rng rng(5);
    std::normal_distribution<double> d(0.0, 1.0);
    for (auto* t : {&image, &motion}) {
      *t = Tensor({2, 3});
      for (auto& x : t->data()) x = d(rng);
    }
  }

  static ModelDims make_dims() {
    auto d = tiny_dims();
    d.max_length = 8;
    return d;
  }

  Vocabulary vocab;
  ObjectVocabulary objects;
  O2naModel model;
  Decoder decoder;
  Tensor image, motion;
};

}  // namespace

TEST(SelectObjects, ThresholdAndOverrides) {
  const std::vector<double> p{0.9, 0.79, 0.81};
  ControlSpec spec;
  EXPECT_EQ(select_objects(p, spec), (std::vector<double>{1, 0, 1}));
  spec.gamma = 0.9;  // strict comparison
  EXPECT_EQ(select_objects(p, spec), (std::vector<double>{0, 0, 0}));
  spec.gamma = 0.8;
  spec.forced_on = {1};
  EXPECT_EQ(select_objects(p, spec), (std::vector<double>{0, 1, 0}));
  spec.exclusive = false;
  EXPECT_EQ(select_objects(p, spec), (std::vector<double>{1, 1, 1}));
  spec.forced_off = {0};
  EXPECT_EQ(select_objects(p, spec), (std::vector<double>{0, 1, 1}));
  spec.forced_on = {0, 1, 2};
  spec.forced_off.clear();
  EXPECT_EQ(select_objects(p, spec), (std::vector<double>{1, 1, 1}));
  spec.forced_off = {2};
  EXPECT_THROW(select_objects(p, spec), ConfigError);
  ControlSpec bad;
  bad.forced_on = {3};
  EXPECT_THROW(select_objects(p, bad), ConfigError);
  bad = ControlSpec{};
  bad.gamma = 1.5;
  EXPECT_THROW(select_objects(p, bad), ConfigError);
}

TEST(Remask, LowestConfidenceWithTies) {
  const std::vector<int> tokens{5, 6, 7, 8};
  auto r = remask_lowest_confidence(tokens, std::vector<double>{0.9, 0.2, 0.5, 0.4}, 2);
  EXPECT_EQ(r.positions, (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(r.tokens, (std::vector<int>{5, kMaskId, 7, kMaskId}));
  EXPECT_FALSE(r.clamped);
  auto none = remask_lowest_confidence(tokens, std::vector<double>{0.9, 0.2, 0.5, 0.4}, 0);
  EXPECT_TRUE(none.positions.empty());
  EXPECT_EQ(none.tokens, tokens);
  auto tie = remask_lowest_confidence(tokens, std::vector<double>{0.3, 0.3, 0.3, 0.3}, 1);
  EXPECT_EQ(tie.positions, (std::vector<std::size_t>{0}));
  auto tie2 = remask_lowest_confidence(tokens, std::vector<double>{0.5, 0.3, 0.9, 0.3}, 1);
  EXPECT_EQ(tie2.positions, (std::vector<std::size_t>{1}));
}

TEST(Remask, LockedPositionsAndClamping) {
  const std::vector<int> tokens{5, 6, 7, 8};
  const std::vector<double> conf{0.1, 0.2, 0.5, 0.4};
  const std::vector<bool> locked{true, false, true, false};
  auto r = remask_lowest_confidence(tokens, conf, 1, locked);
  EXPECT_EQ(r.positions, (std::vector<std::size_t>{1}));
  auto c = remask_lowest_confidence(tokens, conf, 3, locked);
  EXPECT_TRUE(c.clamped);
  EXPECT_EQ(c.positions, (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(c.tokens[0], 5);
  EXPECT_EQ(c.tokens[2], 7);
  EXPECT_THROW(remask_lowest_confidence(tokens, std::vector<double>{0.1}, 1), DimensionError);
}

TEST(Deduplicate, Examples) {
  EXPECT_EQ(deduplicate(std::vector<int>{4, 4, 5, 5, 5, 4}), (std::vector<int>{4, 5, 4}));
  EXPECT_EQ(deduplicate(std::vector<int>{}), std::vector<int>{});
  EXPECT_EQ(deduplicate(std::vector<int>{7}), std::vector<int>{7});
  EXPECT_EQ(deduplicate(std::vector<int>{3, 4, 3}), (std::vector<int>{3, 4, 3}));
}

TEST(Deduplicate, RandomProperty) {
  Rng rng(17);
  std::uniform_int_distribution<int> tok(3, 6), len(0, 20);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<int> x(static_cast<std::size_t>(len(rng)));
    for (auto& t : x) t = tok(rng);
    auto y = deduplicate(x);
    for (std::size_t i = 1; i < y.size(); ++i) ASSERT_NE(y[i], y[i - 1]);
    ASSERT_EQ(deduplicate(y), y);
    // Every input run maps onto one output token, in order.
    std::size_t j = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (i > 0 && x[i] == x[i - 1]) continue;
      ASSERT_LT(j, y.size());
      ASSERT_EQ(x[i], y[j++]);
    }
    ASSERT_EQ(j, y.size());
  }
}

TEST_F(DecodeFixture, ForwardPassesAreTwoPlusIterations) {
  for (std::size_t t = 0; t <= 4; ++t) {
    ControlSpec spec;
    spec.iterations = t;
    auto trace = decoder.decode_o2na(image, motion, spec);
    ASSERT_EQ(trace.candidates.size(), 1u);
    EXPECT_EQ(trace.best().forward_passes, 2 + t);
    EXPECT_EQ(trace.best().iterations.size(), t);
  }
}

TEST_F(DecodeFixture, LengthFidelityAndStripping) {
  for (std::size_t l = 1; l <= 8; ++l) {
    ControlSpec spec;
    spec.length = l;
    spec.iterations = 2;
    auto trace = decoder.decode_o2na(image, motion, spec);
    const auto& c = trace.best();
    EXPECT_EQ(c.raw.size(), l);
    EXPECT_EQ(c.draft.size(), l);
    for (const auto& it : c.iterations) {
      EXPECT_EQ(it.tokens.size(), l);
      EXPECT_EQ(it.remasked.size(), l / 2);
    }
    EXPECT_LE(c.final.size(), l);
    for (int t : c.final) {
      EXPECT_NE(t, kMaskId);
      EXPECT_NE(t, kPadId);
    }
    std::size_t stripped = 0;
    for (int t : c.raw) stripped += t == kMaskId || t == kPadId;
    EXPECT_EQ(c.stripped, stripped);
  }
  ControlSpec bad;
  bad.length = 9;
  EXPECT_THROW(decoder.decode_o2na(image, motion, bad), ConfigError);
}

TEST_F(DecodeFixture, PredictedLengthIsArgmax) {
  auto trace = decoder.decode_o2na(image, motion, ControlSpec{});
  const auto best = static_cast<std::size_t>(
      std::max_element(trace.length_probs.begin(), trace.length_probs.end()) -
      trace.length_probs.begin());
  EXPECT_EQ(trace.best().length, best + 1);
}

TEST_F(DecodeFixture, DraftAndFirstPassAreArgmax) {
  ControlSpec spec;
  spec.length = 5;
  spec.iterations = 0;
  auto trace = decoder.decode_o2na(image, motion, spec);
  Tape tape(Tape::Mode::kInference);
  Pass pass{tape};
  Tensor v = model.project_features(tape, image, motion);
  Tensor obj({1, 3}, std::vector<double>(3, 0.0));
  for (auto o : trace.objects) obj[o] = 1.0;
  Tensor og = model.object_generator_logits(pass, v, obj, 1, 5);
  Tensor cg = model.caption_generator_logits(pass, trace.best().draft, v, obj, 1, 5);
  for (std::size_t i = 0; i < 5; ++i) {
    auto row = og.data().subspan(i * og.cols(), og.cols());
    EXPECT_EQ(trace.best().draft[i], std::max_element(row.begin(), row.end()) - row.begin());
    auto crow = cg.data().subspan(i * cg.cols(), cg.cols());
    EXPECT_EQ(trace.best().first[i], std::max_element(crow.begin(), crow.end()) - crow.begin());
  }
}

TEST_F(DecodeFixture, LockedObjectsSurviveEveryPass) {
  for (std::size_t l = 2; l <= 8; ++l) {
    ControlSpec spec;
    spec.forced_on = {0, 2};
    spec.lock_objects = true;
    spec.length = l;
    spec.iterations = 3;
    auto trace = decoder.decode_o2na(image, motion, spec);
    EXPECT_EQ(trace.objects, (std::vector<std::size_t>{0, 2}));
    const auto& c = trace.best();
    for (std::size_t o : {0, 2}) {
      const int w = objects.word_id(o);
      EXPECT_NE(std::find(c.draft.begin(), c.draft.end(), w), c.draft.end());
      EXPECT_NE(std::find(c.first.begin(), c.first.end(), w), c.first.end());
      for (const auto& it : c.iterations)
        EXPECT_NE(std::find(it.tokens.begin(), it.tokens.end(), w), it.tokens.end());
      EXPECT_NE(std::find(c.final.begin(), c.final.end(), w), c.final.end());
    }
  }
  ControlSpec tight;
  tight.forced_on = {0, 1, 2};
  tight.lock_objects = true;
  tight.length = 2;
  EXPECT_THROW(decoder.decode_o2na(image, motion, tight), ConfigError);
  // Without a length the beam starts at the number of locked objects.
  tight.length.reset();
  auto trace = decoder.npd_decode(image, motion, tight);
  for (const auto& c : trace.candidates) EXPECT_GE(c.length, 3u);
}

TEST_F(DecodeFixture, EmptySelectionStillDecodes) {
  ControlSpec spec;
  spec.gamma = 1.0;
  auto trace = decoder.decode_o2na(image, motion, spec);
  EXPECT_TRUE(trace.objects.empty());
  EXPECT_EQ(trace.best().raw.size(), trace.best().length);
}

TEST_F(DecodeFixture, Deterministic) {
  ControlSpec spec;
  spec.iterations = 2;
  auto a = decoder.npd_decode(image, motion, spec);
  auto b = decoder.npd_decode(image, motion, spec);
  ASSERT_EQ(a.candidates.size(), b.candidates.size());
  for (std::size_t i = 0; i < a.candidates.size(); ++i) {
    EXPECT_EQ(a.candidates[i].raw, b.candidates[i].raw);
    EXPECT_EQ(a.candidates[i].score, b.candidates[i].score);
  }
  EXPECT_EQ(a.chosen, b.chosen);
}

TEST_F(DecodeFixture, LengthBeamTakesTopLengthsAndBestScore) {
  ControlSpec spec;
  spec.beam = 3;
  auto trace = decoder.npd_decode(image, motion, spec);
  ASSERT_EQ(trace.candidates.size(), 3u);
  std::vector<std::size_t> order(8);
  for (std::size_t i = 0; i < 8; ++i) order[i] = i + 1;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return trace.length_probs[a - 1] > trace.length_probs[b - 1];
  });
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(trace.candidates[i].length, order[i]);
  for (const auto& c : trace.candidates) {
    double s = 0;
    for (double x : c.confidences) s += std::log(x);
    EXPECT_NEAR(c.score, s / double(c.length), 1e-12);
    EXPECT_LE(c.score, trace.best().score);
  }
  spec.beam = 1;
  auto one = decoder.npd_decode(image, motion, spec);
  auto plain = decoder.decode_o2na(image, motion, spec);
  EXPECT_EQ(one.final(), plain.final());
  EXPECT_EQ(one.best().length, plain.best().length);
}

TEST_F(DecodeFixture, TeacherRescoring) {
  ControlSpec spec;
  spec.teacher_rescore = true;
  EXPECT_THROW(decoder.npd_decode(image, motion, spec), ModelStateError);
  ArDims ad;
  ad.frames = 2;
  ad.image_dim = 3;
  ad.motion_dim = 3;
  ad.word_count = 10;
  ad.max_length = 8;
  ad.tfm = model.dims().tfm;
  ArModel teacher(ad, 3);
  Decoder with_teacher(model, objects, &teacher);
  spec.beam = 3;
  auto trace = with_teacher.npd_decode(image, motion, spec);
  Tape tape(Tape::Mode::kInference);
  Tensor v = teacher.project_features(tape, image, motion);
  for (const auto& c : trace.candidates) {
    if (c.final.empty()) continue;
    EXPECT_NEAR(c.score, teacher.mean_log_likelihood(v, c.final), 1e-12);
  }
}

TEST_F(DecodeFixture, NonFiniteParametersAreRejected) {
  O2naModel broken(make_dims(), 12);
  Tensor w = broken.parameters().get("cg.out");
  w[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(Decoder(broken, objects), ModelStateError);
}

TEST_F(DecodeFixture, TraceJsonHasEveryStage) {
  ControlSpec spec;
  spec.iterations = 2;
  auto trace = decoder.decode_o2na(image, motion, spec);
  trace.video_id = "v0";
  const std::string line = trace_to_json(trace, vocab, objects);
  for (const char* key : {"\"video_id\"", "\"objects\"", "\"length\"", "\"draft\"",
                          "\"iterations\"", "\"final\"", "\"stage_ms\""}) {
    EXPECT_NE(line.find(key), std::string::npos) << key;
  }
  EXPECT_EQ(line.find('\n'), std::string::npos);
}
