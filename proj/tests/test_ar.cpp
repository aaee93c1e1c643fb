#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "o2na/ar_baseline.hpp"
#include "o2na/errors.hpp"
#include "support/gradcheck.hpp"
#include "support/tiny.hpp"

using namespace o2na;

namespace {

ArDims small_ar() {
  ArDims d;
  d.frames = 2;
  d.image_dim = 3;
  d.motion_dim = 3;
  d.word_count = 10;
  d.max_length = 8;
  d.tfm = o2na::testing::tiny_dims().tfm;
  d.tfm.layers = 2;
  return d;
}

Tensor random_features(std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor t({2, 3});
  for (auto& x : t.data()) x = d(rng);
  return t;
}

}  // namespace

TEST(Ar, LogitsAreCausal) {
  ArModel model(small_ar(), 2);
  Tape tape(Tape::Mode::kInference);
  Pass pass{tape};
  Tensor v = model.project_features(tape, random_features(1), random_features(2));
  std::vector<int> a{10, 4, 5, 6, 7}, b{10, 4, 5, 9, 3};
  Tensor la = model.logits(pass, a, v, 1, 5), lb = model.logits(pass, b, v, 1, 5);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < la.cols(); ++c) EXPECT_EQ(la.at(r, c), lb.at(r, c));
  EXPECT_NE(la.at(3, 0), lb.at(3, 0));
}

TEST(Ar, CachedDecodeMatchesTeacherForcedArgmax) {
  ArModel model(small_ar(), 4);
  const auto& dims = model.dims();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Tape tape(Tape::Mode::kInference);
    Pass pass{tape};
    Tensor v = model.project_features(tape, random_features(seed), random_features(seed + 9));
    ArDecodeOptions options;
    options.max_length = 8;
    options.min_length = 2;
    auto out = model.decode(v, options);
    std::vector<int> inputs{dims.bos_id()};
    inputs.insert(inputs.end(), out.tokens.begin(), out.tokens.end());
    Tensor logits = model.logits(pass, inputs, v, 1, inputs.size());
    for (std::size_t step = 0; step < inputs.size(); ++step) {
      const std::size_t emitted = step;
      int best = -1;
      double best_z = 0;
      for (std::size_t c = 0; c < logits.cols(); ++c) {
        const int id = static_cast<int>(c);
        if (id == kPadId || id == kMaskId || id == dims.bos_id()) continue;
        if (id == dims.eos_id() ? emitted < options.min_length : emitted == options.max_length)
          continue;
        if (best < 0 || logits.at(step, c) > best_z) {
          best = id;
          best_z = logits.at(step, c);
        }
      }
      if (step < out.tokens.size()) {
        EXPECT_EQ(out.tokens[step], best) << "seed " << seed << " step " << step;
      } else {
        EXPECT_EQ(best, dims.eos_id());
      }
    }
    EXPECT_GE(out.tokens.size(), options.min_length);
    EXPECT_LE(out.tokens.size(), options.max_length);
    EXPECT_EQ(out.forward_passes, out.tokens.size() + 1);
  }
}

TEST(Ar, EmitsOnlyWordsAndHonoursLengthBounds) {
  ArModel model(small_ar(), 6);
  Tape tape(Tape::Mode::kInference);
  Tensor v = model.project_features(tape, random_features(3), random_features(4));
  ArDecodeOptions options;
  options.max_length = 5;
  options.min_length = 5;
  auto out = model.decode(v, options);
  EXPECT_EQ(out.tokens.size(), 5u);
  for (int t : out.tokens) {
    EXPECT_GE(t, 1);
    EXPECT_NE(t, kMaskId);
    EXPECT_LT(t, 10);
  }
  options.max_length = 9;
  EXPECT_THROW(model.decode(v, options), ConfigError);
}

TEST(Ar, LossGradientMatchesFiniteDifferences) {
  ArModel model(small_ar(), 8);
  auto batch = o2na::testing::tiny_batch();
  auto r = o2na::testing::grad_check(
      [&](Tape& t) {
        Rng drop(5);
        Pass pass{t, 0.1, &drop};
        return model.loss(pass, batch);
      },
      model.parameters().entries());
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Ar, MeanLogLikelihoodIsNegativeMeanLoss) {
  ArModel model(small_ar(), 9);
  auto batch = o2na::testing::tiny_batch();
  batch.size = 1;
  batch.captions.resize(4);
  batch.lengths.resize(1);
  batch.image = Tensor({2, 3}, std::vector<double>(batch.image.data().begin(),
                                                   batch.image.data().begin() + 6));
  batch.motion = Tensor({2, 3}, std::vector<double>(batch.motion.data().begin(),
                                                    batch.motion.data().begin() + 6));
  Tape tape(Tape::Mode::kInference);
  Pass pass{tape};
  const double loss = model.loss(pass, batch).item();
  Tensor v = model.project_features(tape, batch.image, batch.motion);
  EXPECT_NEAR(model.mean_log_likelihood(v, batch.captions), -loss, 1e-12);
}
