#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "o2na/errors.hpp"
#include "o2na/model.hpp"
#include "o2na/vocab.hpp"
#include "support/gradcheck.hpp"
#include "support/tiny.hpp"

using namespace o2na;
using o2na::testing::grad_check;
using o2na::testing::tiny_batch;
using o2na::testing::tiny_dims;

namespace {

double sigmoid_of(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor features(const TrainingBatch& b, const O2naModel& m, Tape& tape) {
  return m.project_features(tape, b.image, b.motion);
}

}  // namespace

TEST(ModelEquations, ObjectPredictorIsSigmoidReluOfPooledMemory) {
  O2naModel model(tiny_dims(), 5);
  auto batch = tiny_batch();
  Tape tape(Tape::Mode::kInference);
  Tensor v = features(batch, model, tape);
  auto scores = model.predict_objects(tape, v, 2);
  const Tensor& w1 = model.parameters().get("op.w1");
  const Tensor& w2 = model.parameters().get("op.w2");
  const std::size_t d = w1.rows(), rows = v.rows() / 2;
  for (std::size_t s = 0; s < 2; ++s) {
    std::vector<double> pooled(d, 0.0), hidden(d, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j) pooled[j] += v.at(s * rows + r, j) / double(rows);
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t k = 0; k < d; ++k) hidden[j] += pooled[k] * w1.at(k, j);
      hidden[j] = std::max(hidden[j], 0.0);
    }
    for (std::size_t o = 0; o < w2.cols(); ++o) {
      double z = 0;
      for (std::size_t k = 0; k < d; ++k) z += hidden[k] * w2.at(k, o);
      EXPECT_NEAR(scores.logits.at(s, o), z, 1e-12);
      EXPECT_NEAR(scores.probs.at(s, o), sigmoid_of(z), 1e-12);
    }
  }
}

TEST(ModelEquations, VideoMemoryStacksImageThenMotionRows) {
  O2naModel model(tiny_dims(), 5);
  auto batch = tiny_batch();
  Tape tape(Tape::Mode::kInference);
  Tensor v = features(batch, model, tape);
  ASSERT_EQ(v.rows(), 8u);  // 2 videos x 2N rows
  const Tensor& wm = model.parameters().get("proj.motion");
  // Second video, first motion row: rows 4..5 image, 6..7 motion.
  for (std::size_t j = 0; j < v.cols(); ++j) {
    double x = 0;
    for (std::size_t k = 0; k < 3; ++k) x += batch.motion.at(2, k) * wm.at(k, j);
    EXPECT_NEAR(v.at(6, j), x, 1e-12);
  }
}

TEST(ModelEquations, LogisticLossValues) {
  Tape tape(Tape::Mode::kInference);
  Tensor zero({1, 3}, 0.0);
  Tensor labels = Tensor::from_rows({{1, 0, 1}});
  EXPECT_NEAR(logistic_loss(tape, zero, labels).item(), 3 * std::log(2.0), 1e-12);
  Tensor z = Tensor::from_rows({{2.0, -1.0}});
  Tensor y = Tensor::from_rows({{1, 0}});
  EXPECT_NEAR(logistic_loss(tape, z, y, LogisticLabels::kSigned).item(),
              std::log1p(std::exp(-2.0)) + std::log1p(std::exp(-1.0)), 1e-12);
  // Literal labels: a 0 label contributes log 2 regardless of the logit.
  EXPECT_NEAR(logistic_loss(tape, z, y, LogisticLabels::kLiteral).item(),
              std::log1p(std::exp(-2.0)) + std::log(2.0), 1e-12);
}

TEST(ModelEquations, LengthPredictorIsDistributionOverMaxLength) {
  auto dims = tiny_dims();
  dims.max_length = 30;
  O2naModel model(dims, 6);
  auto batch = tiny_batch();
  Tape tape(Tape::Mode::kInference);
  Tensor v = features(batch, model, tape);
  Tensor p = model.length_distribution(tape, v, batch.caption_objects, 2);
  ASSERT_EQ(p.cols(), 30u);
  for (std::size_t s = 0; s < 2; ++s) {
    double total = 0;
    for (std::size_t c = 0; c < 30; ++c) total += p.at(s, c);
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  LossOptions only_length;
  only_length.weights.lambda = {1, 0, 0, 0, 0};
  Rng mask_rng(1);
  Pass pass{tape};
  auto loss = model.full_loss(pass, batch, only_length, mask_rng);
  const double expected = -0.5 * (std::log(p.at(0, 3)) + std::log(p.at(1, 2)));
  EXPECT_NEAR(loss.length, expected, 1e-12);
  EXPECT_NEAR(loss.total, expected, 1e-12);
}

TEST(ModelEquations, ObjectConditioningChangesGenerators) {
  O2naModel model(tiny_dims(), 7);
  auto batch = tiny_batch();
  Tape tape(Tape::Mode::kInference);
  Pass pass{tape};
  Tensor v = features(batch, model, tape);
  Tensor a = Tensor::from_rows({{1, 0, 0}, {1, 0, 0}});
  Tensor b = Tensor::from_rows({{0, 1, 1}, {0, 1, 1}});
  Tensor og_a = model.object_generator_logits(pass, v, a, 2, 4);
  Tensor og_a2 = model.object_generator_logits(pass, v, a, 2, 4);
  Tensor og_b = model.object_generator_logits(pass, v, b, 2, 4);
  double diff = 0;
  for (std::size_t i = 0; i < og_a.size(); ++i) {
    EXPECT_EQ(og_a[i], og_a2[i]);
    diff += std::abs(og_a[i] - og_b[i]);
  }
  EXPECT_GT(diff, 1e-6);
  std::vector<int> tokens(8, kMaskId);
  Tensor cg_a = model.caption_generator_logits(pass, tokens, v, a, 2, 4);
  Tensor cg_b = model.caption_generator_logits(pass, tokens, v, b, 2, 4);
  diff = 0;
  for (std::size_t i = 0; i < cg_a.size(); ++i) diff += std::abs(cg_a[i] - cg_b[i]);
  EXPECT_GT(diff, 1e-6);
}

TEST(ModelEquations, ObjectTargetKeepsOnlyObjectWords) {
  const std::vector<int> caption{6, 3, 7, 4};
  const std::vector<int> ids{3, 4, 5};
  EXPECT_EQ(make_object_target(caption, ids), (std::vector<int>{kMaskId, 3, kMaskId, 4}));
}

TEST(ModelEquations, RefinementMasksFloorOfLengthTimesRatio) {
  Rng rng(9);
  const std::vector<int> caption{3, 4, 5, 6, 7, 8, 9};
  auto count = [](const std::vector<int>& x) {
    return std::count(x.begin(), x.end(), kMaskId);
  };
  EXPECT_EQ(count(make_refine_input_train(caption, 0.5, rng)), 3);
  EXPECT_EQ(count(make_refine_input_train(caption, 0.3, rng)), 2);
  EXPECT_EQ(count(make_refine_input_train(caption, 0.0, rng)), 0);
  EXPECT_EQ(count(make_refine_input_train(caption, 1.0, rng)), 7);
  const std::vector<int> short_caption{3, 4, 5};
  EXPECT_EQ(count(make_refine_input_train(short_caption, 0.5, rng)), 1);
  // Unmasked positions keep their token.
  auto x = make_refine_input_train(caption, 0.5, rng);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] != kMaskId) EXPECT_EQ(x[i], caption[i]);
  }
  EXPECT_THROW(make_refine_input_train(caption, 1.5, rng), ConfigError);
}

TEST(ModelEquations, TotalIsWeightedSumOfTerms) {
  O2naModel model(tiny_dims(), 8);
  auto batch = tiny_batch();
  LossOptions options;
  options.weights.lambda = {0.5, 2.0, 1.0, 0.0, 3.0};
  Tape tape(Tape::Mode::kInference);
  Pass pass{tape};
  Rng mask_rng(2);
  auto l = model.full_loss(pass, batch, options, mask_rng);
  EXPECT_NEAR(l.total,
              0.5 * l.length + 2.0 * l.object + l.object_gen + 3.0 * l.refine, 1e-12);
  EXPECT_GT(l.caption, 0.0);
  options.weights.lambda[0] = -1.0;
  EXPECT_THROW(model.full_loss(pass, batch, options, mask_rng), ConfigError);
}

TEST(ModelEquations, CaptionLengthOutsideRangeIsRejected) {
  O2naModel model(tiny_dims(), 8);
  auto batch = tiny_batch();
  batch.lengths[1] = 0;
  Tape tape(Tape::Mode::kInference);
  Pass pass{tape};
  Rng mask_rng(2);
  EXPECT_THROW(model.full_loss(pass, batch, LossOptions{}, mask_rng), DataError);
}

TEST(ModelGrad, FullLossEndToEnd) {
  O2naModel model(tiny_dims(), 10);
  auto batch = tiny_batch();
  LossOptions options;
  options.weights.lambda = {1.0, 0.7, 1.3, 0.9, 1.1};
  auto inputs = model.parameters().entries();
  auto r = grad_check(
      [&](Tape& t) {
        Rng drop(21), mask(22);
        Pass pass{t, 0.1, &drop};
        return model.full_loss(pass, batch, options, mask).total_tensor;
      },
      inputs);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}
