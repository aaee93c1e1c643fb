#include <gtest/gtest.h>

#include "o2na/errors.hpp"
#include "o2na/ops.hpp"
#include "o2na/tape.hpp"
#include "o2na/tensor.hpp"

using namespace o2na;

TEST(Tensor, CopiesShareStorage) {
  Tensor a({2, 3}, 1.0);
  Tensor b = a;
  b.at(1, 2) = 7.0;
  EXPECT_EQ(a.at(1, 2), 7.0);
  EXPECT_TRUE(a.same_storage(b));
  Tensor c = a.clone();
  c.at(0, 0) = -1.0;
  EXPECT_EQ(a.at(0, 0), 1.0);
  EXPECT_FALSE(c.same_storage(a));
}

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor({0, 3}), DimensionError);
  EXPECT_THROW(Tensor(Shape{}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::from_rows({{1, 2}, {3}}), DimensionError);
}

TEST(Tensor, RankOneReadsAsRow) {
  Tensor v({4}, 0.5);
  EXPECT_EQ(v.rows(), 1u);
  EXPECT_EQ(v.cols(), 4u);
  EXPECT_THROW(Tensor({2, 2, 2}).rows(), DimensionError);
  EXPECT_THROW(Tensor({2}).item(), ContractError);
  EXPECT_THROW(Tensor().shape(), ContractError);
}

TEST(Tape, InferenceModeRecordsNothing) {
  Tape tape(Tape::Mode::kInference);
  Tensor a({2, 2}, 1.0, true);
  Tensor b = add(tape, a, a);
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_FALSE(b.requires_grad());
}

TEST(Tape, SkipsOpsWithoutGradInputs) {
  Tape tape;
  Tensor a({2, 2}, 1.0);
  add(tape, a, a);
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Tape, BackwardNeedsScalar) {
  Tape tape;
  Tensor a({2, 2}, 1.0, true);
  Tensor b = scale(tape, a, 2.0);
  EXPECT_THROW(tape.backward(b), ContractError);
}

TEST(Tape, LeafGradientsAccumulateAcrossBackwardCalls) {
  Tape tape;
  Tensor x = Tensor::from_rows({{1.0, 2.0}}, true);
  Tensor y = sum(tape, scale(tape, x, 3.0));
  tape.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 6.0);
}

TEST(Tape, ReusedIntermediateGetsBothContributions) {
  // y = sum(h * 2 + h), h = 3x  ->  dy/dx = 9
  Tape tape;
  Tensor x = Tensor::from_rows({{0.5, -1.0}}, true);
  Tensor h = scale(tape, x, 3.0);
  Tensor y = sum(tape, add(tape, scale(tape, h, 2.0), h));
  tape.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 9.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 9.0);
}
