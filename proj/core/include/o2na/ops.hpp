#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "o2na/tape.hpp"
#include "o2na/tensor.hpp"

namespace o2na {

using Rng = std::mt19937_64;

// Differentiable primitives. Every op takes the tape first; on an inference
// tape (or when no operand requires a gradient) nothing is recorded.
// Matrix ops accept rank-2 tensors; rank-1 tensors act as a single row.

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);

// Adds row g of `rows` (G x d) to every row of the g-th contiguous group of
// `x` (R x d, R divisible by G). G == 1 is the usual bias add.
Tensor broadcast_add_rows(Tape& tape, const Tensor& x, const Tensor& rows);

Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);

// [a | b] along the last dimension.
Tensor concat_last_dim(Tape& tape, const Tensor& a, const Tensor& b);
// Row concatenation, interleaved per group: for each of `groups` samples the
// output holds that sample's rows of `a` followed by its rows of `b`.
Tensor concat_rows(Tape& tape, const Tensor& a, const Tensor& b,
                   std::size_t groups = 1);

Tensor embedding_lookup(Tape& tape, const Tensor& table,
                        std::span<const int> ids);

// exp(x - max) / sum along `axis` (0 = columns, 1 = rows) of a matrix.
Tensor softmax(Tape& tape, const Tensor& x, int axis = 1);

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain,
                  const Tensor& bias, double eps = 1e-5);

// Column means of each of `groups` contiguous row blocks: (r x d) -> (groups x d).
Tensor mean_pool(Tape& tape, const Tensor& x, std::size_t groups = 1);

Tensor sum(Tape& tape, const Tensor& x);

// Weighted sum of scalar tensors.
Tensor weighted_sum(Tape& tape, std::span<const Tensor> terms,
                    std::span<const double> weights);

// Mean over non-ignored rows of -log softmax(logits)[i, target_i].
// When every row is ignored the result is 0 and *counted is set to 0.
Tensor cross_entropy_rows(Tape& tape, const Tensor& logits,
                          std::span<const int> targets, int ignore_id,
                          std::size_t* counted = nullptr);

enum class LogisticLabels {
  kSigned,   // s = +1 for positives, -1 for negatives
  kLiteral,  // s = label itself (0 or 1)
};

// Mean over rows of sum_i log(1 + exp(-s_i z_i)) for multi-hot labels.
Tensor logistic_loss(Tape& tape, const Tensor& logits, const Tensor& labels,
                     LogisticLabels convention = LogisticLabels::kSigned);

// Inverted dropout. rate == 0 returns x unchanged.
Tensor dropout(Tape& tape, const Tensor& x, double rate, Rng* rng);

struct AttentionLayout {
  std::size_t batch = 1;
  std::size_t heads = 1;
  // Valid keys per sample; empty means every key is valid.
  std::span<const std::size_t> key_lengths;
  // Optional additive (q_len x k_len) mask shared by every sample/head.
  const Tensor* additive_mask = nullptr;
  double dropout = 0.0;
  Rng* rng = nullptr;
  // When set, receives the softmax weights, (batch*heads*q_len) x k_len.
  std::vector<double>* weights_out = nullptr;
};

// Scaled dot-product attention over `batch` independent samples stacked
// row-wise: q is (batch*lq) x d, k and v are (batch*lk) x d. Heads split the
// width evenly; the result holds the concatenated head outputs.
Tensor attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                 const AttentionLayout& layout);

}  // namespace o2na
