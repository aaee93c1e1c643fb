#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "o2na/ops.hpp"
#include "o2na/parameters.hpp"
#include "o2na/tape.hpp"

namespace o2na {

struct TfmDims {
  std::size_t d_model = 512;
  std::size_t heads = 8;
  std::size_t d_ff = 2048;
  std::size_t layers = 1;
  double dropout = 0.1;

  void validate() const;
};

struct AttentionParams {
  Tensor q, q_bias, k, k_bias, v, v_bias, o, o_bias;
};

struct FeedForwardParams {
  Tensor w1, b1, w2, b2;
};

struct NormParams {
  Tensor gain, bias;
};

struct TfmLayerParams {
  AttentionParams self_attn;
  AttentionParams src_attn;
  FeedForwardParams ff;
  NormParams norm_self, norm_src, norm_ff;
};

// Word table (|D| x d) and learned position table (l_max x d).
struct SequenceEmbeddings {
  Tensor word;
  Tensor position;

  std::size_t max_length() const { return position.rows(); }
};

AttentionParams make_attention(ParameterSet& params, const std::string& prefix,
                               std::size_t d_model, Rng& rng);
FeedForwardParams make_feed_forward(ParameterSet& params, const std::string& prefix,
                                    std::size_t d_model, std::size_t d_ff, Rng& rng);
std::vector<TfmLayerParams> make_tfm_stack(ParameterSet& params,
                                           const std::string& prefix,
                                           const TfmDims& dims, Rng& rng);
SequenceEmbeddings make_embeddings(ParameterSet& params, const std::string& prefix,
                                   std::size_t vocab_size, std::size_t max_length,
                                   std::size_t d_model, Rng& rng);

// What a forward pass needs besides parameters. Dropout is active iff
// dropout > 0; inference passes leave it at zero.
struct Pass {
  Tape& tape;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

// Row layout of a batch of sequences stacked sample by sample.
struct SequenceLayout {
  std::size_t batch = 1;
  std::size_t length = 1;         // rows per sample (padded)
  std::size_t memory_length = 1;  // memory rows per sample
  std::span<const std::size_t> valid_lengths;  // empty: every row is valid
  const Tensor* self_mask = nullptr;           // additive length x length mask
};

// x W + b applied row-wise.
Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b);

Tensor multi_head_attention(Pass& pass, const Tensor& query, const Tensor& key,
                            const Tensor& value, const AttentionParams& params,
                            std::size_t heads, const AttentionLayout& layout);

Tensor feed_forward(Pass& pass, const Tensor& x, const FeedForwardParams& params);

// Post-norm decoder layer: self-attention, source attention over `memory`,
// feed-forward; each wrapped as LayerNorm(x + sublayer(x)).
Tensor tfm_layer(Pass& pass, const Tensor& x, const Tensor& memory,
                 const TfmLayerParams& params, std::size_t heads,
                 const SequenceLayout& layout);

Tensor tfm_stack(Pass& pass, const Tensor& x, const Tensor& memory,
                 std::span<const TfmLayerParams> layers, std::size_t heads,
                 const SequenceLayout& layout);

// Row i = word[tokens[i]] + position[i % length].
Tensor embed_tokens(Tape& tape, const SequenceEmbeddings& emb,
                    std::span<const int> tokens, std::size_t length);

// X_0: row i = word[mask_id] + position[i], for 1 <= length <= l_max.
Tensor embed_masked_sequence(Tape& tape, const SequenceEmbeddings& emb,
                             std::size_t length, int mask_id);

// Additive mask hiding future positions (0 on/below the diagonal, -inf above).
Tensor causal_mask(std::size_t length);

}  // namespace o2na
