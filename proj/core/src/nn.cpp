#include "o2na/nn.hpp"

#include <limits>

#include "o2na/errors.hpp"

namespace o2na {

void TfmDims::validate() const {
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) +
                      ") must be a positive multiple of heads (" +
                      std::to_string(heads) + ")");
  }
  if (d_ff == 0) throw ConfigError("d_ff must be positive");
  if (layers == 0) throw ConfigError("layers must be at least 1");
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("dropout must lie in [0, 1), got " + std::to_string(dropout));
  }
}

AttentionParams make_attention(ParameterSet& params, const std::string& prefix,
                               std::size_t d, Rng& rng) {
  AttentionParams a;
  a.q = params.add_glorot(prefix + ".q", d, d, rng);
  a.q_bias = params.add_constant(prefix + ".q_bias", {1, d}, 0.0);
  a.k = params.add_glorot(prefix + ".k", d, d, rng);
  a.k_bias = params.add_constant(prefix + ".k_bias", {1, d}, 0.0);
  a.v = params.add_glorot(prefix + ".v", d, d, rng);
  a.v_bias = params.add_constant(prefix + ".v_bias", {1, d}, 0.0);
  a.o = params.add_glorot(prefix + ".o", d, d, rng);
  a.o_bias = params.add_constant(prefix + ".o_bias", {1, d}, 0.0);
  return a;
}

FeedForwardParams make_feed_forward(ParameterSet& params, const std::string& prefix,
                                    std::size_t d_model, std::size_t d_ff, Rng& rng) {
  FeedForwardParams f;
  f.w1 = params.add_glorot(prefix + ".w1", d_model, d_ff, rng);
  f.b1 = params.add_constant(prefix + ".b1", {1, d_ff}, 0.0);
  f.w2 = params.add_glorot(prefix + ".w2", d_ff, d_model, rng);
  f.b2 = params.add_constant(prefix + ".b2", {1, d_model}, 0.0);
  return f;
}

namespace {

NormParams make_norm(ParameterSet& params, const std::string& prefix, std::size_t d) {
  return {params.add_constant(prefix + ".gain", {1, d}, 1.0),
          params.add_constant(prefix + ".bias", {1, d}, 0.0)};
}

}  // namespace

std::vector<TfmLayerParams> make_tfm_stack(ParameterSet& params,
                                           const std::string& prefix,
                                           const TfmDims& dims, Rng& rng) {
  dims.validate();
  std::vector<TfmLayerParams> layers;
  for (std::size_t i = 0; i < dims.layers; ++i) {
    const std::string p = prefix + "." + std::to_string(i);
    TfmLayerParams layer;
    layer.self_attn = make_attention(params, p + ".self", dims.d_model, rng);
    layer.norm_self = make_norm(params, p + ".self_norm", dims.d_model);
    layer.src_attn = make_attention(params, p + ".src", dims.d_model, rng);
    layer.norm_src = make_norm(params, p + ".src_norm", dims.d_model);
    layer.ff = make_feed_forward(params, p + ".ff", dims.d_model, dims.d_ff, rng);
    layer.norm_ff = make_norm(params, p + ".ff_norm", dims.d_model);
    layers.push_back(std::move(layer));
  }
  return layers;
}

SequenceEmbeddings make_embeddings(ParameterSet& params, const std::string& prefix,
                                   std::size_t vocab_size, std::size_t max_length,
                                   std::size_t d_model, Rng& rng) {
  return {params.add_normal(prefix + ".word", {vocab_size, d_model}, 0.02, rng),
          params.add_normal(prefix + ".pos", {max_length, d_model}, 0.02, rng)};
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  return broadcast_add_rows(tape, matmul(tape, x, w), b);
}

Tensor multi_head_attention(Pass& pass, const Tensor& query, const Tensor& key,
                            const Tensor& value, const AttentionParams& params,
                            std::size_t heads, const AttentionLayout& layout) {
  Tape& tape = pass.tape;
  Tensor q = linear(tape, query, params.q, params.q_bias);
  Tensor k = linear(tape, key, params.k, params.k_bias);
  Tensor v = linear(tape, value, params.v, params.v_bias);
  AttentionLayout l = layout;
  l.heads = heads;
  l.dropout = pass.dropout;
  l.rng = pass.rng;
  Tensor ctx = attention(tape, q, k, v, l);
  return linear(tape, ctx, params.o, params.o_bias);
}

Tensor feed_forward(Pass& pass, const Tensor& x, const FeedForwardParams& params) {
  Tape& tape = pass.tape;
  Tensor hidden = relu(tape, linear(tape, x, params.w1, params.b1));
  hidden = dropout(tape, hidden, pass.dropout, pass.rng);
  return linear(tape, hidden, params.w2, params.b2);
}

Tensor tfm_layer(Pass& pass, const Tensor& x, const Tensor& memory,
                 const TfmLayerParams& params, std::size_t heads,
                 const SequenceLayout& layout) {
  Tape& tape = pass.tape;
  if (x.cols() != memory.cols()) {
    throw DimensionError("tfm_layer: sequence width " + std::to_string(x.cols()) +
                         " differs from memory width " + std::to_string(memory.cols()));
  }
  if (x.rows() != layout.batch * layout.length ||
      memory.rows() != layout.batch * layout.memory_length) {
    throw DimensionError("tfm_layer: rows " + std::to_string(x.rows()) + "/" +
                         std::to_string(memory.rows()) + " do not match layout");
  }
  AttentionLayout self_layout;
  self_layout.batch = layout.batch;
  self_layout.key_lengths = layout.valid_lengths;
  self_layout.additive_mask = layout.self_mask;
  Tensor h = multi_head_attention(pass, x, x, x, params.self_attn, heads, self_layout);
  h = layer_norm(tape, add(tape, x, h), params.norm_self.gain, params.norm_self.bias);

  AttentionLayout src_layout;
  src_layout.batch = layout.batch;
  Tensor s = multi_head_attention(pass, h, memory, memory, params.src_attn, heads,
                                  src_layout);
  h = layer_norm(tape, add(tape, h, s), params.norm_src.gain, params.norm_src.bias);

  Tensor f = feed_forward(pass, h, params.ff);
  return layer_norm(tape, add(tape, h, f), params.norm_ff.gain, params.norm_ff.bias);
}

Tensor tfm_stack(Pass& pass, const Tensor& x, const Tensor& memory,
                 std::span<const TfmLayerParams> layers, std::size_t heads,
                 const SequenceLayout& layout) {
  Tensor h = x;
  for (const auto& layer : layers) h = tfm_layer(pass, h, memory, layer, heads, layout);
  return h;
}

Tensor embed_tokens(Tape& tape, const SequenceEmbeddings& emb,
                    std::span<const int> tokens, std::size_t length) {
  if (length == 0 || length > emb.max_length()) {
    throw DimensionError("sequence length " + std::to_string(length) +
                         " outside [1, " + std::to_string(emb.max_length()) + "]");
  }
  if (tokens.size() % length != 0) {
    throw DimensionError(std::to_string(tokens.size()) +
                         " tokens do not form rows of length " + std::to_string(length));
  }
  std::vector<int> positions(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    positions[i] = static_cast<int>(i % length);
  }
  return add(tape, embedding_lookup(tape, emb.word, tokens),
             embedding_lookup(tape, emb.position, positions));
}

Tensor embed_masked_sequence(Tape& tape, const SequenceEmbeddings& emb,
                             std::size_t length, int mask_id) {
  if (length == 0 || length > emb.max_length()) {
    throw DimensionError("masked sequence length " + std::to_string(length) +
                         " outside [1, " + std::to_string(emb.max_length()) + "]");
  }
  std::vector<int> tokens(length, mask_id);
  return embed_tokens(tape, emb, tokens, length);
}

Tensor causal_mask(std::size_t length) {
  Tensor m({length, length}, 0.0);
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t j = i + 1; j < length; ++j)
      m.at(i, j) = -std::numeric_limits<double>::infinity();
  return m;
}

}  // namespace o2na
