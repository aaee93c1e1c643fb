#include "o2na/ar_baseline.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "o2na/errors.hpp"
#include "o2na/vocab.hpp"

namespace o2na {

void ArDims::validate() const {
  tfm.validate();
  if (frames == 0) throw ConfigError("frames must be positive");
  if (image_dim == 0 || motion_dim == 0) throw ConfigError("feature dims must be positive");
  if (word_count <= 3) throw ConfigError("vocabulary holds only special tokens");
  if (max_length == 0) throw ConfigError("max_length must be positive");
}

ArModel::ArModel(const ArDims& dims, std::uint64_t seed) : dims_(dims) {
  dims_.validate();
  Rng rng(seed);
  const std::size_t d = dims_.tfm.d_model;
  proj_image_ = params_.add_glorot("ar.proj.image", dims_.image_dim, d, rng);
  proj_motion_ = params_.add_glorot("ar.proj.motion", dims_.motion_dim, d, rng);
  embeddings_ = make_embeddings(params_, "ar.emb", dims_.vocab_size(),
                                dims_.max_length + 1, d, rng);
  layers_ = make_tfm_stack(params_, "ar.tfm", dims_.tfm, rng);
  out_ = params_.add_glorot("ar.out", d, dims_.vocab_size(), rng);
}

Tensor ArModel::project_features(Tape& tape, const Tensor& image,
                                 const Tensor& motion) const {
  if (image.cols() != dims_.image_dim || motion.cols() != dims_.motion_dim ||
      image.rows() != motion.rows() || image.rows() % dims_.frames != 0) {
    throw DimensionError("AR features " + shape_string(image.shape()) + "/" +
                         shape_string(motion.shape()) + " do not match configuration");
  }
  const std::size_t batch = image.rows() / dims_.frames;
  return concat_rows(tape, matmul(tape, image, proj_image_),
                     matmul(tape, motion, proj_motion_), batch);
}

Tensor ArModel::logits(Pass& pass, std::span<const int> inputs, const Tensor& v,
                       std::size_t batch, std::size_t length,
                       std::span<const std::size_t> valid_lengths) const {
  if (inputs.size() != batch * length) {
    throw DimensionError(std::to_string(inputs.size()) + " AR inputs for batch " +
                         std::to_string(batch) + " x length " + std::to_string(length));
  }
  Tensor x = embed_tokens(pass.tape, embeddings_, inputs, length);
  Tensor mask = causal_mask(length);
  SequenceLayout layout{batch, length, 2 * dims_.frames, valid_lengths, &mask};
  Tensor h = tfm_stack(pass, x, v, layers_, dims_.tfm.heads, layout);
  return matmul(pass.tape, h, out_);
}

Tensor ArModel::loss(Pass& pass, const TrainingBatch& batch) const {
  const std::size_t b = batch.size, len = batch.max_length + 1;
  if (batch.max_length > dims_.max_length) {
    throw DataError("batch captions longer than AR max_length " +
                    std::to_string(dims_.max_length));
  }
  std::vector<int> inputs(b * len, kPadId), targets(b * len, kPadId);
  std::vector<std::size_t> valid(b);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t l = batch.lengths[i];
    inputs[i * len] = dims_.bos_id();
    for (std::size_t t = 0; t < l; ++t) {
      const int tok = batch.captions[i * batch.max_length + t];
      inputs[i * len + t + 1] = tok;
      targets[i * len + t] = tok;
    }
    targets[i * len + l] = dims_.eos_id();
    valid[i] = l + 1;
  }
  Tensor v = project_features(pass.tape, batch.image, batch.motion);
  Tensor z = logits(pass, inputs, v, b, len, valid);
  return cross_entropy_rows(pass.tape, z, targets, kPadId);
}

double ArModel::mean_log_likelihood(const Tensor& v, std::span<const int> caption) const {
  if (caption.empty() || caption.size() > dims_.max_length) {
    throw DataError("AR scoring needs 1.." + std::to_string(dims_.max_length) +
                    " tokens, got " + std::to_string(caption.size()));
  }
  Tape tape(Tape::Mode::kInference);
  Pass pass{tape};
  std::vector<int> inputs{dims_.bos_id()};
  inputs.insert(inputs.end(), caption.begin(), caption.end());
  std::vector<int> targets(caption.begin(), caption.end());
  targets.push_back(dims_.eos_id());
  Tensor z = logits(pass, inputs, v, 1, inputs.size());
  return -cross_entropy_rows(tape, z, targets, -1).item();
}

namespace {

struct LayerCache {
  std::vector<double> keys, values;  // projected self-attention rows so far
  Tensor memory_keys, memory_values;
};

Tensor rows_tensor(const std::vector<double>& data, std::size_t d) {
  return Tensor({data.size() / d, d}, data);
}

void append(std::vector<double>& cache, const Tensor& row) {
  auto r = row.data();
  cache.insert(cache.end(), r.begin(), r.end());
}

}  // namespace

ArDecodeResult ArModel::decode(const Tensor& v, const ArDecodeOptions& options) const {
  if (options.max_length == 0 || options.max_length > dims_.max_length) {
    throw ConfigError("AR max_length must lie in [1, " + std::to_string(dims_.max_length) +
                      "], got " + std::to_string(options.max_length));
  }
  if (v.rows() != 2 * dims_.frames) {
    throw DimensionError("AR decode expects one video's " + std::to_string(2 * dims_.frames) +
                         " memory rows, got " + std::to_string(v.rows()));
  }
  const auto start = std::chrono::steady_clock::now();
  Tape tape(Tape::Mode::kInference);
  const std::size_t d = dims_.tfm.d_model, heads = dims_.tfm.heads;
  std::vector<LayerCache> caches(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& src = layers_[i].src_attn;
    caches[i].memory_keys = linear(tape, v, src.k, src.k_bias);
    caches[i].memory_values = linear(tape, v, src.v, src.v_bias);
  }
  ArDecodeResult result;
  int token = dims_.bos_id();
  AttentionLayout single;
  for (std::size_t step = 0; step < options.max_length + 1; ++step) {
    Tensor x = add(tape, embedding_lookup(tape, embeddings_.word, std::span<const int>(&token, 1)),
                   embedding_lookup(tape, embeddings_.position,
                                    std::vector<int>{static_cast<int>(step)}));
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& layer = layers_[i];
      auto& cache = caches[i];
      const auto& sa = layer.self_attn;
      append(cache.keys, linear(tape, x, sa.k, sa.k_bias));
      append(cache.values, linear(tape, x, sa.v, sa.v_bias));
      AttentionLayout l = single;
      l.heads = heads;
      Tensor ctx = attention(tape, linear(tape, x, sa.q, sa.q_bias),
                             rows_tensor(cache.keys, d), rows_tensor(cache.values, d), l);
      Tensor h = layer_norm(tape, add(tape, x, linear(tape, ctx, sa.o, sa.o_bias)),
                            layer.norm_self.gain, layer.norm_self.bias);
      const auto& src = layer.src_attn;
      Tensor s = attention(tape, linear(tape, h, src.q, src.q_bias), cache.memory_keys,
                           cache.memory_values, l);
      h = layer_norm(tape, add(tape, h, linear(tape, s, src.o, src.o_bias)),
                     layer.norm_src.gain, layer.norm_src.bias);
      Tensor f = linear(tape, relu(tape, linear(tape, h, layer.ff.w1, layer.ff.b1)),
                        layer.ff.w2, layer.ff.b2);
      x = layer_norm(tape, add(tape, h, f), layer.norm_ff.gain, layer.norm_ff.bias);
    }
    Tensor z = matmul(tape, x, out_);
    ++result.forward_passes;
    auto zs = z.data();
    if (!std::isfinite(zs[0])) throw ModelStateError("AR logits are not finite");
    const bool eos_allowed = result.tokens.size() >= options.min_length;
    const bool must_stop = result.tokens.size() == options.max_length;
    int best = -1;
    double best_value = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < zs.size(); ++c) {
      const int id = static_cast<int>(c);
      if (id == kPadId || id == kMaskId || id == dims_.bos_id()) continue;
      if (id == dims_.eos_id() ? !eos_allowed : must_stop) continue;
      if (best < 0 || zs[c] > best_value) {
        best = id;
        best_value = zs[c];
      }
    }
    if (best == dims_.eos_id() || must_stop) break;
    result.tokens.push_back(best);
    token = best;
  }
  result.milliseconds =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
          .count();
  return result;
}

}  // namespace o2na
