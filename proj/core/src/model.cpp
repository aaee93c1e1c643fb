#include "o2na/model.hpp"

#include <algorithm>
#include <numeric>

#include "o2na/errors.hpp"
#include "o2na/vocab.hpp"

namespace o2na {

void ModelDims::validate() const {
  tfm.validate();
  if (frames == 0) throw ConfigError("frames must be positive");
  if (image_dim == 0 || motion_dim == 0) throw ConfigError("feature dims must be positive");
  if (vocab_size <= 3) throw ConfigError("vocabulary holds only special tokens");
  if (object_count == 0) throw ConfigError("object vocabulary is empty");
  if (max_length == 0) throw ConfigError("max_length must be positive");
}

std::vector<int> make_object_target(std::span<const int> caption,
                                    std::span<const int> object_word_ids) {
  std::vector<int> out(caption.begin(), caption.end());
  for (auto& t : out) {
    if (t == kPadId) continue;
    if (std::find(object_word_ids.begin(), object_word_ids.end(), t) ==
        object_word_ids.end()) {
      t = kMaskId;
    }
  }
  return out;
}

std::vector<int> make_refine_input_train(std::span<const int> caption, double ratio,
                                         Rng& rng) {
  if (ratio < 0.0 || ratio > 1.0) {
    throw ConfigError("mask ratio must lie in [0, 1], got " + std::to_string(ratio));
  }
  std::vector<int> out(caption.begin(), caption.end());
  const std::size_t l = caption.size();
  const auto n = static_cast<std::size_t>(static_cast<double>(l) * ratio);
  // Partial Fisher-Yates: the first n entries become a uniform n-subset.
  std::vector<std::size_t> order(l);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, l - 1);
    std::swap(order[i], order[pick(rng)]);
    out[order[i]] = kMaskId;
  }
  return out;
}

O2naModel::O2naModel(const ModelDims& dims, std::uint64_t seed) : dims_(dims) {
  dims_.validate();
  Rng rng(seed);
  const std::size_t d = dims_.tfm.d_model, m = dims_.object_count;
  proj_image_ = params_.add_glorot("proj.image", dims_.image_dim, d, rng);
  proj_motion_ = params_.add_glorot("proj.motion", dims_.motion_dim, d, rng);
  op_w1_ = params_.add_glorot("op.w1", d, d, rng);
  op_w2_ = params_.add_glorot("op.w2", d, m, rng);
  lp_w_v_ = params_.add_glorot("lp.w_v", d, d, rng);
  lp_w_o_ = params_.add_glorot("lp.w_o", m, d, rng);
  lp_w_l_ = params_.add_glorot("lp.w_l", 2 * d, dims_.max_length, rng);
  embeddings_ = make_embeddings(params_, "emb", dims_.vocab_size, dims_.max_length, d, rng);
  og_w_o_ = params_.add_glorot("og.w_o", m, d, rng);
  og_layers_ = make_tfm_stack(params_, "og.tfm", dims_.tfm, rng);
  og_out_ = params_.add_glorot("og.out", d, dims_.vocab_size, rng);
  cg_w_o_ = params_.add_glorot("cg.w_o", m, d, rng);
  cg_layers_ = make_tfm_stack(params_, "cg.tfm", dims_.tfm, rng);
  cg_out_ = params_.add_glorot("cg.out", d, dims_.vocab_size, rng);
}

Tensor O2naModel::project_features(Tape& tape, const Tensor& image,
                                   const Tensor& motion) const {
  if (image.cols() != dims_.image_dim || motion.cols() != dims_.motion_dim) {
    throw DimensionError("feature widths " + std::to_string(image.cols()) + "/" +
                         std::to_string(motion.cols()) + " differ from configured " +
                         std::to_string(dims_.image_dim) + "/" +
                         std::to_string(dims_.motion_dim));
  }
  if (image.rows() != motion.rows() || image.rows() % dims_.frames != 0) {
    throw DimensionError("image/motion rows " + std::to_string(image.rows()) + "/" +
                         std::to_string(motion.rows()) + " are not whole videos of " +
                         std::to_string(dims_.frames) + " frames");
  }
  const std::size_t batch = image.rows() / dims_.frames;
  return concat_rows(tape, matmul(tape, image, proj_image_),
                     matmul(tape, motion, proj_motion_), batch);
}

ObjectScores O2naModel::predict_objects(Tape& tape, const Tensor& v,
                                        std::size_t batch) const {
  Tensor pooled = mean_pool(tape, v, batch);
  Tensor logits = matmul(tape, relu(tape, matmul(tape, pooled, op_w1_)), op_w2_);
  Tensor probs = sigmoid(tape, logits);
  return {logits, probs};
}

Tensor O2naModel::length_logits(Tape& tape, const Tensor& v, const Tensor& objects,
                                std::size_t batch) const {
  if (objects.rows() != batch || objects.cols() != dims_.object_count) {
    throw DimensionError("object vector " + shape_string(objects.shape()) +
                         " does not match batch " + std::to_string(batch) + " x " +
                         std::to_string(dims_.object_count));
  }
  Tensor pooled = mean_pool(tape, v, batch);
  Tensor hidden = relu(tape, concat_last_dim(tape, matmul(tape, pooled, lp_w_v_),
                                             matmul(tape, objects, lp_w_o_)));
  return matmul(tape, hidden, lp_w_l_);
}

Tensor O2naModel::length_distribution(Tape& tape, const Tensor& v,
                                      const Tensor& objects, std::size_t batch) const {
  return softmax(tape, length_logits(tape, v, objects, batch), 1);
}

Tensor O2naModel::conditioned_input(Tape& tape, const Tensor& x, const Tensor& objects,
                                    const Tensor& w) const {
  return broadcast_add_rows(tape, x, matmul(tape, objects, w));
}

Tensor O2naModel::object_generator_logits(Pass& pass, const Tensor& v,
                                          const Tensor& objects, std::size_t batch,
                                          std::size_t length,
                                          std::span<const std::size_t> valid_lengths) const {
  if (length == 0 || length > dims_.max_length) {
    throw DimensionError("length " + std::to_string(length) + " outside [1, " +
                         std::to_string(dims_.max_length) + "]");
  }
  std::vector<int> masked(batch * length, kMaskId);
  Tensor x = embed_tokens(pass.tape, embeddings_, masked, length);
  x = conditioned_input(pass.tape, x, objects, og_w_o_);
  SequenceLayout layout{batch, length, 2 * dims_.frames, valid_lengths, nullptr};
  Tensor h = tfm_stack(pass, x, v, og_layers_, dims_.tfm.heads, layout);
  return matmul(pass.tape, h, og_out_);
}

Tensor O2naModel::caption_generator_logits(
    Pass& pass, std::span<const int> tokens, const Tensor& v, const Tensor& objects,
    std::size_t batch, std::size_t length,
    std::span<const std::size_t> valid_lengths) const {
  if (tokens.size() != batch * length) {
    throw DimensionError(std::to_string(tokens.size()) + " tokens for batch " +
                         std::to_string(batch) + " x length " + std::to_string(length));
  }
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= dims_.vocab_size) {
      throw IndexError("token id " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(dims_.vocab_size));
    }
  }
  Tensor x = embed_tokens(pass.tape, embeddings_, tokens, length);
  x = conditioned_input(pass.tape, x, objects, cg_w_o_);
  SequenceLayout layout{batch, length, 2 * dims_.frames, valid_lengths, nullptr};
  Tensor h = tfm_stack(pass, x, v, cg_layers_, dims_.tfm.heads, layout);
  return matmul(pass.tape, h, cg_out_);
}

LossBreakdown O2naModel::full_loss(Pass& pass, const TrainingBatch& batch,
                                   const LossOptions& options, Rng& mask_rng) const {
  const std::size_t b = batch.size, len = batch.max_length;
  if (b == 0) throw DataError("empty training batch");
  if (batch.captions.size() != b * len || batch.object_targets.size() != b * len ||
      batch.lengths.size() != b) {
    throw DimensionError("training batch arrays do not match " + std::to_string(b) +
                         " x " + std::to_string(len));
  }
  for (double w : options.weights.lambda) {
    if (w < 0.0) throw ConfigError("loss weights must be non-negative");
  }
  std::vector<int> length_targets(b);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t l = batch.lengths[i];
    const std::string id = i < batch.video_ids.size() ? batch.video_ids[i] : std::to_string(i);
    if (l == 0 || l > dims_.max_length) {
      throw DataError("caption of video " + id + " has length " + std::to_string(l) +
                      ", outside [1, " + std::to_string(dims_.max_length) + "]");
    }
    if (l > len) throw DataError("caption of video " + id + " exceeds batch width");
    length_targets[i] = static_cast<int>(l - 1);
  }
  Tape& tape = pass.tape;
  Tensor v = project_features(tape, batch.image, batch.motion);
  if (v.rows() != b * 2 * dims_.frames) {
    throw DimensionError("feature rows do not match batch size " + std::to_string(b));
  }

  Tensor l_op = logistic_loss(tape, predict_objects(tape, v, b).logits,
                              batch.video_objects, options.object_labels);
  Tensor l_lp = cross_entropy_rows(tape, length_logits(tape, v, batch.caption_objects, b),
                                   length_targets, -1);

  auto checked_ce = [&](const Tensor& logits, const std::vector<int>& targets,
                        const char* term) {
    std::size_t counted = 0;
    Tensor loss = cross_entropy_rows(tape, logits, targets, kPadId, &counted);
    if (counted == 0) throw DataError(std::string(term) + ": every target is [PAD]");
    return loss;
  };

  Tensor og_logits = object_generator_logits(pass, v, batch.caption_objects, b, len,
                                             batch.lengths);
  Tensor l_og = checked_ce(og_logits, batch.object_targets, "object generator loss");

  Tensor cg_logits = caption_generator_logits(pass, batch.object_targets, v,
                                              batch.caption_objects, b, len, batch.lengths);
  Tensor l_cg = checked_ce(cg_logits, batch.captions, "caption generator loss");

  std::vector<int> refine_input(b * len, kPadId);
  for (std::size_t i = 0; i < b; ++i) {
    std::span<const int> cap(batch.captions.data() + i * len, batch.lengths[i]);
    auto x2 = make_refine_input_train(cap, options.mask_ratio, mask_rng);
    std::copy(x2.begin(), x2.end(), refine_input.begin() + static_cast<std::ptrdiff_t>(i * len));
  }
  Tensor refine_logits = caption_generator_logits(pass, refine_input, v,
                                                  batch.caption_objects, b, len,
                                                  batch.lengths);
  Tensor l_refine = checked_ce(refine_logits, batch.captions, "refinement loss");

  const std::array<Tensor, 5> terms{l_lp, l_op, l_og, l_cg, l_refine};
  Tensor total = weighted_sum(tape, terms, options.weights.lambda);
  LossBreakdown out;
  out.length = l_lp.item();
  out.object = l_op.item();
  out.object_gen = l_og.item();
  out.caption = l_cg.item();
  out.refine = l_refine.item();
  out.total = total.item();
  out.total_tensor = total;
  return out;
}

}  // namespace o2na
