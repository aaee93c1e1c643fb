#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "o2na/nn.hpp"
#include "o2na/ops.hpp"
#include "o2na/parameters.hpp"

namespace o2na {

struct ModelDims {
  std::size_t frames = 8;  // N; V has 2N rows
  std::size_t image_dim = 2048;
  std::size_t motion_dim = 2048;
  std::size_t vocab_size = 0;    // |D|
  std::size_t object_count = 0;  // M_obj
  std::size_t max_length = 30;   // l_max
  TfmDims tfm;

  void validate() const;
};

// Order matches the joint objective: LP, OP, OG, CG, refined CG.
struct LossWeights {
  std::array<double, 5> lambda{1.0, 1.0, 1.0, 1.0, 1.0};
};

struct LossBreakdown {
  double length = 0, object = 0, object_gen = 0, caption = 0, refine = 0;
  double total = 0;
  Tensor total_tensor;
};

// One training step's worth of (video, caption) samples, padded to the
// longest caption with [PAD].
struct TrainingBatch {
  std::size_t size = 0;
  std::size_t max_length = 0;
  Tensor image;   // (size * frames) x image_dim
  Tensor motion;  // (size * frames) x motion_dim
  std::vector<int> captions;        // size * max_length, Y*_cap
  std::vector<int> object_targets;  // size * max_length, Y*_obj
  std::vector<std::size_t> lengths; // l* per sample
  Tensor caption_objects;           // size x M_obj, conditioning O*
  Tensor video_objects;             // size x M_obj, OP labels (video union)
  std::vector<std::string> video_ids;
};

struct LossOptions {
  LossWeights weights;
  double mask_ratio = 0.5;
  LogisticLabels object_labels = LogisticLabels::kSigned;
};

struct ObjectScores {
  Tensor logits;  // batch x M_obj
  Tensor probs;
};

// Y*_obj: every token that is not an object word becomes [MASK].
std::vector<int> make_object_target(std::span<const int> caption,
                                    std::span<const int> object_word_ids);

// X_2 at training time: floor(l * r) distinct positions, drawn uniformly
// without replacement, replaced by [MASK].
std::vector<int> make_refine_input_train(std::span<const int> caption, double ratio,
                                         Rng& rng);

// Object predictor, length predictor, object generator and caption generator
// over a shared projected video memory V.
class O2naModel {
 public:
  O2naModel(const ModelDims& dims, std::uint64_t seed);

  const ModelDims& dims() const { return dims_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  // V = concat_rows(I W_I, M W_M) per video: (batch*2N) x d_h.
  Tensor project_features(Tape& tape, const Tensor& image, const Tensor& motion) const;

  // O = sigmoid(relu(MP(V) W_O1) W_O2).
  ObjectScores predict_objects(Tape& tape, const Tensor& v, std::size_t batch) const;

  // relu([MP(V) W_LV ; O W_LO]) W_L; class c <-> length c + 1.
  Tensor length_logits(Tape& tape, const Tensor& v, const Tensor& objects,
                       std::size_t batch) const;
  Tensor length_distribution(Tape& tape, const Tensor& v, const Tensor& objects,
                             std::size_t batch) const;

  // TFM(X_0 (+) O W_O, V, V) W_OG for `batch` masked sequences of `length`
  // rows (valid_lengths marks real positions when padded).
  Tensor object_generator_logits(Pass& pass, const Tensor& v, const Tensor& objects,
                                 std::size_t batch, std::size_t length,
                                 std::span<const std::size_t> valid_lengths = {}) const;

  // TFM(embed(tokens) (+) O W'_O, V, V) W_CG.
  Tensor caption_generator_logits(Pass& pass, std::span<const int> tokens,
                                  const Tensor& v, const Tensor& objects,
                                  std::size_t batch, std::size_t length,
                                  std::span<const std::size_t> valid_lengths = {}) const;

  LossBreakdown full_loss(Pass& pass, const TrainingBatch& batch,
                          const LossOptions& options, Rng& mask_rng) const;

  const SequenceEmbeddings& embeddings() const { return embeddings_; }

 private:
  Tensor conditioned_input(Tape& tape, const Tensor& x, const Tensor& objects,
                           const Tensor& w) const;

  ModelDims dims_;
  ParameterSet params_;
  Tensor proj_image_, proj_motion_;
  Tensor op_w1_, op_w2_;
  Tensor lp_w_v_, lp_w_o_, lp_w_l_;
  Tensor og_w_o_, cg_w_o_;
  Tensor og_out_, cg_out_;
  SequenceEmbeddings embeddings_;
  std::vector<TfmLayerParams> og_layers_, cg_layers_;
};

}  // namespace o2na
