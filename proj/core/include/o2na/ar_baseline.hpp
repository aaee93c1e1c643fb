#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "o2na/model.hpp"
#include "o2na/nn.hpp"
#include "o2na/parameters.hpp"

namespace o2na {

// Left-to-right baseline: the same decoder layer with a causal self-attention
// mask, no object conditioning, and two extra ids for BOS and EOS.
struct ArDims {
  std::size_t frames = 8;
  std::size_t image_dim = 2048;
  std::size_t motion_dim = 2048;
  std::size_t word_count = 0;  // |D|; BOS = |D|, EOS = |D| + 1
  std::size_t max_length = 30;
  TfmDims tfm;

  void validate() const;
  int bos_id() const { return static_cast<int>(word_count); }
  int eos_id() const { return static_cast<int>(word_count) + 1; }
  std::size_t vocab_size() const { return word_count + 2; }
};

struct ArDecodeOptions {
  std::size_t max_length = 30;
  // EOS is suppressed until this many tokens have been emitted.
  std::size_t min_length = 0;
};

struct ArDecodeResult {
  std::vector<int> tokens;  // without BOS/EOS
  std::size_t forward_passes = 0;
  double milliseconds = 0.0;
};

class ArModel {
 public:
  ArModel(const ArDims& dims, std::uint64_t seed);

  const ArDims& dims() const { return dims_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  Tensor project_features(Tape& tape, const Tensor& image, const Tensor& motion) const;

  // Teacher-forced logits for `batch` rows of `length` input ids (BOS first).
  Tensor logits(Pass& pass, std::span<const int> inputs, const Tensor& v,
                std::size_t batch, std::size_t length,
                std::span<const std::size_t> valid_lengths = {}) const;

  // Mean next-token cross entropy over caption tokens and the closing EOS.
  Tensor loss(Pass& pass, const TrainingBatch& batch) const;

  // Mean per-token log-probability of caption + EOS given one video's V.
  double mean_log_likelihood(const Tensor& v, std::span<const int> caption) const;

  // Greedy decode with a key/value cache: one single-row extension per step.
  ArDecodeResult decode(const Tensor& v, const ArDecodeOptions& options) const;

 private:
  ArDims dims_;
  ParameterSet params_;
  Tensor proj_image_, proj_motion_, out_;
  SequenceEmbeddings embeddings_;
  std::vector<TfmLayerParams> layers_;
};

}  // namespace o2na
