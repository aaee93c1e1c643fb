#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "o2na/ar_baseline.hpp"
#include "o2na/model.hpp"
#include "o2na/vocab.hpp"

namespace o2na {

struct ControlSpec {
  std::vector<std::size_t> forced_on;   // object indices
  std::vector<std::size_t> forced_off;
  // With forced_on non-empty, every other object is switched off.
  bool exclusive = true;
  double gamma = 0.8;
  std::optional<std::size_t> length;
  std::size_t iterations = 1;  // T
  double mask_ratio = 0.5;     // r
  bool lock_objects = false;
  std::size_t beam = 5;        // k candidate lengths for npd_decode
  bool dedup = true;
  bool teacher_rescore = false;

  void validate(std::size_t object_count, std::size_t max_length) const;
};

// Threshold at gamma, then apply the overrides. Result is strictly 0/1.
std::vector<double> select_objects(std::span<const double> probs, const ControlSpec& spec);

struct RemaskResult {
  std::vector<int> tokens;
  std::vector<std::size_t> positions;  // ascending
  bool clamped = false;
};

// Masks the n positions with the smallest confidence (ties: lower index
// first). Locked positions are never chosen; n is clamped to what is left.
RemaskResult remask_lowest_confidence(std::span<const int> tokens,
                                      std::span<const double> confidences, std::size_t n,
                                      const std::vector<bool>& locked = {});

// Collapses runs of identical consecutive tokens.
std::vector<int> deduplicate(std::span<const int> tokens);

struct IterationTrace {
  std::vector<std::size_t> remasked;
  bool clamped = false;
  std::vector<int> tokens;
  std::vector<double> confidences;
};

struct CandidateTrace {
  std::size_t length = 0;
  std::vector<int> draft;  // Y_obj
  std::vector<int> first;  // Y_1
  std::vector<double> first_confidences;
  std::vector<IterationTrace> iterations;
  std::vector<int> raw;  // last generated sequence, exactly `length` tokens
  std::vector<double> confidences;
  std::vector<int> final;  // stripped and de-duplicated
  std::size_t stripped = 0;
  double score = 0.0;
  std::size_t forward_passes = 0;
};

struct DecodeTrace {
  std::string video_id;
  std::vector<double> object_probs;
  std::vector<std::size_t> objects;  // selected object indices
  std::vector<double> length_probs;
  std::vector<CandidateTrace> candidates;
  std::size_t chosen = 0;
  std::map<std::string, double> stage_ms;

  const CandidateTrace& best() const { return candidates.at(chosen); }
  const std::vector<int>& final() const { return best().final; }
};

class Decoder {
 public:
  // `teacher` is only consulted when a spec asks for re-scoring.
  Decoder(const O2naModel& model, const ObjectVocabulary& objects,
          const ArModel* teacher = nullptr);

  // One video: image and motion are N x d_i / N x d_m.
  DecodeTrace decode_o2na(const Tensor& image, const Tensor& motion,
                          const ControlSpec& spec) const;
  // Top-k lengths of the length predictor, best candidate by score.
  DecodeTrace npd_decode(const Tensor& image, const Tensor& motion,
                         const ControlSpec& spec) const;

 private:
  DecodeTrace run(const Tensor& image, const Tensor& motion, const ControlSpec& spec,
                  std::size_t beam) const;

  const O2naModel& model_;
  std::vector<int> object_word_ids_;
  const ArModel* teacher_;
};

// One JSON line: video_id, objects, length, draft, iterations[], final, stage_ms{}.
std::string trace_to_json(const DecodeTrace& trace, const Vocabulary& vocab,
                          const ObjectVocabulary& objects);

}  // namespace o2na
