#include "o2na/decoding.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "o2na/errors.hpp"

namespace o2na {

void ControlSpec::validate(std::size_t object_count, std::size_t max_length) const {
  for (const auto* set : {&forced_on, &forced_off}) {
    for (auto o : *set) {
      if (o >= object_count) {
        throw ConfigError("forced object id " + std::to_string(o) +
                          " outside object vocabulary of " + std::to_string(object_count));
      }
    }
  }
  for (auto o : forced_on) {
    if (std::find(forced_off.begin(), forced_off.end(), o) != forced_off.end()) {
      throw ConfigError("object id " + std::to_string(o) + " is forced both on and off");
    }
  }
  if (gamma < 0.0 || gamma > 1.0) {
    throw ConfigError("gamma must lie in [0, 1], got " + std::to_string(gamma));
  }
  if (mask_ratio < 0.0 || mask_ratio > 1.0) {
    throw ConfigError("mask ratio must lie in [0, 1], got " + std::to_string(mask_ratio));
  }
  if (length && (*length == 0 || *length > max_length)) {
    throw ConfigError("length " + std::to_string(*length) + " outside [1, " +
                      std::to_string(max_length) + "]");
  }
  if (beam == 0) throw ConfigError("length beam must be at least 1");
}

std::vector<double> select_objects(std::span<const double> probs, const ControlSpec& spec) {
  spec.validate(probs.size(), std::numeric_limits<std::size_t>::max());
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] > spec.gamma ? 1.0 : 0.0;
  if (spec.exclusive && !spec.forced_on.empty()) std::fill(out.begin(), out.end(), 0.0);
  for (auto o : spec.forced_on) out[o] = 1.0;
  for (auto o : spec.forced_off) out[o] = 0.0;
  return out;
}

RemaskResult remask_lowest_confidence(std::span<const int> tokens,
                                      std::span<const double> confidences, std::size_t n,
                                      const std::vector<bool>& locked) {
  if (tokens.size() != confidences.size() ||
      (!locked.empty() && locked.size() != tokens.size())) {
    throw DimensionError("remask: token, confidence and lock arrays differ in length");
  }
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (locked.empty() || !locked[i]) candidates.push_back(i);
  }
  RemaskResult out;
  out.tokens.assign(tokens.begin(), tokens.end());
  if (n > candidates.size()) {
    out.clamped = true;
    n = candidates.size();
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
    return confidences[a] < confidences[b];
  });
  out.positions.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(out.positions.begin(), out.positions.end());
  for (auto p : out.positions) out.tokens[p] = kMaskId;
  return out;
}

std::vector<int> deduplicate(std::span<const int> tokens) {
  std::vector<int> out;
  for (int t : tokens) {
    if (out.empty() || out.back() != t) out.push_back(t);
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

struct RowChoice {
  std::vector<int> tokens;
  std::vector<double> confidences;
};

// Per-row argmax and its softmax probability.
RowChoice argmax_rows(const Tensor& logits) {
  const std::size_t r = logits.rows(), c = logits.cols();
  auto z = logits.data();
  RowChoice out;
  out.tokens.resize(r);
  out.confidences.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = z.data() + i * c;
    const std::size_t best = static_cast<std::size_t>(std::max_element(row, row + c) - row);
    if (!std::isfinite(row[best])) throw ModelStateError("decoder produced non-finite logits");
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(row[j] - row[best]);
    out.tokens[i] = static_cast<int>(best);
    out.confidences[i] = 1.0 / total;
  }
  return out;
}

double probability_of(const Tensor& logits, std::size_t row, int token) {
  const std::size_t c = logits.cols();
  auto z = logits.data().subspan(row * c, c);
  const double top = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double v : z) total += std::exp(v - top);
  return std::max(std::exp(z[static_cast<std::size_t>(token)] - top) / total,
                  std::numeric_limits<double>::min());
}

}  // namespace

Decoder::Decoder(const O2naModel& model, const ObjectVocabulary& objects,
                 const ArModel* teacher)
    : model_(model), teacher_(teacher) {
  if (objects.size() != model_.dims().object_count) {
    throw DimensionError("object vocabulary has " + std::to_string(objects.size()) +
                         " entries, model expects " +
                         std::to_string(model_.dims().object_count));
  }
  for (std::size_t i = 0; i < objects.size(); ++i) object_word_ids_.push_back(objects.word_id(i));
  if (!model_.parameters().all_finite()) {
    throw ModelStateError("model parameters contain NaN or infinity");
  }
  if (teacher_ && !teacher_->parameters().all_finite()) {
    throw ModelStateError("teacher parameters contain NaN or infinity");
  }
}

DecodeTrace Decoder::decode_o2na(const Tensor& image, const Tensor& motion,
                                 const ControlSpec& spec) const {
  return run(image, motion, spec, 1);
}

DecodeTrace Decoder::npd_decode(const Tensor& image, const Tensor& motion,
                                const ControlSpec& spec) const {
  return run(image, motion, spec, spec.beam);
}

DecodeTrace Decoder::run(const Tensor& image, const Tensor& motion, const ControlSpec& spec,
                         std::size_t beam) const {
  const auto& dims = model_.dims();
  spec.validate(dims.object_count, dims.max_length);
  if (spec.teacher_rescore && !teacher_) {
    throw ModelStateError("teacher re-scoring requested but no AR checkpoint is loaded");
  }
  if (beam > dims.max_length) {
    std::cerr << "warning: length beam " << beam << " clamped to " << dims.max_length << "\n";
    beam = dims.max_length;
  }
  Tape tape(Tape::Mode::kInference);
  Pass pass{tape};
  DecodeTrace trace;
  const auto total_start = Clock::now();

  auto t0 = Clock::now();
  Tensor v = model_.project_features(tape, image, motion);
  if (v.rows() != 2 * dims.frames) {
    throw DimensionError("decoder takes one video at a time");
  }
  ObjectScores scores = model_.predict_objects(tape, v, 1);
  trace.object_probs.assign(scores.probs.data().begin(), scores.probs.data().end());
  const std::vector<double> selected = select_objects(trace.object_probs, spec);
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (selected[i] > 0.5) trace.objects.push_back(i);
  }
  Tensor objects({1, dims.object_count}, selected);
  trace.stage_ms["op"] = elapsed_ms(t0);

  t0 = Clock::now();
  Tensor p_l = model_.length_distribution(tape, v, objects, 1);
  trace.length_probs.assign(p_l.data().begin(), p_l.data().end());
  const std::size_t min_length = spec.lock_objects ? std::max<std::size_t>(trace.objects.size(), 1) : 1;
  std::vector<std::size_t> lengths;
  if (spec.length) {
    if (*spec.length < min_length) {
      throw ConfigError("length " + std::to_string(*spec.length) + " cannot hold " +
                        std::to_string(trace.objects.size()) + " locked objects");
    }
    lengths.push_back(*spec.length);
  } else {
    std::vector<std::size_t> order;
    for (std::size_t l = min_length; l <= dims.max_length; ++l) order.push_back(l);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return trace.length_probs[a - 1] > trace.length_probs[b - 1];
    });
    order.resize(std::min(beam, order.size()));
    lengths = order;
  }
  trace.stage_ms["lp"] = elapsed_ms(t0);

  Tensor teacher_v;
  if (spec.teacher_rescore) {
    teacher_v = teacher_->project_features(tape, image, motion);
  }

  double og_ms = 0, cg_ms = 0, refine_ms = 0;
  for (std::size_t l : lengths) {
    CandidateTrace cand;
    cand.length = l;

    t0 = Clock::now();
    Tensor og = model_.object_generator_logits(pass, v, objects, 1, l);
    ++cand.forward_passes;
    RowChoice draft = argmax_rows(og);
    std::vector<bool> locked(l, false);
    if (spec.lock_objects) {
      for (std::size_t i = 0; i < l; ++i) {
        for (auto o : trace.objects) {
          if (draft.tokens[i] == object_word_ids_.at(o)) locked[i] = true;
        }
      }
      for (auto o : trace.objects) {
        const int word = object_word_ids_.at(o);
        if (std::find(draft.tokens.begin(), draft.tokens.end(), word) != draft.tokens.end()) {
          continue;
        }
        std::size_t best = l;
        double best_p = -1.0;
        for (std::size_t i = 0; i < l; ++i) {
          if (locked[i]) continue;
          const double p = probability_of(og, i, word);
          if (p > best_p) {
            best_p = p;
            best = i;
          }
        }
        draft.tokens[best] = word;
        locked[best] = true;
      }
    }
    cand.draft = draft.tokens;
    og_ms += elapsed_ms(t0);

    auto generate = [&](const std::vector<int>& input, std::vector<int>& tokens,
                        std::vector<double>& confidences) {
      Tensor cg = model_.caption_generator_logits(pass, input, v, objects, 1, l);
      ++cand.forward_passes;
      RowChoice y = argmax_rows(cg);
      for (std::size_t i = 0; i < l; ++i) {
        if (locked[i]) {
          y.tokens[i] = cand.draft[i];
          y.confidences[i] = probability_of(cg, i, cand.draft[i]);
        }
      }
      tokens = std::move(y.tokens);
      confidences = std::move(y.confidences);
    };

    t0 = Clock::now();
    generate(cand.draft, cand.first, cand.first_confidences);
    cg_ms += elapsed_ms(t0);

    t0 = Clock::now();
    std::vector<int> current = cand.first;
    std::vector<double> conf = cand.first_confidences;
    const auto n = static_cast<std::size_t>(static_cast<double>(l) * spec.mask_ratio);
    for (std::size_t it = 0; it < spec.iterations; ++it) {
      RemaskResult x2 = remask_lowest_confidence(current, conf, n, locked);
      IterationTrace step;
      step.remasked = x2.positions;
      step.clamped = x2.clamped;
      generate(x2.tokens, step.tokens, step.confidences);
      current = step.tokens;
      conf = step.confidences;
      cand.iterations.push_back(std::move(step));
    }
    refine_ms += elapsed_ms(t0);

    cand.raw = current;
    cand.confidences = conf;
    std::vector<int> kept;
    for (int t : current) {
      if (t == kMaskId || t == kPadId) {
        ++cand.stripped;
      } else {
        kept.push_back(t);
      }
    }
    cand.final = spec.dedup ? deduplicate(kept) : kept;
    if (spec.teacher_rescore) {
      cand.score = cand.final.empty()
                       ? -std::numeric_limits<double>::infinity()
                       : teacher_->mean_log_likelihood(teacher_v, cand.final);
    } else {
      double s = 0.0;
      for (double c : conf) s += std::log(c);
      cand.score = s / static_cast<double>(l);
    }
    trace.candidates.push_back(std::move(cand));
  }
  for (std::size_t i = 1; i < trace.candidates.size(); ++i) {
    if (trace.candidates[i].score > trace.candidates[trace.chosen].score) trace.chosen = i;
  }
  trace.stage_ms["og"] = og_ms;
  trace.stage_ms["cg"] = cg_ms;
  trace.stage_ms["refine"] = refine_ms;
  trace.stage_ms["total"] = elapsed_ms(total_start);
  return trace;
}

std::string trace_to_json(const DecodeTrace& trace, const Vocabulary& vocab,
                          const ObjectVocabulary& objects) {
  using nlohmann::json;
  const auto& best = trace.best();
  json j;
  j["video_id"] = trace.video_id;
  std::vector<std::string> object_words;
  for (auto o : trace.objects) object_words.push_back(objects.words().at(o));
  j["objects"] = object_words;
  j["length"] = best.length;
  j["draft"] = vocab.decode(best.draft);
  j["first"] = vocab.decode(best.first);
  json iterations = json::array();
  for (const auto& it : best.iterations) {
    iterations.push_back({{"remasked", it.remasked},
                          {"clamped", it.clamped},
                          {"tokens", vocab.decode(it.tokens)},
                          {"confidences", it.confidences}});
  }
  j["iterations"] = iterations;
  j["confidences"] = best.confidences;
  j["final"] = vocab.decode(best.final);
  j["stripped"] = best.stripped;
  json candidates = json::array();
  for (const auto& c : trace.candidates) {
    candidates.push_back({{"length", c.length}, {"score", c.score},
                          {"final", vocab.decode(c.final)}});
  }
  j["candidates"] = candidates;
  j["stage_ms"] = trace.stage_ms;
  return j.dump();
}

}  // namespace o2na
