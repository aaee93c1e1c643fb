#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace o2na {

using Sentence = std::vector<std::string>;

struct EvalItem {
  std::string video_id;
  Sentence hypothesis;
  std::vector<Sentence> references;
};

struct EvalCorpus {
  std::vector<EvalItem> items;
  std::set<std::string> training_captions;  // joined with single spaces
};

// Lines of {"video_id", "hypothesis", "references": [...]}.
EvalCorpus eval_corpus_from_jsonl(std::string_view text);
std::string eval_corpus_to_jsonl(const EvalCorpus& corpus);

// Corpus BLEU-n x 100: clipped n-gram precisions, geometric mean, brevity
// penalty against the closest reference length (shorter wins ties).
double bleu(const EvalCorpus& corpus, std::size_t n = 4);
// Clipped corpus precision of each order 1..n (fractions, not percent).
std::vector<double> bleu_precisions(const EvalCorpus& corpus, std::size_t n = 4);

// Mean sentence ROUGE-L x 100 with beta = 1.2; precision and recall each take
// their best reference.
double rouge_l(const EvalCorpus& corpus, double beta = 1.2);

// Mean over videos of the reference-averaged tf-idf cosine, averaged over
// n-gram orders 1..4 and scaled by 10. IDF = log(videos / document frequency).
double cider(const EvalCorpus& corpus);

struct Diversity {
  double novel = 0;   // % of hypotheses absent from the training captions
  double unique = 0;  // % of hypotheses generated exactly once (or words, see below)
  double vocab = 0;   // % of the non-special vocabulary used
};

enum class UniqueMode {
  kCaption,  // hypotheses occurring exactly once among all hypotheses
  kWord,     // distinct generated words over all generated word tokens
};

Diversity diversity(const EvalCorpus& corpus, std::size_t vocabulary_words,
                    UniqueMode mode = UniqueMode::kCaption);

struct VpsReport {
  double vps = 0;  // median over repeats of videos / second
  std::size_t repeats = 0;
  std::size_t videos = 0;
  std::map<std::size_t, double> vps_by_length;   // median per bucket
  std::map<std::size_t, double> ms_by_length;    // median ms per video per bucket
};

// Times `decode(i)` for i in [0, videos) `repeats` times (at least 5) after
// one warm-up pass. decode returns the length bucket of video i.
VpsReport measure_vps(const std::function<std::size_t(std::size_t)>& decode,
                      std::size_t videos, std::size_t repeats = 5);

}  // namespace o2na
