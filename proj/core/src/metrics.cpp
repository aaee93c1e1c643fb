#include "o2na/metrics.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include <json.hpp>

#include "o2na/errors.hpp"
#include "o2na/vocab.hpp"

namespace o2na {

EvalCorpus eval_corpus_from_jsonl(std::string_view text) {
  EvalCorpus corpus;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EvalItem item;
      item.video_id = j.at("video_id").get<std::string>();
      item.hypothesis = tokenize(j.at("hypothesis").get<std::string>());
      for (const auto& r : j.at("references")) {
        item.references.push_back(tokenize(r.get<std::string>()));
      }
      if (item.references.empty()) {
        throw DataError("video " + item.video_id + " has no references");
      }
      corpus.items.push_back(std::move(item));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("evaluation line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

std::string eval_corpus_to_jsonl(const EvalCorpus& corpus) {
  std::string out;
  for (const auto& item : corpus.items) {
    nlohmann::json j;
    j["video_id"] = item.video_id;
    j["hypothesis"] = join_tokens(item.hypothesis);
    std::vector<std::string> refs;
    for (const auto& r : item.references) refs.push_back(join_tokens(r));
    j["references"] = refs;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Sentence& s, std::size_t n) {
  NgramCounts out;
  if (s.size() < n) return out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    ++out[std::vector<std::string>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                   s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

void require_items(const EvalCorpus& corpus, const char* metric) {
  if (corpus.items.empty()) {
    throw DataError(std::string(metric) + ": empty hypothesis set");
  }
  for (const auto& item : corpus.items) {
    if (item.references.empty()) {
      throw DataError(std::string(metric) + ": video " + item.video_id + " has no references");
    }
  }
}

}  // namespace

std::vector<double> bleu_precisions(const EvalCorpus& corpus, std::size_t n) {
  require_items(corpus, "bleu");
  if (n == 0) throw ConfigError("bleu: order must be at least 1");
  std::vector<double> matched(n, 0.0), total(n, 0.0);
  for (const auto& item : corpus.items) {
    for (std::size_t k = 1; k <= n; ++k) {
      NgramCounts max_ref;
      for (const auto& r : item.references) {
        for (const auto& [g, c] : ngrams(r, k)) max_ref[g] = std::max(max_ref[g], c);
      }
      for (const auto& [g, c] : ngrams(item.hypothesis, k)) {
        auto it = max_ref.find(g);
        matched[k - 1] += static_cast<double>(std::min(c, it == max_ref.end() ? 0 : it->second));
        total[k - 1] += static_cast<double>(c);
      }
    }
  }
  std::vector<double> out(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) out[k] = total[k] > 0 ? matched[k] / total[k] : 0.0;
  return out;
}

double bleu(const EvalCorpus& corpus, std::size_t n) {
  const auto p = bleu_precisions(corpus, n);
  double hyp_len = 0, ref_len = 0;
  for (const auto& item : corpus.items) {
    const double c = static_cast<double>(item.hypothesis.size());
    double best = 0;
    double best_gap = -1;
    for (const auto& r : item.references) {
      const double len = static_cast<double>(r.size());
      const double gap = std::abs(len - c);
      if (best_gap < 0 || gap < best_gap || (gap == best_gap && len < best)) {
        best = len;
        best_gap = gap;
      }
    }
    hyp_len += c;
    ref_len += best;
  }
  double log_sum = 0;
  for (double x : p) {
    if (x <= 0) return 0.0;
    log_sum += std::log(x);
  }
  if (hyp_len == 0) return 0.0;
  const double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(n));
}

namespace {

std::size_t lcs_length(const Sentence& a, const Sentence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double rouge_l(const EvalCorpus& corpus, double beta) {
  require_items(corpus, "rouge_l");
  double sum = 0;
  for (const auto& item : corpus.items) {
    double best_p = 0, best_r = 0;
    for (const auto& r : item.references) {
      const double lcs = static_cast<double>(lcs_length(item.hypothesis, r));
      if (!item.hypothesis.empty()) {
        best_p = std::max(best_p, lcs / static_cast<double>(item.hypothesis.size()));
      }
      if (!r.empty()) best_r = std::max(best_r, lcs / static_cast<double>(r.size()));
    }
    if (best_p > 0 && best_r > 0) {
      const double b2 = beta * beta;
      sum += (1 + b2) * best_p * best_r / (best_r + b2 * best_p);
    }
  }
  return 100.0 * sum / static_cast<double>(corpus.items.size());
}

double cider(const EvalCorpus& corpus) {
  require_items(corpus, "cider");
  if (corpus.items.size() < 2) {
    throw DataError("cider: document frequencies need at least 2 videos; evaluate a larger set");
  }
  constexpr std::size_t kOrders = 4;
  const double log_docs = std::log(static_cast<double>(corpus.items.size()));
  std::array<std::map<std::vector<std::string>, double>, kOrders> df;
  for (const auto& item : corpus.items) {
    for (std::size_t k = 0; k < kOrders; ++k) {
      std::set<std::vector<std::string>> seen;
      for (const auto& r : item.references)
        for (const auto& [g, c] : ngrams(r, k + 1)) seen.insert(g);
      for (const auto& g : seen) df[k][g] += 1.0;
    }
  }
  auto weights = [&](const Sentence& s, std::size_t k) {
    std::map<std::vector<std::string>, double> w;
    for (const auto& [g, c] : ngrams(s, k + 1)) {
      auto it = df[k].find(g);
      const double d = it == df[k].end() ? 1.0 : it->second;
      w[g] = static_cast<double>(c) * (log_docs - std::log(d));
    }
    return w;
  };
  auto norm = [](const std::map<std::vector<std::string>, double>& w) {
    double s = 0;
    for (const auto& [g, x] : w) s += x * x;
    return std::sqrt(s);
  };
  double total = 0;
  for (const auto& item : corpus.items) {
    double score = 0;
    for (std::size_t k = 0; k < kOrders; ++k) {
      const auto h = weights(item.hypothesis, k);
      const double nh = norm(h);
      double order_sum = 0;
      for (const auto& r : item.references) {
        const auto rw = weights(r, k);
        const double nr = norm(rw);
        if (nh == 0 || nr == 0) continue;
        double dot = 0;
        for (const auto& [g, x] : h) {
          auto it = rw.find(g);
          if (it != rw.end()) dot += x * it->second;
        }
        order_sum += dot / (nh * nr);
      }
      score += order_sum / static_cast<double>(item.references.size());
    }
    total += 10.0 * score / static_cast<double>(kOrders);
  }
  return total / static_cast<double>(corpus.items.size());
}

Diversity diversity(const EvalCorpus& corpus, std::size_t vocabulary_words, UniqueMode mode) {
  Diversity out;
  if (corpus.items.empty()) return out;
  const double n = static_cast<double>(corpus.items.size());
  std::map<std::string, std::size_t> caption_counts;
  std::set<std::string> words;
  std::size_t word_tokens = 0, novel = 0;
  for (const auto& item : corpus.items) {
    const std::string text = join_tokens(item.hypothesis);
    ++caption_counts[text];
    if (!corpus.training_captions.count(text)) ++novel;
    words.insert(item.hypothesis.begin(), item.hypothesis.end());
    word_tokens += item.hypothesis.size();
  }
  out.novel = 100.0 * static_cast<double>(novel) / n;
  if (mode == UniqueMode::kCaption) {
    std::size_t once = 0;
    for (const auto& item : corpus.items) {
      if (caption_counts[join_tokens(item.hypothesis)] == 1) ++once;
    }
    out.unique = 100.0 * static_cast<double>(once) / n;
  } else {
    out.unique = word_tokens ? 100.0 * static_cast<double>(words.size()) /
                                   static_cast<double>(word_tokens)
                             : 0.0;
  }
  out.vocab = vocabulary_words ? 100.0 * static_cast<double>(words.size()) /
                                     static_cast<double>(vocabulary_words)
                               : 0.0;
  return out;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

VpsReport measure_vps(const std::function<std::size_t(std::size_t)>& decode,
                      std::size_t videos, std::size_t repeats) {
  if (videos == 0) throw DataError("measure_vps: empty corpus");
  repeats = std::max<std::size_t>(repeats, 5);
  using Clock = std::chrono::steady_clock;
  for (std::size_t i = 0; i < videos; ++i) decode(i);
  std::vector<double> rates;
  std::map<std::size_t, std::vector<double>> bucket_seconds;
  std::map<std::size_t, std::size_t> bucket_count;
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    std::map<std::size_t, double> seconds;
    std::map<std::size_t, std::size_t> count;
    const auto start = Clock::now();
    for (std::size_t i = 0; i < videos; ++i) {
      const auto t0 = Clock::now();
      const std::size_t bucket = decode(i);
      seconds[bucket] += std::chrono::duration<double>(Clock::now() - t0).count();
      ++count[bucket];
    }
    const double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
    rates.push_back(static_cast<double>(videos) / elapsed);
    for (const auto& [b, s] : seconds) bucket_seconds[b].push_back(s);
    bucket_count = count;
  }
  VpsReport report;
  report.vps = median(rates);
  report.repeats = repeats;
  report.videos = videos;
  for (const auto& [b, s] : bucket_seconds) {
    const double sec = median(s);
    const double c = static_cast<double>(bucket_count[b]);
    report.vps_by_length[b] = c / sec;
    report.ms_by_length[b] = 1000.0 * sec / c;
  }
  return report;
}

}  // namespace o2na
