#include "o2na/datagen.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "o2na/errors.hpp"
#include "o2na/io.hpp"

namespace o2na {

using json = nlohmann::json;

WorldSpec WorldSpec::default_world() {
  WorldSpec w;
  w.objects = {"box",  "dog",   "cat",  "ball",  "car",   "man",  "woman", "child",
               "bird", "horse", "cup",  "chair", "table", "tree", "bike",  "boat",
               "truck", "phone", "book", "lamp", "door",  "fish", "cow",   "robot"};
  w.attributes = {"red", "blue", "green", "yellow", "small", "big", "old", "shiny"};
  w.intransitive = {"moves", "jumps", "rolls", "spins", "falls", "waits"};
  w.transitive = {"chases", "follows", "pushes", "watches", "passes", "hits"};
  w.relation_synonyms = {"slides", "hops",   "tumbles", "turns",    "drops",     "rests",
                         "pursues", "trails", "shoves", "observes", "overtakes", "strikes"};
  return w;
}

void WorldSpec::validate() const {
  if (objects.empty()) throw ConfigError("world: object vocabulary is empty");
  if (attributes.empty()) throw ConfigError("world: attribute vocabulary is empty");
  if (intransitive.empty() || transitive.empty()) {
    throw ConfigError("world: relation vocabularies are empty");
  }
  if (!relation_synonyms.empty() &&
      relation_synonyms.size() != intransitive.size() + transitive.size()) {
    throw ConfigError("world: need one synonym per relation word");
  }
  if (max_objects == 0 || max_objects > objects.size()) {
    throw ConfigError("world: max_objects must lie in [1, " +
                      std::to_string(objects.size()) + "]");
  }
  if (videos == 0 || captions_per_video == 0) {
    throw ConfigError("world: need at least one video and one caption per video");
  }
  if (frames == 0 || feature_dim == 0) throw ConfigError("world: empty feature shape");
  if (noise < 0.0) throw ConfigError("world: noise must be non-negative");
  if (paraphrase_rate < 0.0 || paraphrase_rate > 1.0) {
    throw ConfigError("world: paraphrase_rate must lie in [0, 1]");
  }
  if (word_count() > 200) {
    throw ConfigError("world: vocabulary exceeds 200 words (" +
                      std::to_string(word_count()) + ")");
  }
}

std::size_t WorldSpec::word_count() const {
  std::set<std::string> words{"a", "and"};
  for (const auto* list : {&objects, &attributes, &intransitive, &transitive,
                           &relation_synonyms}) {
    words.insert(list->begin(), list->end());
  }
  return words.size();
}

std::span<const double> FeatureSet::video(std::size_t i) const {
  if (i >= videos) {
    throw IndexError("video " + std::to_string(i) + " outside feature set of " +
                     std::to_string(videos));
  }
  return std::span<const double>(values).subspan(i * rows * dim, rows * dim);
}

namespace {

constexpr char kFeatureMagic[8] = {'O', '2', 'N', 'A', 'F', 'E', 'A', 'T'};
constexpr std::size_t kFeatureHeaderBytes = 8 + 4 * 4;

}  // namespace

void save_features(const std::filesystem::path& path, const FeatureSet& features) {
  if (features.values.size() != features.videos * features.rows * features.dim) {
    throw DimensionError("feature set holds " + std::to_string(features.values.size()) +
                         " values, header implies " +
                         std::to_string(features.videos * features.rows * features.dim));
  }
  ByteWriter out;
  out.bytes(std::string_view(kFeatureMagic, sizeof(kFeatureMagic)));
  out.u32(kFeatureVersion);
  out.u32(static_cast<std::uint32_t>(features.videos));
  out.u32(static_cast<std::uint32_t>(features.rows));
  out.u32(static_cast<std::uint32_t>(features.dim));
  for (double v : features.values) out.f32(static_cast<float>(v));
  out.save(path);
}

FeatureSet load_features(const std::filesystem::path& path) {
  ByteReader in(path);
  if (in.size() < kFeatureHeaderBytes) {
    throw FormatError(path.string() + ": truncated header, expected " +
                      std::to_string(kFeatureHeaderBytes) + " bytes, file has " +
                      std::to_string(in.size()));
  }
  if (in.bytes(sizeof(kFeatureMagic)) !=
      std::string_view(kFeatureMagic, sizeof(kFeatureMagic))) {
    throw FormatError(path.string() + ": bad feature magic at byte offset 0");
  }
  const std::uint32_t version = in.u32();
  if (version != kFeatureVersion) {
    throw FormatError(path.string() + ": unsupported feature version " +
                      std::to_string(version) + " at byte offset 8");
  }
  FeatureSet f;
  f.videos = in.u32();
  f.rows = in.u32();
  f.dim = in.u32();
  const std::size_t count = f.videos * f.rows * f.dim;
  const std::size_t expected = kFeatureHeaderBytes + 4 * count;
  if (in.size() != expected) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected) +
                      " bytes for " + std::to_string(f.videos) + "x" +
                      std::to_string(f.rows) + "x" + std::to_string(f.dim) +
                      " features, file has " + std::to_string(in.size()) +
                      " (mismatch at byte offset " +
                      std::to_string(std::min(in.size(), expected)) + ")");
  }
  f.values.resize(count);
  for (auto& v : f.values) v = static_cast<double>(in.f32());
  return f;
}

std::string manifest_to_jsonl(const Manifest& manifest) {
  std::string out;
  for (const auto& rec : manifest) {
    json j;
    j["video_id"] = rec.video_id;
    j["captions"] = rec.captions;
    j["objects"] = rec.objects;
    j["union_objects"] = rec.union_objects;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

Manifest manifest_from_jsonl(std::string_view text) {
  Manifest manifest;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ManifestRecord rec;
      rec.video_id = j.at("video_id").get<std::string>();
      rec.captions = j.at("captions").get<std::vector<std::string>>();
      if (j.contains("objects")) {
        rec.objects = j.at("objects").get<std::vector<std::vector<std::string>>>();
      }
      if (j.contains("union_objects")) {
        rec.union_objects = j.at("union_objects").get<std::vector<std::string>>();
      }
      if (rec.captions.empty()) {
        throw DataError("video " + rec.video_id + " has no captions");
      }
      if (!rec.objects.empty() && rec.objects.size() != rec.captions.size()) {
        throw DataError("video " + rec.video_id + " lists objects for " +
                        std::to_string(rec.objects.size()) + " of " +
                        std::to_string(rec.captions.size()) + " captions");
      }
      manifest.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return manifest;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  write_text_file(path, manifest_to_jsonl(manifest));
}

Manifest load_manifest(const std::filesystem::path& path) {
  return manifest_from_jsonl(read_text_file(path));
}

void annotate_objects(Manifest& manifest, std::span<const std::string> object_words) {
  std::set<std::string> lookup(object_words.begin(), object_words.end());
  for (auto& rec : manifest) {
    rec.objects.clear();
    std::set<std::string> seen;
    rec.union_objects.clear();
    for (const auto& caption : rec.captions) {
      std::vector<std::string> found;
      for (const auto& tok : tokenize(caption)) {
        if (lookup.count(tok) && std::find(found.begin(), found.end(), tok) == found.end()) {
          found.push_back(tok);
        }
      }
      for (const auto& f : found) {
        if (seen.insert(f).second) rec.union_objects.push_back(f);
      }
      rec.objects.push_back(std::move(found));
    }
  }
}

std::vector<std::string> load_object_words(const std::filesystem::path& path) {
  std::vector<std::string> words;
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    auto toks = tokenize(line);
    if (!toks.empty()) words.push_back(toks.front());
  }
  return words;
}

SyntheticCorpus synth_corpus(const WorldSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  const std::size_t dim = spec.feature_dim;
  auto draw_prototypes = [&](std::size_t count) {
    std::vector<std::vector<double>> protos(count, std::vector<double>(dim));
    for (auto& p : protos)
      for (auto& v : p) v = unit(rng);
    return protos;
  };
  const auto object_protos = draw_prototypes(spec.objects.size());
  const auto attribute_protos = draw_prototypes(spec.attributes.size());
  const auto intransitive_protos = draw_prototypes(spec.intransitive.size());
  const auto transitive_protos = draw_prototypes(spec.transitive.size());

  SyntheticCorpus corpus;
  corpus.spec = spec;
  const std::size_t rows = 2 * spec.frames;
  corpus.features.videos = spec.videos;
  corpus.features.rows = rows;
  corpus.features.dim = dim;
  corpus.features.values.reserve(spec.videos * rows * dim);

  std::uniform_int_distribution<std::size_t> pick_count(1, spec.max_objects);
  std::uniform_int_distribution<std::size_t> pick_attr(0, spec.attributes.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_intr(0, spec.intransitive.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_tran(0, spec.transitive.size() - 1);
  std::bernoulli_distribution paraphrase(spec.paraphrase_rate);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<std::size_t> all_objects(spec.objects.size());
  std::iota(all_objects.begin(), all_objects.end(), 0);

  for (std::size_t v = 0; v < spec.videos; ++v) {
    VideoConcepts c;
    const std::size_t k = pick_count(rng);
    std::vector<std::size_t> pool = all_objects;
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    c.objects.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(c.objects.begin(), c.objects.end());
    c.attribute = pick_attr(rng);
    const bool single = k == 1;
    c.relation = single ? pick_intr(rng) : pick_tran(rng);

    std::vector<double> mean(dim, 0.0);
    std::vector<const std::vector<double>*> parts;
    for (auto o : c.objects) parts.push_back(&object_protos[o]);
    parts.push_back(&attribute_protos[c.attribute]);
    parts.push_back(single ? &intransitive_protos[c.relation]
                           : &transitive_protos[c.relation]);
    for (const auto* p : parts)
      for (std::size_t j = 0; j < dim; ++j) mean[j] += (*p)[j];
    for (auto& m : mean) m /= static_cast<double>(parts.size());
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < dim; ++j) {
        // Stored at f32 precision so the in-memory corpus equals its file.
        const double value = mean[j] + spec.noise * noise(rng);
        corpus.features.values.push_back(static_cast<double>(static_cast<float>(value)));
      }
    }

    ManifestRecord rec;
    char id[32];
    std::snprintf(id, sizeof(id), "video%05zu", v);
    rec.video_id = id;
    const std::size_t synonym_slot =
        single ? c.relation : spec.intransitive.size() + c.relation;
    const std::string& base_relation =
        single ? spec.intransitive[c.relation] : spec.transitive[c.relation];
    for (std::size_t cap = 0; cap < spec.captions_per_video; ++cap) {
      const bool alt = !spec.relation_synonyms.empty() && paraphrase(rng);
      const std::string& relation = alt ? spec.relation_synonyms[synonym_slot] : base_relation;
      std::vector<std::string> tokens{"a", spec.attributes[c.attribute],
                                      spec.objects[c.objects[0]], relation};
      for (std::size_t i = 1; i < k; ++i) {
        if (i == 2) tokens.push_back("and");
        tokens.push_back("a");
        tokens.push_back(spec.objects[c.objects[i]]);
      }
      rec.captions.push_back(join_tokens(tokens));
      std::vector<std::string> objs;
      for (auto o : c.objects) objs.push_back(spec.objects[o]);
      rec.objects.push_back(objs);
      if (cap == 0) rec.union_objects = objs;
    }
    corpus.manifest.push_back(std::move(rec));
    corpus.concepts.push_back(std::move(c));
  }
  return corpus;
}

BuiltVocabulary build_vocab(const Manifest& manifest,
                            std::span<const std::string> object_words,
                            std::size_t min_count) {
  if (manifest.empty()) throw DataError("cannot build a vocabulary from an empty manifest");
  std::map<std::string, std::size_t> counts;
  for (const auto& rec : manifest)
    for (const auto& caption : rec.captions)
      for (const auto& tok : tokenize(caption)) ++counts[tok];
  Vocabulary vocab;
  for (const auto& [word, count] : counts) {
    if (count >= min_count) vocab.add(word);
  }
  for (const auto& w : object_words) {
    if (!counts.count(w)) {
      std::cerr << "warning: object word '" << w << "' never occurs in the corpus\n";
    }
  }
  ObjectVocabulary objects(std::vector<std::string>(object_words.begin(), object_words.end()),
                           vocab);
  return {std::move(vocab), std::move(objects)};
}

Dataset::Dataset(Manifest manifest, FeatureSet features, Vocabulary vocab,
                 ObjectVocabulary objects, std::size_t frames, std::size_t max_length)
    : manifest_(std::move(manifest)),
      features_(std::move(features)),
      vocab_(std::move(vocab)),
      objects_(std::move(objects)),
      frames_(frames) {
  if (manifest_.size() != features_.videos) {
    throw DataError("alignment error: manifest has " + std::to_string(manifest_.size()) +
                    " videos but the feature file has " +
                    std::to_string(features_.videos));
  }
  if (features_.rows != 2 * frames_) {
    throw DataError("feature file stores " + std::to_string(features_.rows) +
                    " rows per video, expected 2N = " + std::to_string(2 * frames_));
  }
  std::vector<int> object_ids;
  for (std::size_t i = 0; i < objects_.size(); ++i) object_ids.push_back(objects_.word_id(i));
  video_samples_.resize(manifest_.size());
  for (std::size_t v = 0; v < manifest_.size(); ++v) {
    const auto& rec = manifest_[v];
    for (std::size_t c = 0; c < rec.captions.size(); ++c) {
      CaptionSample s;
      s.video = v;
      s.caption = vocab_.encode(tokenize(rec.captions[c]));
      if (s.caption.empty() || s.caption.size() > max_length) {
        throw DataError("caption " + std::to_string(c) + " of video " + rec.video_id +
                        " has " + std::to_string(s.caption.size()) +
                        " tokens, outside [1, " + std::to_string(max_length) + "]");
      }
      s.object_target = make_object_target(s.caption, object_ids);
      for (int t : s.caption) {
        if (auto idx = objects_.index_of_id(t);
            idx && std::find(s.objects.begin(), s.objects.end(), *idx) == s.objects.end()) {
          s.objects.push_back(*idx);
        }
      }
      video_samples_[v].push_back(samples_.size());
      samples_.push_back(std::move(s));
    }
  }
}

Tensor Dataset::image(std::size_t video) const {
  auto rows = features_.video(video);
  const std::size_t n = frames_ * features_.dim;
  return Tensor({frames_, features_.dim}, std::vector<double>(rows.begin(), rows.begin() + n));
}

Tensor Dataset::motion(std::size_t video) const {
  auto rows = features_.video(video);
  const std::size_t n = frames_ * features_.dim;
  return Tensor({frames_, features_.dim},
                std::vector<double>(rows.begin() + n, rows.begin() + 2 * n));
}

std::vector<double> Dataset::video_objects(std::size_t video) const {
  std::vector<double> out(objects_.size(), 0.0);
  for (auto s : video_samples_.at(video))
    for (auto o : samples_[s].objects) out[o] = 1.0;
  return out;
}

std::vector<std::vector<int>> Dataset::references(std::size_t video) const {
  std::vector<std::vector<int>> out;
  for (auto s : video_samples_.at(video)) out.push_back(samples_[s].caption);
  return out;
}

TrainingBatch Dataset::make_batch(std::span<const std::size_t> sample_indices) const {
  TrainingBatch b;
  b.size = sample_indices.size();
  if (b.size == 0) throw DataError("empty batch");
  for (auto i : sample_indices) {
    b.max_length = std::max(b.max_length, samples_.at(i).caption.size());
  }
  const std::size_t dim = features_.dim, m = objects_.size();
  std::vector<double> image, motion, caption_objects(b.size * m, 0.0),
      video_objects(b.size * m, 0.0);
  image.reserve(b.size * frames_ * dim);
  motion.reserve(b.size * frames_ * dim);
  b.captions.assign(b.size * b.max_length, kPadId);
  b.object_targets.assign(b.size * b.max_length, kPadId);
  for (std::size_t k = 0; k < b.size; ++k) {
    const auto& s = samples_.at(sample_indices[k]);
    auto rows = features_.video(s.video);
    const std::size_t n = frames_ * dim;
    image.insert(image.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n));
    motion.insert(motion.end(), rows.begin() + static_cast<std::ptrdiff_t>(n),
                  rows.begin() + static_cast<std::ptrdiff_t>(2 * n));
    std::copy(s.caption.begin(), s.caption.end(),
              b.captions.begin() + static_cast<std::ptrdiff_t>(k * b.max_length));
    std::copy(s.object_target.begin(), s.object_target.end(),
              b.object_targets.begin() + static_cast<std::ptrdiff_t>(k * b.max_length));
    b.lengths.push_back(s.caption.size());
    for (auto o : s.objects) caption_objects[k * m + o] = 1.0;
    const auto vo = this->video_objects(s.video);
    std::copy(vo.begin(), vo.end(), video_objects.begin() + static_cast<std::ptrdiff_t>(k * m));
    b.video_ids.push_back(manifest_[s.video].video_id);
  }
  b.image = Tensor({b.size * frames_, dim}, std::move(image));
  b.motion = Tensor({b.size * frames_, dim}, std::move(motion));
  b.caption_objects = Tensor({b.size, m}, std::move(caption_objects));
  b.video_objects = Tensor({b.size, m}, std::move(video_objects));
  return b;
}

BatchIterator::BatchIterator(const Dataset& data, std::size_t batch_size,
                             std::uint64_t seed)
    : data_(data), batch_size_(batch_size), seed_(seed) {
  if (batch_size_ == 0) throw ConfigError("batch size must be positive");
}

std::size_t BatchIterator::batches_per_epoch() const {
  return (data_.sample_count() + batch_size_ - 1) / batch_size_;
}

std::vector<std::vector<std::size_t>> BatchIterator::epoch_plan(std::size_t epoch) const {
  std::vector<std::size_t> order(data_.sample_count());
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                    static_cast<std::uint32_t>(epoch)};
  Rng rng(seq);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  std::vector<std::vector<std::size_t>> plan;
  for (std::size_t start = 0; start < order.size(); start += batch_size_) {
    const std::size_t end = std::min(order.size(), start + batch_size_);
    plan.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                      order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return plan;
}

std::vector<TrainingBatch> BatchIterator::epoch(std::size_t epoch) const {
  std::vector<TrainingBatch> out;
  for (const auto& idx : epoch_plan(epoch)) out.push_back(data_.make_batch(idx));
  return out;
}

}  // namespace o2na
