#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "o2na/model.hpp"
#include "o2na/tensor.hpp"
#include "o2na/vocab.hpp"

namespace o2na {

// A toy world whose captions mention a known object vocabulary.
//
// Each video draws 1..max_objects distinct objects, one attribute and one
// relation (intransitive for a single object, transitive otherwise). Every
// caption of the video mentions exactly the drawn objects, in object
// vocabulary order:
//   1 object:  "a <attr> <obj1> <verb>"
//   2 objects: "a <attr> <obj1> <rel> a <obj2>"
//   3 objects: "a <attr> <obj1> <rel> a <obj2> and a <obj3>"
// Captions of one video differ only by the relation word, which is replaced
// by its synonym with probability paraphrase_rate.
struct WorldSpec {
  std::vector<std::string> objects;
  std::vector<std::string> attributes;
  std::vector<std::string> intransitive;
  std::vector<std::string> transitive;
  // synonym[i] pairs with intransitive[i] then transitive[i]; may be empty.
  std::vector<std::string> relation_synonyms;
  std::size_t videos = 2000;
  std::size_t captions_per_video = 3;
  std::size_t max_objects = 3;
  std::size_t frames = 8;         // N; each video stores 2N feature rows
  std::size_t feature_dim = 32;   // d_i == d_m
  double noise = 0.1;             // feature noise sigma
  double paraphrase_rate = 0.05;
  std::uint64_t seed = 7;

  static WorldSpec default_world();
  void validate() const;
  std::size_t word_count() const;
};

// Video features: videos x rows x dim, rows = 2N (image rows then motion rows).
struct FeatureSet {
  std::size_t videos = 0;
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  std::span<const double> video(std::size_t i) const;
};

inline constexpr std::uint32_t kFeatureVersion = 1;

// "O2NAFEAT", u32 version, u32 videos, u32 rows, u32 dim, then little-endian
// f32 values. Values are widened to f64 on load.
void save_features(const std::filesystem::path& path, const FeatureSet& features);
FeatureSet load_features(const std::filesystem::path& path);

struct ManifestRecord {
  std::string video_id;
  std::vector<std::string> captions;              // whitespace-tokenized text
  std::vector<std::vector<std::string>> objects;  // per caption
  std::vector<std::string> union_objects;
};
using Manifest = std::vector<ManifestRecord>;

std::string manifest_to_jsonl(const Manifest& manifest);
Manifest manifest_from_jsonl(std::string_view text);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest load_manifest(const std::filesystem::path& path);

// Recomputes per-caption objects (caption tokens that are object words) and
// their union, for manifests of external captions.
void annotate_objects(Manifest& manifest, std::span<const std::string> object_words);

std::vector<std::string> load_object_words(const std::filesystem::path& path);

// Concepts behind one synthetic video.
struct VideoConcepts {
  std::vector<std::size_t> objects;  // ascending object indices
  std::size_t attribute = 0;
  std::size_t relation = 0;  // index into intransitive or transitive
};

struct SyntheticCorpus {
  WorldSpec spec;
  FeatureSet features;
  Manifest manifest;
  std::vector<VideoConcepts> concepts;
};

SyntheticCorpus synth_corpus(const WorldSpec& spec);

struct BuiltVocabulary {
  Vocabulary words;
  ObjectVocabulary objects;
};

// D = words seen at least min_count times, plus [PAD], [UNK], [MASK].
BuiltVocabulary build_vocab(const Manifest& manifest,
                            std::span<const std::string> object_words,
                            std::size_t min_count = 3);

// One training sample per (video, caption) pair.
struct CaptionSample {
  std::size_t video = 0;
  std::vector<int> caption;
  std::vector<int> object_target;
  std::vector<std::size_t> objects;  // object indices mentioned by the caption
};

// Manifest + features + vocabularies, aligned by position.
class Dataset {
 public:
  Dataset(Manifest manifest, FeatureSet features, Vocabulary vocab,
          ObjectVocabulary objects, std::size_t frames, std::size_t max_length);

  std::size_t video_count() const { return manifest_.size(); }
  std::size_t sample_count() const { return samples_.size(); }
  const std::vector<CaptionSample>& samples() const { return samples_; }
  const Manifest& manifest() const { return manifest_; }
  const FeatureSet& features() const { return features_; }
  const Vocabulary& vocab() const { return vocab_; }
  const ObjectVocabulary& objects() const { return objects_; }
  std::size_t frames() const { return frames_; }

  // N x dim image rows / motion rows of one video.
  Tensor image(std::size_t video) const;
  Tensor motion(std::size_t video) const;
  // Multi-hot union of the video's caption objects.
  std::vector<double> video_objects(std::size_t video) const;
  std::vector<std::vector<int>> references(std::size_t video) const;

  TrainingBatch make_batch(std::span<const std::size_t> sample_indices) const;

 private:
  Manifest manifest_;
  FeatureSet features_;
  Vocabulary vocab_;
  ObjectVocabulary objects_;
  std::size_t frames_;
  std::vector<CaptionSample> samples_;
  std::vector<std::vector<std::size_t>> video_samples_;
};

// Deterministic epoch shuffling: the order of epoch e depends only on
// (seed, e).
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t seed);

  std::size_t batches_per_epoch() const;
  std::vector<std::vector<std::size_t>> epoch_plan(std::size_t epoch) const;
  std::vector<TrainingBatch> epoch(std::size_t epoch) const;

 private:
  const Dataset& data_;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

}  // namespace o2na
