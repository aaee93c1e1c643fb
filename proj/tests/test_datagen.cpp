#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <gtest/gtest.h>

#include "o2na/datagen.hpp"
#include "o2na/errors.hpp"
#include "o2na/io.hpp"
#include "support/corpus.hpp"
#include "support/temp.hpp"

using namespace o2na;
using o2na::testing::build_corpus;

namespace {

o2na::testing::TempDir scratch("datagen");

std::filesystem::path temp_path(const std::string& name) { return scratch / name; }

WorldSpec world(std::size_t videos, double noise = 0.1) {
  WorldSpec w = WorldSpec::default_world();
  w.videos = videos;
  w.noise = noise;
  return w;
}

}  // namespace

TEST(Synth, CountsAndShapes) {
  auto c = synth_corpus(world(50));
  EXPECT_EQ(c.manifest.size(), 50u);
  EXPECT_EQ(c.features.videos, 50u);
  EXPECT_EQ(c.features.rows, 16u);
  EXPECT_EQ(c.features.dim, 32u);
  EXPECT_EQ(c.features.values.size(), 50u * 16 * 32);
  EXPECT_EQ(c.manifest[7].video_id, "video00007");
  for (const auto& rec : c.manifest) {
    ASSERT_EQ(rec.captions.size(), 3u);
    ASSERT_EQ(rec.objects.size(), 3u);
    EXPECT_GE(rec.union_objects.size(), 1u);
    EXPECT_LE(rec.union_objects.size(), 3u);
  }
  EXPECT_LE(c.spec.word_count(), 200u);
}

TEST(Synth, CaptionsFollowGrammarAndObjectOrder) {
  auto c = synth_corpus(world(200));
  const auto& objs = c.spec.objects;
  for (std::size_t v = 0; v < c.manifest.size(); ++v) {
    const auto& concepts = c.concepts[v];
    for (const auto& caption : c.manifest[v].captions) {
      auto toks = tokenize(caption);
      const std::size_t k = concepts.objects.size();
      EXPECT_EQ(toks.size(), k == 1 ? 4u : (k == 2 ? 6u : 9u)) << caption;
      EXPECT_EQ(toks[0], "a");
      EXPECT_EQ(toks[2], objs[concepts.objects[0]]);
      std::vector<std::size_t> seen;
      for (const auto& t : toks) {
        auto it = std::find(objs.begin(), objs.end(), t);
        if (it != objs.end()) seen.push_back(static_cast<std::size_t>(it - objs.begin()));
      }
      EXPECT_EQ(seen, concepts.objects);
    }
  }
}

TEST(Synth, DeterministicForSeed) {
  auto a = synth_corpus(world(30));
  auto b = synth_corpus(world(30));
  EXPECT_EQ(a.features.values, b.features.values);
  EXPECT_EQ(manifest_to_jsonl(a.manifest), manifest_to_jsonl(b.manifest));
  auto w = world(30);
  w.seed = 8;
  EXPECT_NE(synth_corpus(w).features.values, a.features.values);
}

TEST(Synth, ZeroNoiseGivesConstantRowsPerVideo) {
  auto c = synth_corpus(world(20, 0.0));
  for (std::size_t v = 0; v < 20; ++v) {
    auto x = c.features.video(v);
    for (std::size_t r = 1; r < c.features.rows; ++r)
      for (std::size_t j = 0; j < c.features.dim; ++j)
        EXPECT_EQ(x[r * c.features.dim + j], x[j]);
  }
}

TEST(Synth, ObjectsAreLinearlyDecodableFromPooledFeatures) {
  auto c = synth_corpus(world(600));
  const std::size_t dim = c.features.dim, rows = c.features.rows, m = c.spec.objects.size();
  auto pooled = [&](std::size_t v) {
    std::vector<double> p(dim + 1, 0.0);
    auto x = c.features.video(v);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < dim; ++j) p[j] += x[r * dim + j] / double(rows);
    p[dim] = 1.0;
    return p;
  };
  std::vector<std::vector<double>> x;
  for (std::size_t v = 0; v < 600; ++v) x.push_back(pooled(v));
  auto label = [&](std::size_t v, std::size_t o) {
    const auto& objs = c.concepts[v].objects;
    return std::find(objs.begin(), objs.end(), o) != objs.end() ? 1.0 : 0.0;
  };
  // Per-object logistic regression on the first 500 videos.
  std::vector<std::vector<double>> w(m, std::vector<double>(dim + 1, 0.0));
  for (std::size_t step = 0; step < 300; ++step) {
    for (std::size_t o = 0; o < m; ++o) {
      std::vector<double> g(dim + 1, 0.0);
      for (std::size_t v = 0; v < 500; ++v) {
        double z = 0;
        for (std::size_t j = 0; j <= dim; ++j) z += w[o][j] * x[v][j];
        const double err = 1.0 / (1.0 + std::exp(-z)) - label(v, o);
        for (std::size_t j = 0; j <= dim; ++j) g[j] += err * x[v][j] / 500.0;
      }
      for (std::size_t j = 0; j <= dim; ++j) w[o][j] -= 2.0 * g[j];
    }
  }
  std::size_t correct = 0, total = 0;
  for (std::size_t v = 500; v < 600; ++v) {
    for (std::size_t o = 0; o < m; ++o) {
      double z = 0;
      for (std::size_t j = 0; j <= dim; ++j) z += w[o][j] * x[v][j];
      correct += (z > 0) == (label(v, o) > 0.5);
      ++total;
    }
  }
  EXPECT_GE(double(correct) / double(total), 0.95);
}

TEST(Features, RoundTripIsExact) {
  auto c = synth_corpus(world(12));
  const auto path = temp_path("features.bin");
  save_features(path, c.features);
  auto back = load_features(path);
  EXPECT_EQ(back.videos, 12u);
  EXPECT_EQ(back.rows, c.features.rows);
  EXPECT_EQ(back.dim, c.features.dim);
  EXPECT_EQ(back.values, c.features.values);
  std::filesystem::remove(path);
}

TEST(Features, TruncatedAndCorruptFilesAreRejected) {
  auto c = synth_corpus(world(4));
  const auto path = temp_path("trunc.bin");
  save_features(path, c.features);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 3);
  try {
    load_features(path);
    FAIL() << "truncated file accepted";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("expected"), std::string::npos) << e.what();
  }
  std::filesystem::resize_file(path, 10);
  EXPECT_THROW(load_features(path), FormatError);
  write_text_file(path, "NOTFEATSxxxxxxxxxxxxxxxx");
  EXPECT_THROW(load_features(path), FormatError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_features(path), FormatError);
}

TEST(Manifest, JsonlRoundTripAndErrors) {
  auto c = synth_corpus(world(5));
  const auto text = manifest_to_jsonl(c.manifest);
  EXPECT_EQ(manifest_to_jsonl(manifest_from_jsonl(text)), text);
  EXPECT_THROW(manifest_from_jsonl("{\"video_id\": \"x\"\n"), FormatError);
  EXPECT_THROW(manifest_from_jsonl("{\"video_id\":\"x\",\"captions\":[],\"objects\":[]}\n"),
               DataError);
}

TEST(Manifest, AnnotateObjectsFromText) {
  Manifest m(1);
  m[0].video_id = "v";
  m[0].captions = {"a dog chases a cat", "the dog sits"};
  const std::vector<std::string> objects{"cat", "dog"};
  annotate_objects(m, objects);
  EXPECT_EQ(m[0].objects[0], (std::vector<std::string>{"dog", "cat"}));
  EXPECT_EQ(m[0].objects[1], (std::vector<std::string>{"dog"}));
  EXPECT_EQ(m[0].union_objects, (std::vector<std::string>{"dog", "cat"}));
}

TEST(Vocab, MinCountAndSpecials) {
  Manifest m(1);
  m[0].video_id = "v";
  m[0].captions = {"a dog runs", "a dog sits", "a cat runs", "a dog runs"};
  const std::vector<std::string> objects{"dog", "cat"};
  annotate_objects(m, objects);
  auto built = build_vocab(m, objects, 3);
  // a x4, dog x3, runs x3 survive; cat, sits do not.
  EXPECT_EQ(built.words.size(), 6u);
  EXPECT_EQ(built.words.word(kPadId), "[PAD]");
  EXPECT_EQ(built.words.word(kUnkId), "[UNK]");
  EXPECT_EQ(built.words.word(kMaskId), "[MASK]");
  EXPECT_TRUE(built.words.find("dog"));
  EXPECT_FALSE(built.words.find("cat"));
  EXPECT_EQ(built.words.id("cat"), kUnkId);
}

TEST(Vocab, DefaultWorldVocabularySize) {
  auto c = synth_corpus(world(2000));
  auto built = build_vocab(c.manifest, c.spec.objects, 3);
  EXPECT_EQ(built.words.size(), 61u);
  EXPECT_EQ(built.objects.size(), 24u);
  for (std::size_t o = 0; o < 24; ++o) {
    EXPECT_EQ(built.words.word(built.objects.word_id(o)), c.spec.objects[o]);
  }
  EXPECT_EQ(Vocabulary::from_text(built.words.to_text()).words(), built.words.words());
}

TEST(Dataset, BatchesPerEpochAndPadding) {
  RunConfig config;
  auto b = build_corpus(config);
  EXPECT_EQ(b.data->sample_count(), 6000u);
  BatchIterator it(*b.data, 64, 11);
  EXPECT_EQ(it.batches_per_epoch(), 94u);
  auto plan = it.epoch_plan(0);
  ASSERT_EQ(plan.size(), 94u);
  EXPECT_EQ(plan.back().size(), 6000u - 93 * 64);
  std::vector<std::size_t> all;
  for (const auto& p : plan) all.insert(all.end(), p.begin(), p.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) ASSERT_EQ(all[i], i);
  EXPECT_EQ(it.epoch_plan(3), BatchIterator(*b.data, 64, 11).epoch_plan(3));
  EXPECT_NE(it.epoch_plan(3), it.epoch_plan(4));

  auto batch = b.data->make_batch(plan[0]);
  EXPECT_EQ(batch.image.rows(), 64u * config.frames);
  for (std::size_t k = 0; k < batch.size; ++k) {
    for (std::size_t t = batch.lengths[k]; t < batch.max_length; ++t) {
      EXPECT_EQ(batch.captions[k * batch.max_length + t], kPadId);
      EXPECT_EQ(batch.object_targets[k * batch.max_length + t], kPadId);
    }
    for (std::size_t t = 0; t < batch.lengths[k]; ++t) {
      const int tok = batch.captions[k * batch.max_length + t];
      const int obj = batch.object_targets[k * batch.max_length + t];
      EXPECT_TRUE(obj == tok || obj == kMaskId);
      EXPECT_EQ(obj == tok, b.vocab.objects.index_of_id(tok).has_value());
    }
  }
}

TEST(Dataset, RejectsMisalignedInputs) {
  RunConfig config = o2na::testing::small_config(10);
  auto b = build_corpus(config);
  Manifest short_manifest(b.corpus.manifest.begin(), b.corpus.manifest.begin() + 5);
  EXPECT_THROW(Dataset(short_manifest, b.corpus.features, b.vocab.words, b.vocab.objects,
                       config.frames, config.max_length),
               DataError);
  EXPECT_THROW(Dataset(b.corpus.manifest, b.corpus.features, b.vocab.words, b.vocab.objects,
                       config.frames, 3),
               DataError);
}
