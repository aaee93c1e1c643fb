#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "o2na/errors.hpp"
#include "o2na/io.hpp"
#include "o2na/parameters.hpp"
#include "o2na/training.hpp"
#include "support/temp.hpp"
#include "support/tiny.hpp"

using namespace o2na;
using o2na::testing::TempDir;

TEST(Adam, TwoHandComputedSteps) {
  Tensor w = Tensor::from_rows({{1.0, -2.0}}, true);
  Adam adam({0.1, 0.9, 0.999, 1e-8});
  w.grad()[0] = 0.5;
  w.grad()[1] = -0.25;
  adam.step({w});
  EXPECT_NEAR(w[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(w[1], -2.0 + 0.1 * 0.25 / (0.25 + 1e-8), 1e-15);
  const double w0 = w[0];
  w.grad()[0] = -1.0;
  adam.step({w});
  const double m = 0.9 * 0.05 + 0.1 * -1.0;
  const double v = 0.999 * 0.001 * 0.25 + 0.001 * 1.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(w[0], w0 - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-14);
  EXPECT_EQ(adam.steps(), 2u);
}

TEST(Adam, RejectsChangedParameterList) {
  Tensor a({2}, 0.0, true), b({3}, 0.0, true);
  Adam adam;
  adam.step({a});
  EXPECT_THROW(adam.step({a, b}), DimensionError);
}

TEST(ParameterSetTest, NamesAndFiniteness) {
  Rng rng(1);
  ParameterSet p;
  p.add_glorot("w", 3, 4, rng);
  p.add_constant("b", {4}, 0.0);
  EXPECT_THROW(p.add_constant("w", {1}, 0.0), ConfigError);
  EXPECT_EQ(p.scalar_count(), 16u);
  EXPECT_TRUE(p.all_finite());
  Tensor b = p.get("b");
  b[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(p.all_finite());
  EXPECT_THROW(p.get("missing"), ModelStateError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir("ckpt");
  Rng rng(2);
  std::vector<CheckpointRecord> records;
  records.push_back(text_record("meta.note", "hello\nworld"));
  Tensor m({3, 5});
  std::normal_distribution<double> d(0.0, 1.0);
  for (auto& x : m.data()) x = d(rng);
  m[4] = -0.0;
  m[5] = 1e-310;
  records.push_back({"w", m});
  records.push_back({"s", Tensor({7}, 0.125)});
  write_checkpoint(dir / "a.ckpt", records);
  auto back = read_checkpoint(dir / "a.ckpt");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(record_text(back[0]), "hello\nworld");
  EXPECT_EQ(back[1].name, "w");
  EXPECT_EQ(back[1].value.shape(), m.shape());
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_EQ(std::signbit(back[1].value[i]), std::signbit(m[i]));
    EXPECT_EQ(back[1].value[i], m[i]);
  }
  EXPECT_EQ(back[2].value.shape(), (Shape{7}));
}

TEST(Checkpoint, BadMagicAndTruncation) {
  TempDir dir("ckpt");
  write_text_file(dir / "bad.ckpt", "NOTACKPT\x01\x00\x00\x00");
  EXPECT_THROW(read_checkpoint(dir / "bad.ckpt"), FormatError);
  write_checkpoint(dir / "t.ckpt", {{"w", Tensor({4, 4}, 1.0)}});
  std::filesystem::resize_file(dir / "t.ckpt", std::filesystem::file_size(dir / "t.ckpt") - 5);
  try {
    read_checkpoint(dir / "t.ckpt");
    FAIL() << "truncated checkpoint accepted";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_checkpoint(dir / "absent.ckpt"), FormatError);
}

TEST(Checkpoint, ModelBundleRoundTrip) {
  TempDir dir("bundle");
  RunConfig config;
  config.d_model = 8;
  config.heads = 2;
  config.d_ff = 12;
  config.frames = 2;
  config.feature_dim = 3;
  config.max_length = 6;
  std::vector<std::string> words{"a", "b", "box", "cat", "dog", "x", "y"};
  Vocabulary vocab(words);
  ObjectVocabulary objects({"box", "cat", "dog"}, vocab);
  O2naModel model(config.model_dims(vocab.size(), objects.size()), 4);
  save_o2na(dir / "m.ckpt", config, vocab, objects, model);
  auto bundle = load_o2na(dir / "m.ckpt");
  EXPECT_EQ(bundle.config.to_text(), config.to_text());
  EXPECT_EQ(bundle.vocab.words(), vocab.words());
  EXPECT_EQ(bundle.objects.words(), objects.words());
  const auto& a = model.parameters().entries();
  const auto& b = bundle.model->parameters().entries();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    for (std::size_t j = 0; j < a[i].second.size(); ++j)
      ASSERT_EQ(a[i].second[j], b[i].second[j]) << a[i].first;
  }
  // An AR checkpoint is not an O2NA checkpoint.
  ArModel ar(config.ar_dims(vocab.size()), 3);
  save_ar(dir / "ar.ckpt", config, vocab, ar);
  EXPECT_THROW(load_o2na(dir / "ar.ckpt"), Error);
  EXPECT_NO_THROW(load_ar(dir / "ar.ckpt"));
}
