#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "o2na/ar_baseline.hpp"
#include "o2na/datagen.hpp"
#include "o2na/decoding.hpp"
#include "o2na/model.hpp"
#include "o2na/parameters.hpp"

namespace o2na {

// Every tunable of a run. Serialized as flat "key=value" lines; see
// RunConfig::keys() for the accepted names.
struct RunConfig {
  // model
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 256;
  std::size_t layers = 1;
  double dropout = 0.1;
  std::size_t max_length = 30;
  std::size_t frames = 8;
  std::size_t feature_dim = 32;
  std::uint64_t model_seed = 1;
  // loss
  double mask_ratio = 0.5;
  std::array<double, 5> lambda{1.0, 1.0, 1.0, 1.0, 1.0};
  LogisticLabels object_labels = LogisticLabels::kSigned;
  // optimizer
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  std::uint64_t train_seed = 11;
  // baseline
  std::size_t ar_layers = 2;
  std::size_t ar_epochs = 50;
  // corpus
  std::size_t videos = 2000;
  std::size_t captions_per_video = 3;
  std::size_t holdout = 0;  // trailing videos excluded from training
  double noise = 0.1;
  double paraphrase_rate = 0.05;
  std::uint64_t data_seed = 7;
  std::size_t min_count = 3;
  // decoding
  double gamma = 0.8;
  std::size_t iterations = 1;
  bool lock_objects = false;
  bool exclusive_objects = true;
  std::size_t beam = 5;
  bool dedup = true;
  bool teacher_rescore = false;
  // evaluation
  bool unique_words = false;
  // paths
  std::string features = "features.bin";
  std::string manifest = "manifest.jsonl";
  std::string object_words;  // empty: derived from the synthetic world
  std::string checkpoint = "model.ckpt";
  std::string ar_checkpoint;

  static std::vector<std::string> keys();
  // Parses and range-checks one value; ConfigError names key, value and rule.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  void validate() const;
  std::string to_text() const;

  ModelDims model_dims(std::size_t vocab_size, std::size_t object_count) const;
  ArDims ar_dims(std::size_t word_count) const;
  TfmDims tfm_dims(std::size_t layers) const;
  AdamOptions adam() const;
  LossOptions loss_options() const;
  ControlSpec control_spec() const;
  WorldSpec world() const;
};

// Lines of key=value; blank lines and lines starting with '#' are skipped.
RunConfig parse_config(std::string_view text);
// Applies the keys present in `text` on top of `config`.
void overlay_config(RunConfig& config, std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace o2na
