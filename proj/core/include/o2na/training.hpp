#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "o2na/ar_baseline.hpp"
#include "o2na/config.hpp"
#include "o2na/datagen.hpp"
#include "o2na/model.hpp"

namespace o2na {

// Per-epoch means over batches.
struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double length = 0, object = 0, object_gen = 0, caption = 0, refine = 0;
  double total = 0;
  double seconds = 0;
};

std::string epoch_log_header();
std::string format_epoch_log(const EpochLog& log);

using EpochCallback = std::function<void(const EpochLog&)>;

// Raises NumericError when a loss turns NaN or infinite.
std::vector<EpochLog> train_o2na(O2naModel& model, const Dataset& data,
                                 const RunConfig& config, const EpochCallback& on_epoch = {});

// Only `total` is filled in for the baseline.
std::vector<EpochLog> train_ar(ArModel& model, const Dataset& data, const RunConfig& config,
                               const EpochCallback& on_epoch = {});

// A trained model with everything needed to rebuild and run it.
struct O2naBundle {
  RunConfig config;
  Vocabulary vocab;
  ObjectVocabulary objects;
  std::unique_ptr<O2naModel> model;
};

struct ArBundle {
  RunConfig config;
  Vocabulary vocab;
  std::unique_ptr<ArModel> model;
};

void save_o2na(const std::filesystem::path& path, const RunConfig& config,
               const Vocabulary& vocab, const ObjectVocabulary& objects,
               const O2naModel& model);
O2naBundle load_o2na(const std::filesystem::path& path);

void save_ar(const std::filesystem::path& path, const RunConfig& config,
             const Vocabulary& vocab, const ArModel& model);
ArBundle load_ar(const std::filesystem::path& path);

}  // namespace o2na
