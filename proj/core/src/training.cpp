#include "o2na/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>

#include "o2na/errors.hpp"

namespace o2na {

std::string epoch_log_header() {
  return "epoch\tlength\tobject\tobject_gen\tcaption\trefine\ttotal\tseconds";
}

std::string format_epoch_log(const EpochLog& log) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu\t%.10f\t%.10f\t%.10f\t%.10f\t%.10f\t%.10f\t%.2f",
                log.epoch, log.length, log.object, log.object_gen, log.caption, log.refine,
                log.total, log.seconds);
  return buf;
}

namespace {

using Clock = std::chrono::steady_clock;

void check_finite(double value, const char* what, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(value)) {
    throw NumericError(std::string(what) + " became non-finite at epoch " +
                       std::to_string(epoch) + ", batch " + std::to_string(batch));
  }
}

}  // namespace

std::vector<EpochLog> train_o2na(O2naModel& model, const Dataset& data,
                                 const RunConfig& config, const EpochCallback& on_epoch) {
  BatchIterator batches(data, config.batch_size, config.train_seed);
  Adam adam(config.adam());
  Rng dropout_rng(config.train_seed * 2 + 1), mask_rng(config.train_seed * 2 + 2);
  const LossOptions options = config.loss_options();
  const std::vector<Tensor> params = model.parameters().tensors();
  std::vector<EpochLog> logs;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const auto start = Clock::now();
    EpochLog log;
    log.epoch = e + 1;
    const auto plan = batches.epoch_plan(e);
    for (std::size_t b = 0; b < plan.size(); ++b) {
      const TrainingBatch batch = data.make_batch(plan[b]);
      Tape tape;
      Pass pass{tape, config.dropout, &dropout_rng};
      LossBreakdown loss = model.full_loss(pass, batch, options, mask_rng);
      check_finite(loss.total, "training loss", e + 1, b + 1);
      model.parameters().zero_grad();
      tape.backward(loss.total_tensor);
      adam.step(params);
      log.length += loss.length;
      log.object += loss.object;
      log.object_gen += loss.object_gen;
      log.caption += loss.caption;
      log.refine += loss.refine;
      log.total += loss.total;
    }
    const double n = static_cast<double>(plan.size());
    for (double* v : {&log.length, &log.object, &log.object_gen, &log.caption, &log.refine,
                      &log.total}) {
      *v /= n;
    }
    if (!model.parameters().all_finite()) {
      throw NumericError("parameters became non-finite in epoch " + std::to_string(e + 1));
    }
    log.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return logs;
}

std::vector<EpochLog> train_ar(ArModel& model, const Dataset& data, const RunConfig& config,
                               const EpochCallback& on_epoch) {
  BatchIterator batches(data, config.batch_size, config.train_seed);
  Adam adam(config.adam());
  Rng dropout_rng(config.train_seed * 2 + 1);
  const std::vector<Tensor> params = model.parameters().tensors();
  std::vector<EpochLog> logs;
  for (std::size_t e = 0; e < config.ar_epochs; ++e) {
    const auto start = Clock::now();
    EpochLog log;
    log.epoch = e + 1;
    const auto plan = batches.epoch_plan(e);
    for (std::size_t b = 0; b < plan.size(); ++b) {
      const TrainingBatch batch = data.make_batch(plan[b]);
      Tape tape;
      Pass pass{tape, config.dropout, &dropout_rng};
      Tensor loss = model.loss(pass, batch);
      check_finite(loss.item(), "baseline loss", e + 1, b + 1);
      model.parameters().zero_grad();
      tape.backward(loss);
      adam.step(params);
      log.total += loss.item();
    }
    log.total /= static_cast<double>(plan.size());
    log.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return logs;
}

namespace {

std::vector<CheckpointRecord> meta_records(std::string_view kind, const RunConfig& config,
                                           const Vocabulary& vocab) {
  std::vector<CheckpointRecord> out;
  out.push_back(text_record("meta.kind", kind));
  out.push_back(text_record("meta.config", config.to_text()));
  out.push_back(text_record("meta.vocab", vocab.to_text()));
  return out;
}

struct LoadedRecords {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> params;
};

LoadedRecords split_records(const std::filesystem::path& path, std::string_view kind) {
  LoadedRecords out;
  for (auto& rec : read_checkpoint(path)) {
    if (rec.name.rfind("meta.", 0) == 0) {
      out.meta[rec.name] = record_text(rec);
    } else {
      out.params.emplace_back(rec.name, rec.value);
    }
  }
  for (const char* key : {"meta.kind", "meta.config", "meta.vocab"}) {
    if (!out.meta.count(key)) {
      throw FormatError(path.string() + ": checkpoint lacks record " + key);
    }
  }
  if (out.meta["meta.kind"] != kind) {
    throw FormatError(path.string() + ": checkpoint holds a '" + out.meta["meta.kind"] +
                      "' model, expected '" + std::string(kind) + "'");
  }
  return out;
}

}  // namespace

void save_o2na(const std::filesystem::path& path, const RunConfig& config,
               const Vocabulary& vocab, const ObjectVocabulary& objects,
               const O2naModel& model) {
  auto records = meta_records("o2na", config, vocab);
  records.push_back(text_record("meta.objects", objects.to_text()));
  for (const auto& [name, t] : model.parameters().entries()) records.push_back({name, t});
  write_checkpoint(path, records);
}

O2naBundle load_o2na(const std::filesystem::path& path) {
  auto loaded = split_records(path, "o2na");
  if (!loaded.meta.count("meta.objects")) {
    throw FormatError(path.string() + ": checkpoint lacks record meta.objects");
  }
  O2naBundle b;
  b.config = parse_config(loaded.meta["meta.config"]);
  b.vocab = Vocabulary::from_text(loaded.meta["meta.vocab"]);
  b.objects = ObjectVocabulary::from_text(loaded.meta["meta.objects"], b.vocab);
  b.model = std::make_unique<O2naModel>(b.config.model_dims(b.vocab.size(), b.objects.size()),
                                        b.config.model_seed);
  b.model->parameters().assign(loaded.params);
  return b;
}

void save_ar(const std::filesystem::path& path, const RunConfig& config,
             const Vocabulary& vocab, const ArModel& model) {
  auto records = meta_records("ar", config, vocab);
  for (const auto& [name, t] : model.parameters().entries()) records.push_back({name, t});
  write_checkpoint(path, records);
}

ArBundle load_ar(const std::filesystem::path& path) {
  auto loaded = split_records(path, "ar");
  ArBundle b;
  b.config = parse_config(loaded.meta["meta.config"]);
  b.vocab = Vocabulary::from_text(loaded.meta["meta.vocab"]);
  b.model = std::make_unique<ArModel>(b.config.ar_dims(b.vocab.size()), b.config.model_seed);
  b.model->parameters().assign(loaded.params);
  return b;
}

}  // namespace o2na
