// o2na: synth / train / generate / eval / bench front end.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "o2na/config.hpp"
#include "o2na/datagen.hpp"
#include "o2na/decoding.hpp"
#include "o2na/errors.hpp"
#include "o2na/io.hpp"
#include "o2na/metrics.hpp"
#include "o2na/training.hpp"

namespace fs = std::filesystem;
using namespace o2na;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flags that map one-to-one onto config keys.
struct Overrides {
  std::vector<std::pair<CLI::Option*, std::string>> bound;
  std::vector<std::string> raw_sets;
  std::map<std::string, std::string> storage;

  void add(CLI::App* app, const std::string& flag, const std::string& key,
           const std::string& help) {
    auto* opt = app->add_option(flag, storage[key], help);
    bound.emplace_back(opt, key);
  }
  void add_switch(CLI::App* app, const std::string& flag, const std::string& key,
                  const std::string& help) {
    auto* opt = app->add_flag(flag, help);
    bound.emplace_back(opt, key + "!");
  }

  void apply(RunConfig& config) const {
    for (const auto& kv : raw_sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
      config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const auto& [opt, key] : bound) {
      if (opt->count() == 0) continue;
      if (key.back() == '!') {
        config.set(key.substr(0, key.size() - 1), "true");
      } else {
        config.set(key, storage.at(key));
      }
    }
    config.validate();
  }
};

std::string config_comment(const RunConfig& config) {
  std::string out;
  std::istringstream in(config.to_text());
  std::string line;
  while (std::getline(in, line)) out += "# " + line + "\n";
  return out;
}

nlohmann::json config_json(const RunConfig& config) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& key : RunConfig::keys()) j[key] = config.get(key);
  return j;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw DataError(std::string(what) + " path is not set");
  if (!fs::exists(path)) throw DataError(std::string(what) + " not found: " + path);
}

std::vector<std::string> object_words(const RunConfig& config) {
  if (config.object_words.empty()) return WorldSpec::default_world().objects;
  require_file(config.object_words, "object word file");
  return load_object_words(config.object_words);
}

struct Corpus {
  Manifest manifest;
  FeatureSet features;
};

Corpus read_corpus(const RunConfig& config) {
  require_file(config.features, "feature file");
  require_file(config.manifest, "manifest");
  Corpus c{load_manifest(config.manifest), load_features(config.features)};
  if (c.manifest.size() != c.features.videos) {
    throw DataError("alignment error: manifest has " + std::to_string(c.manifest.size()) +
                    " videos, feature file has " + std::to_string(c.features.videos));
  }
  if (c.features.rows != 2 * config.frames || c.features.dim != config.feature_dim) {
    throw DataError("feature file stores " + std::to_string(c.features.rows) + "x" +
                    std::to_string(c.features.dim) + " per video, config expects " +
                    std::to_string(2 * config.frames) + "x" +
                    std::to_string(config.feature_dim));
  }
  return c;
}

// Videos [begin, end) of a corpus.
Corpus slice(const Corpus& c, std::size_t begin, std::size_t end) {
  Corpus out;
  out.manifest.assign(c.manifest.begin() + static_cast<std::ptrdiff_t>(begin),
                      c.manifest.begin() + static_cast<std::ptrdiff_t>(end));
  out.features.videos = end - begin;
  out.features.rows = c.features.rows;
  out.features.dim = c.features.dim;
  const std::size_t per = c.features.rows * c.features.dim;
  out.features.values.assign(c.features.values.begin() + static_cast<std::ptrdiff_t>(begin * per),
                             c.features.values.begin() + static_cast<std::ptrdiff_t>(end * per));
  return out;
}

std::size_t train_videos(const RunConfig& config, const Corpus& c) {
  if (config.holdout >= c.manifest.size()) {
    throw DataError("holdout " + std::to_string(config.holdout) + " leaves no training videos");
  }
  return c.manifest.size() - config.holdout;
}

// ---- synth ----------------------------------------------------------------

int run_synth(const RunConfig& config) {
  const auto corpus = synth_corpus(config.world());
  save_features(config.features, corpus.features);
  save_manifest(config.manifest, corpus.manifest);
  if (!config.object_words.empty()) {
    std::string words;
    for (const auto& w : corpus.spec.objects) words += w + "\n";
    write_text_file(config.object_words, words);
  }
  write_text_file(config.manifest + ".config", config.to_text());
  std::cout << "wrote " << corpus.manifest.size() << " videos to " << config.features << " and "
            << config.manifest << "\n";
  return 0;
}

// ---- train ----------------------------------------------------------------

int run_train(RunConfig config, const std::string& model_kind, const std::string& log_path) {
  const Corpus all = read_corpus(config);
  const Corpus train = slice(all, 0, train_videos(config, all));
  const auto words = object_words(config);
  auto built = build_vocab(train.manifest, words, config.min_count);
  Dataset data(train.manifest, train.features, built.words, built.objects, config.frames,
               config.max_length);
  const std::string log_file =
      !log_path.empty() ? log_path
                        : (model_kind == "ar" ? config.ar_checkpoint : config.checkpoint) +
                              ".log.tsv";
  std::ofstream log(log_file);
  if (!log) throw DataError("cannot write loss log " + log_file);
  log << config_comment(config) << epoch_log_header() << "\n";
  auto on_epoch = [&](const EpochLog& e) {
    log << format_epoch_log(e) << std::endl;
    std::cerr << "epoch " << e.epoch << " total " << e.total << " (" << e.seconds << " s)\n";
  };
  if (model_kind == "ar") {
    if (config.ar_checkpoint.empty()) throw UsageError("--ar-checkpoint is required for --model ar");
    ArModel model(config.ar_dims(built.words.size()), config.model_seed);
    train_ar(model, data, config, on_epoch);
    save_ar(config.ar_checkpoint, config, built.words, model);
    std::cout << "saved " << config.ar_checkpoint << "\n";
  } else {
    O2naModel model(config.model_dims(built.words.size(), built.objects.size()),
                    config.model_seed);
    train_o2na(model, data, config, on_epoch);
    save_o2na(config.checkpoint, config, built.words, built.objects, model);
    std::cout << "saved " << config.checkpoint << "\n";
  }
  return 0;
}

// ---- generate ---------------------------------------------------------------

struct GenerateArgs {
  std::string objects;
  std::optional<std::size_t> length;
  std::string split = "auto";
  std::size_t limit = 0;
  std::string out;
  std::string trace;
};

std::vector<std::size_t> split_videos(const RunConfig& config, std::size_t total,
                                      const std::string& split, std::size_t limit) {
  std::size_t begin = 0, end = total;
  const std::size_t train_end = total - std::min(config.holdout, total);
  if (split == "heldout" || (split == "auto" && config.holdout > 0)) {
    begin = train_end;
  } else if (split == "train") {
    end = train_end;
  } else if (split != "all" && split != "auto") {
    throw UsageError("--split must be auto, heldout, train or all, got '" + split + "'");
  }
  std::vector<std::size_t> out;
  for (std::size_t v = begin; v < end && (limit == 0 || out.size() < limit); ++v) out.push_back(v);
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    if (b == std::string::npos) continue;
    out.push_back(item.substr(b, item.find_last_not_of(' ') - b + 1));
  }
  return out;
}

int run_generate(const std::string& checkpoint, const std::string& config_path,
                 const Overrides& overrides, const GenerateArgs& args, bool keep_predicted) {
  require_file(checkpoint, "checkpoint");
  O2naBundle bundle = load_o2na(checkpoint);
  RunConfig config = bundle.config;
  if (!config_path.empty()) overlay_config(config, read_text_file(config_path));
  overrides.apply(config);
  // The loaded model fixes these.
  for (const char* key : {"d_model", "heads", "d_ff", "layers", "max_length", "frames",
                          "feature_dim", "model_seed"}) {
    config.set(key, bundle.config.get(key));
  }
  config.checkpoint = checkpoint;
  if (keep_predicted) config.exclusive_objects = false;
  std::unique_ptr<ArModel> teacher;
  if (config.teacher_rescore) {
    require_file(config.ar_checkpoint, "AR checkpoint");
    teacher = std::move(load_ar(config.ar_checkpoint).model);
  }
  ControlSpec spec = config.control_spec();
  spec.length = args.length;
  for (const auto& word : split_list(args.objects)) {
    auto idx = bundle.objects.index_of_word(word);
    if (!idx) throw UsageError("--objects: '" + word + "' is not in the object vocabulary");
    spec.forced_on.push_back(*idx);
  }
  const Corpus all = read_corpus(config);
  Decoder decoder(*bundle.model, bundle.objects, teacher.get());
  std::ofstream out_file, trace_file;
  std::ostream* out = &std::cout;
  if (!args.out.empty()) {
    out_file.open(args.out);
    if (!out_file) throw DataError("cannot write " + args.out);
    out = &out_file;
  }
  if (!args.trace.empty()) {
    trace_file.open(args.trace);
    if (!trace_file) throw DataError("cannot write " + args.trace);
    trace_file << nlohmann::json{{"config", config_json(config)}}.dump() << "\n";
  }
  const std::size_t n = config.frames * all.features.dim;
  for (std::size_t v : split_videos(config, all.manifest.size(), args.split, args.limit)) {
    auto rows = all.features.video(v);
    Tensor image({config.frames, all.features.dim},
                 std::vector<double>(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n)));
    Tensor motion({config.frames, all.features.dim},
                  std::vector<double>(rows.begin() + static_cast<std::ptrdiff_t>(n), rows.end()));
    DecodeTrace trace = decoder.npd_decode(image, motion, spec);
    trace.video_id = all.manifest[v].video_id;
    nlohmann::json line;
    line["video_id"] = trace.video_id;
    line["hypothesis"] = bundle.vocab.decode(trace.final());
    line["references"] = all.manifest[v].captions;
    *out << line.dump() << "\n";
    if (trace_file.is_open()) {
      trace_file << trace_to_json(trace, bundle.vocab, bundle.objects) << "\n";
    }
  }
  return 0;
}

// ---- eval -------------------------------------------------------------------

int run_eval(RunConfig config, const std::string& input, const std::string& report_path) {
  require_file(input, "evaluation input");
  EvalCorpus corpus = eval_corpus_from_jsonl(read_text_file(input));
  std::size_t vocab_words = 0;
  if (!config.checkpoint.empty() && fs::exists(config.checkpoint)) {
    O2naBundle bundle = load_o2na(config.checkpoint);
    for (int id = 0; id < static_cast<int>(bundle.vocab.size()); ++id) {
      if (!Vocabulary::is_special(id)) ++vocab_words;
    }
  }
  if (fs::exists(config.manifest)) {
    Manifest m = load_manifest(config.manifest);
    const std::size_t end = m.size() - std::min(config.holdout, m.size());
    for (std::size_t v = 0; v < end; ++v)
      for (const auto& c : m[v].captions) corpus.training_captions.insert(join_tokens(tokenize(c)));
  }
  const Diversity d = diversity(corpus, vocab_words,
                                config.unique_words ? UniqueMode::kWord : UniqueMode::kCaption);
  std::ostringstream report;
  char buf[64];
  auto put = [&](const char* key, double value) {
    std::snprintf(buf, sizeof(buf), "%.4f", value);
    report << key << "=" << buf << "\n";
  };
  report << "videos=" << corpus.items.size() << "\n";
  const auto p = bleu_precisions(corpus, 4);
  put("bleu1", bleu(corpus, 1));
  put("bleu4", bleu(corpus, 4));
  for (std::size_t k = 0; k < p.size(); ++k) {
    put(("precision" + std::to_string(k + 1)).c_str(), p[k]);
  }
  put("rouge_l", rouge_l(corpus));
  if (corpus.items.size() >= 2) put("cider", 100.0 * cider(corpus));
  put("novel", d.novel);
  put("unique", d.unique);
  if (vocab_words) put("vocab_usage", d.vocab);
  for (const auto& key : RunConfig::keys()) report << "config." << key << "=" << config.get(key) << "\n";
  if (report_path.empty()) {
    std::cout << report.str();
  } else {
    write_text_file(report_path, report.str());
  }
  return 0;
}

// ---- bench ------------------------------------------------------------------

int run_bench(RunConfig config, const std::string& lengths_text, std::size_t videos,
              std::size_t repeats) {
  require_file(config.checkpoint, "checkpoint");
  require_file(config.ar_checkpoint, "AR checkpoint");
  O2naBundle na = load_o2na(config.checkpoint);
  ArBundle ar = load_ar(config.ar_checkpoint);
  const Corpus all = read_corpus(config);
  std::vector<std::size_t> lengths;
  for (const auto& s : split_list(lengths_text)) {
    try {
      lengths.push_back(std::stoul(s));
    } catch (const std::exception&) {
      throw UsageError("--lengths: '" + s + "' is not a length");
    }
  }
  if (lengths.empty()) throw UsageError("--lengths needs at least one value");
  const auto ids = split_videos(config, all.manifest.size(), "auto", videos);
  std::vector<Tensor> images, motions, ar_v;
  const std::size_t n = config.frames * all.features.dim;
  Tape tape(Tape::Mode::kInference);
  for (auto v : ids) {
    auto rows = all.features.video(v);
    images.emplace_back(Shape{config.frames, all.features.dim},
                        std::vector<double>(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n)));
    motions.emplace_back(Shape{config.frames, all.features.dim},
                         std::vector<double>(rows.begin() + static_cast<std::ptrdiff_t>(n), rows.end()));
    ar_v.push_back(ar.model->project_features(tape, images.back(), motions.back()));
  }
  Decoder decoder(*na.model, na.objects);
  ControlSpec spec = config.control_spec();
  std::cout << config_comment(config);
  std::cout << "# na_params=" << na.model->parameters().scalar_count()
            << " ar_params=" << ar.model->parameters().scalar_count() << "\n";
  std::cout << "length\tna_ms\tar_ms\tna_vps\tar_vps\n";
  for (std::size_t l : lengths) {
    spec.length = l;
    auto na_report = measure_vps(
        [&](std::size_t i) {
          decoder.decode_o2na(images[i], motions[i], spec);
          return l;
        },
        ids.size(), repeats);
    auto ar_report = measure_vps(
        [&](std::size_t i) {
          ar.model->decode(ar_v[i], {l, l});
          return l;
        },
        ids.size(), repeats);
    std::printf("%zu\t%.4f\t%.4f\t%.1f\t%.1f\n", l, na_report.ms_by_length[l],
                ar_report.ms_by_length[l], na_report.vps, ar_report.vps);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object-oriented non-autoregressive video captioning"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "key=value configuration file");
  Overrides overrides;
  app.add_option("--set", overrides.raw_sets, "override any config key (key=value)");

  auto add_paths = [&](CLI::App* sub) {
    overrides.add(sub, "--features", "features", "feature file");
    overrides.add(sub, "--manifest", "manifest", "manifest (JSON lines)");
    overrides.add(sub, "--object-words", "object_words", "object vocabulary file");
    overrides.add(sub, "--holdout", "holdout", "trailing videos kept out of training");
  };

  auto* synth = app.add_subcommand("synth", "write a synthetic corpus");
  add_paths(synth);
  overrides.add(synth, "--videos", "videos", "number of videos");
  overrides.add(synth, "--seed", "data_seed", "corpus seed");
  overrides.add(synth, "--noise", "noise", "feature noise sigma");

  auto* train = app.add_subcommand("train", "train a model");
  add_paths(train);
  std::string model_kind = "o2na", log_path;
  train->add_option("--model", model_kind, "o2na or ar")->check(CLI::IsMember({"o2na", "ar"}));
  train->add_option("--log", log_path, "loss log path (TSV)");
  overrides.add(train, "--checkpoint", "checkpoint", "output checkpoint");
  overrides.add(train, "--ar-checkpoint", "ar_checkpoint", "output baseline checkpoint");
  overrides.add(train, "--epochs", "epochs", "training epochs");
  overrides.add(train, "--ar-epochs", "ar_epochs", "baseline training epochs");
  overrides.add(train, "--batch-size", "batch_size", "batch size");
  overrides.add(train, "--lr", "learning_rate", "learning rate");
  overrides.add(train, "--seed", "train_seed", "shuffle/dropout seed");

  auto* generate = app.add_subcommand("generate", "caption videos");
  add_paths(generate);
  GenerateArgs gen;
  overrides.add(generate, "--checkpoint", "checkpoint", "trained checkpoint");
  overrides.add(generate, "--ar-checkpoint", "ar_checkpoint", "baseline for re-scoring");
  generate->add_option("--objects", gen.objects, "comma-separated forced object words");
  generate->add_option("--length", gen.length, "caption length override");
  overrides.add(generate, "--iterations", "iterations", "refinement rounds T");
  overrides.add(generate, "--gamma", "gamma", "object threshold");
  overrides.add(generate, "--npd", "beam", "length candidates k");
  overrides.add_switch(generate, "--lock-objects", "lock_objects", "never re-mask selected objects");
  overrides.add_switch(generate, "--teacher", "teacher_rescore", "re-score candidates with the baseline");
  bool keep_predicted = false;
  generate->add_flag("--keep-predicted", keep_predicted,
                     "keep thresholded objects alongside --objects");
  generate->add_option("--split", gen.split, "auto, heldout, train or all");
  generate->add_option("--limit", gen.limit, "decode at most this many videos");
  generate->add_option("--out", gen.out, "captions (JSON lines, eval format)");
  generate->add_option("--trace", gen.trace, "decode trace (JSON lines)");

  auto* eval = app.add_subcommand("eval", "score generated captions");
  add_paths(eval);
  std::string eval_input, report_path;
  overrides.add(eval, "--checkpoint", "checkpoint", "checkpoint (vocabulary size)");
  eval->add_option("--input", eval_input, "generate output")->required();
  eval->add_option("--report", report_path, "report path (key=value)");
  overrides.add_switch(eval, "--unique-words", "unique_words", "word-level Unique");

  auto* bench = app.add_subcommand("bench", "AR vs NA latency per length");
  add_paths(bench);
  std::string lengths = "5,15,25";
  std::size_t bench_videos = 20, repeats = 5;
  overrides.add(bench, "--checkpoint", "checkpoint", "trained checkpoint");
  overrides.add(bench, "--ar-checkpoint", "ar_checkpoint", "baseline checkpoint");
  overrides.add(bench, "--iterations", "iterations", "refinement rounds T");
  bench->add_option("--lengths", lengths, "comma-separated target lengths");
  bench->add_option("--videos", bench_videos, "videos per repeat");
  bench->add_option("--repeats", repeats, "timed repeats (at least 5)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    RunConfig config;
    if (!config_path.empty()) {
      require_file(config_path, "config file");
      config = load_config(config_path);
    }
    overrides.apply(config);
    if (synth->parsed()) return run_synth(config);
    if (train->parsed()) return run_train(config, model_kind, log_path);
    if (generate->parsed()) {
      return run_generate(config.checkpoint, config_path, overrides, gen, keep_predicted);
    }
    if (eval->parsed()) return run_eval(config, eval_input, report_path);
    if (bench->parsed()) return run_bench(config, lengths, bench_videos, repeats);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const o2na::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
