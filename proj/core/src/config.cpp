#include "o2na/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "o2na/errors.hpp"
#include "o2na/io.hpp"

namespace o2na {

namespace {

[[noreturn]] void bad_value(std::string_view key, std::string_view value,
                            const std::string& rule) {
  throw ConfigError("config key '" + std::string(key) + "' = '" + std::string(value) +
                    "': " + rule);
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_uint(std::string_view key, std::string_view value) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    bad_value(key, value, "expected a non-negative integer");
  }
  return out;
}

double parse_double(std::string_view key, std::string_view value) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || !std::isfinite(out)) {
    bad_value(key, value, "expected a finite number");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "expected true or false");
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Shortest form that still round-trips.
  for (int precision = 1; precision <= 17; ++precision) {
    char shorter[32];
    std::snprintf(shorter, sizeof(shorter), "%.*g", precision, v);
    if (std::strtod(shorter, nullptr) == v) return shorter;
  }
  return buf;
}

struct Field {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <typename T>
Field uint_field(const char* name, T RunConfig::*member, std::uint64_t lo, std::uint64_t hi) {
  return {name, [member](const RunConfig& c) { return std::to_string(c.*member); },
          [name, member, lo, hi](RunConfig& c, std::string_view v) {
            const auto x = parse_uint(name, v);
            if (x < lo || x > hi) {
              bad_value(name, v, "must lie in [" + std::to_string(lo) + ", " +
                                     std::to_string(hi) + "]");
            }
            c.*member = static_cast<T>(x);
          }};
}

Field real_field(const char* name, double RunConfig::*member, double lo, double hi,
                 bool open_low = false) {
  return {name, [member](const RunConfig& c) { return format_double(c.*member); },
          [name, member, lo, hi, open_low](RunConfig& c, std::string_view v) {
            const double x = parse_double(name, v);
            if (x < lo || x > hi || (open_low && x == lo)) {
              bad_value(name, v, std::string("must lie in ") + (open_low ? "(" : "[") +
                                     format_double(lo) + ", " + format_double(hi) + "]");
            }
            c.*member = x;
          }};
}

Field bool_field(const char* name, bool RunConfig::*member) {
  return {name, [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [name, member](RunConfig& c, std::string_view v) { c.*member = parse_bool(name, v); }};
}

Field text_field(const char* name, std::string RunConfig::*member) {
  return {name, [member](const RunConfig& c) { return c.*member; },
          [member](RunConfig& c, std::string_view v) { c.*member = std::string(v); }};
}

Field lambda_field(const char* name, std::size_t index) {
  return {name, [index](const RunConfig& c) { return format_double(c.lambda[index]); },
          [name, index](RunConfig& c, std::string_view v) {
            const double x = parse_double(name, v);
            if (x < 0.0) bad_value(name, v, "loss weights must be non-negative");
            c.lambda[index] = x;
          }};
}

constexpr std::uint64_t kBig = 1'000'000'000;
constexpr std::uint64_t kSeedMax = ~std::uint64_t{0};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      uint_field("d_model", &RunConfig::d_model, 1, 4096),
      uint_field("heads", &RunConfig::heads, 1, 64),
      uint_field("d_ff", &RunConfig::d_ff, 1, 16384),
      uint_field("layers", &RunConfig::layers, 1, 16),
      real_field("dropout", &RunConfig::dropout, 0.0, 0.99),
      uint_field("max_length", &RunConfig::max_length, 1, 512),
      uint_field("frames", &RunConfig::frames, 1, 1024),
      uint_field("feature_dim", &RunConfig::feature_dim, 1, 65536),
      uint_field("model_seed", &RunConfig::model_seed, 0, kSeedMax),
      real_field("mask_ratio", &RunConfig::mask_ratio, 0.0, 1.0),
      lambda_field("lambda1", 0),
      lambda_field("lambda2", 1),
      lambda_field("lambda3", 2),
      lambda_field("lambda4", 3),
      lambda_field("lambda5", 4),
      {"object_labels",
       [](const RunConfig& c) {
         return std::string(c.object_labels == LogisticLabels::kSigned ? "signed" : "literal");
       },
       [](RunConfig& c, std::string_view v) {
         if (v == "signed") {
           c.object_labels = LogisticLabels::kSigned;
         } else if (v == "literal") {
           c.object_labels = LogisticLabels::kLiteral;
         } else {
           bad_value("object_labels", v, "expected signed or literal");
         }
       }},
      real_field("learning_rate", &RunConfig::learning_rate, 0.0, 1.0, true),
      real_field("beta1", &RunConfig::beta1, 0.0, 0.999999),
      real_field("beta2", &RunConfig::beta2, 0.0, 0.999999999),
      real_field("epsilon", &RunConfig::epsilon, 0.0, 1.0, true),
      uint_field("epochs", &RunConfig::epochs, 0, kBig),
      uint_field("batch_size", &RunConfig::batch_size, 1, kBig),
      uint_field("train_seed", &RunConfig::train_seed, 0, kSeedMax),
      uint_field("ar_layers", &RunConfig::ar_layers, 1, 32),
      uint_field("ar_epochs", &RunConfig::ar_epochs, 0, kBig),
      uint_field("videos", &RunConfig::videos, 1, kBig),
      uint_field("captions_per_video", &RunConfig::captions_per_video, 1, 1000),
      uint_field("holdout", &RunConfig::holdout, 0, kBig),
      real_field("noise", &RunConfig::noise, 0.0, 1e6),
      real_field("paraphrase_rate", &RunConfig::paraphrase_rate, 0.0, 1.0),
      uint_field("data_seed", &RunConfig::data_seed, 0, kSeedMax),
      uint_field("min_count", &RunConfig::min_count, 1, kBig),
      real_field("gamma", &RunConfig::gamma, 0.0, 1.0),
      uint_field("iterations", &RunConfig::iterations, 0, 1000),
      bool_field("lock_objects", &RunConfig::lock_objects),
      bool_field("exclusive_objects", &RunConfig::exclusive_objects),
      uint_field("beam", &RunConfig::beam, 1, 512),
      bool_field("dedup", &RunConfig::dedup),
      bool_field("teacher_rescore", &RunConfig::teacher_rescore),
      bool_field("unique_words", &RunConfig::unique_words),
      text_field("features", &RunConfig::features),
      text_field("manifest", &RunConfig::manifest),
      text_field("object_words", &RunConfig::object_words),
      text_field("checkpoint", &RunConfig::checkpoint),
      text_field("ar_checkpoint", &RunConfig::ar_checkpoint),
  };
  return table;
}

const Field& find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (key == f.name) return f;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.name);
  return out;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  find_field(key).set(*this, trim(value));
}

std::string RunConfig::get(std::string_view key) const { return find_field(key).get(*this); }

void RunConfig::validate() const {
  if (d_model % heads != 0) {
    throw ConfigError("config key 'heads' = '" + std::to_string(heads) +
                      "': must divide d_model = " + std::to_string(d_model));
  }
  if (holdout >= videos) {
    throw ConfigError("config key 'holdout' = '" + std::to_string(holdout) +
                      "': must be smaller than videos = " + std::to_string(videos));
  }
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) {
    out += f.name;
    out += '=';
    out += f.get(*this);
    out += '\n';
  }
  return out;
}

TfmDims RunConfig::tfm_dims(std::size_t n_layers) const {
  TfmDims t;
  t.d_model = d_model;
  t.heads = heads;
  t.d_ff = d_ff;
  t.layers = n_layers;
  t.dropout = dropout;
  return t;
}

ModelDims RunConfig::model_dims(std::size_t vocab_size, std::size_t object_count) const {
  ModelDims d;
  d.frames = frames;
  d.image_dim = feature_dim;
  d.motion_dim = feature_dim;
  d.vocab_size = vocab_size;
  d.object_count = object_count;
  d.max_length = max_length;
  d.tfm = tfm_dims(layers);
  return d;
}

ArDims RunConfig::ar_dims(std::size_t word_count) const {
  ArDims d;
  d.frames = frames;
  d.image_dim = feature_dim;
  d.motion_dim = feature_dim;
  d.word_count = word_count;
  d.max_length = max_length;
  d.tfm = tfm_dims(ar_layers);
  return d;
}

AdamOptions RunConfig::adam() const {
  return {learning_rate, beta1, beta2, epsilon};
}

LossOptions RunConfig::loss_options() const {
  LossOptions o;
  o.weights.lambda = lambda;
  o.mask_ratio = mask_ratio;
  o.object_labels = object_labels;
  return o;
}

ControlSpec RunConfig::control_spec() const {
  ControlSpec s;
  s.gamma = gamma;
  s.iterations = iterations;
  s.mask_ratio = mask_ratio;
  s.lock_objects = lock_objects;
  s.exclusive = exclusive_objects;
  s.beam = beam;
  s.dedup = dedup;
  s.teacher_rescore = teacher_rescore;
  return s;
}

WorldSpec RunConfig::world() const {
  WorldSpec w = WorldSpec::default_world();
  w.videos = videos;
  w.captions_per_video = captions_per_video;
  w.frames = frames;
  w.feature_dim = feature_dim;
  w.noise = noise;
  w.paraphrase_rate = paraphrase_rate;
  w.seed = data_seed;
  return w;
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  overlay_config(config, text);
  config.validate();
  return config;
}

void overlay_config(RunConfig& config, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value, got '" +
                        std::string(t) + "'");
    }
    config.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_text_file(path));
}

}  // namespace o2na
