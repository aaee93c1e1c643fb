#include "o2na/parameters.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include "o2na/errors.hpp"
#include "o2na/io.hpp"

namespace o2na {

Tensor ParameterSet::add(const std::string& name, Tensor t) {
  if (contains(name)) throw ConfigError("duplicate parameter name " + name);
  t.set_requires_grad(true);
  entries_.emplace_back(name, t);
  return t;
}

Tensor ParameterSet::add_glorot(const std::string& name, std::size_t fan_in,
                                std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> data(fan_in * fan_out);
  for (auto& v : data) v = dist(rng);
  return add(name, Tensor({fan_in, fan_out}, std::move(data)));
}

Tensor ParameterSet::add_normal(const std::string& name, Shape shape,
                                double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(shape_size(shape));
  for (auto& v : data) v = dist(rng);
  return add(name, Tensor(std::move(shape), std::move(data)));
}

Tensor ParameterSet::add_constant(const std::string& name, Shape shape,
                                  double value) {
  return add(name, Tensor(std::move(shape), value));
}

const Tensor& ParameterSet::get(std::string_view name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ModelStateError("missing parameter " + std::string(name));
}

bool ParameterSet::contains(std::string_view name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return true;
  }
  return false;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.push_back(t);
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

bool ParameterSet::all_finite() const {
  for (const auto& [name, t] : entries_) {
    for (double v : t.data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

void ParameterSet::assign(const std::vector<std::pair<std::string, Tensor>>& other) {
  for (auto& [name, t] : entries_) {
    const Tensor* src = nullptr;
    for (const auto& [n, s] : other) {
      if (n == name) src = &s;
    }
    if (!src) throw ModelStateError("checkpoint lacks parameter " + name);
    if (src->shape() != t.shape()) {
      throw ModelStateError("parameter " + name + " has shape " +
                            shape_string(src->shape()) + " in checkpoint, expected " +
                            shape_string(t.shape()));
    }
    auto dst = t.data();
    auto from = src->data();
    std::copy(from.begin(), from.end(), dst.begin());
  }
}

void Adam::step(const std::vector<Tensor>& params) {
  if (first_.empty()) {
    for (const auto& p : params) {
      first_.emplace_back(p.size(), 0.0);
      second_.emplace_back(p.size(), 0.0);
    }
  }
  if (params.size() != first_.size()) {
    throw DimensionError("adam: optimizer tracks " + std::to_string(first_.size()) +
                         " tensors, step got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != first_[i].size()) {
      throw DimensionError("adam: tensor " + std::to_string(i) + " has shape " +
                           shape_string(params[i].shape()) +
                           " but moment buffers hold " +
                           std::to_string(first_[i].size()) + " values");
    }
  }
  ++step_;
  const auto& o = options_;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    if (!p.has_grad()) continue;
    auto g = std::as_const(p).grad();
    auto w = p.data();
    auto& m = first_[i];
    auto& v = second_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      w[j] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
}

namespace {

constexpr char kCheckpointMagic[8] = {'O', '2', 'N', 'A', 'C', 'K', 'P', 'T'};

}  // namespace

void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<CheckpointRecord>& records) {
  ByteWriter out;
  out.bytes(std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic)));
  out.u32(kCheckpointVersion);
  for (const auto& rec : records) {
    out.u32(static_cast<std::uint32_t>(rec.name.size()));
    out.bytes(rec.name);
    const auto& shape = rec.value.shape();
    out.u32(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) out.u32(static_cast<std::uint32_t>(d));
    for (double v : rec.value.data()) out.f64(v);
  }
  out.save(path);
}

std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path) {
  ByteReader in(path);
  const std::string magic = in.bytes(sizeof(kCheckpointMagic));
  if (magic != std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw FormatError(path.string() + ": bad checkpoint magic at byte offset 0");
  }
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " +
                      std::to_string(version));
  }
  std::vector<CheckpointRecord> records;
  while (!in.done()) {
    CheckpointRecord rec;
    rec.name = in.bytes(in.u32());
    const std::uint32_t rank = in.u32();
    if (rank == 0) {
      throw FormatError(path.string() + ": record " + rec.name +
                        " has rank 0 at byte offset " + std::to_string(in.offset()));
    }
    Shape shape(rank);
    for (auto& d : shape) d = in.u32();
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = in.f64();
    rec.value = Tensor(std::move(shape), std::move(data));
    records.push_back(std::move(rec));
  }
  return records;
}

CheckpointRecord text_record(std::string name, std::string_view text) {
  std::vector<double> data;
  data.reserve(text.size() + 1);
  data.push_back(static_cast<double>(text.size()));
  for (unsigned char c : text) data.push_back(static_cast<double>(c));
  Shape shape{data.size()};
  return {std::move(name), Tensor(std::move(shape), std::move(data))};
}

std::string record_text(const CheckpointRecord& record) {
  auto d = record.value.data();
  if (d.empty() || d[0] != static_cast<double>(d.size() - 1)) {
    throw FormatError("record " + record.name + " is not a text payload");
  }
  std::string out;
  out.reserve(d.size() - 1);
  for (std::size_t i = 1; i < d.size(); ++i) out.push_back(static_cast<char>(d[i]));
  return out;
}

}  // namespace o2na
