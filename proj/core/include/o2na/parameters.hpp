#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "o2na/ops.hpp"
#include "o2na/tensor.hpp"

namespace o2na {

// Ordered, named collection of learnable tensors. Names are stable strings
// ("op.w1", "og.tfm.0.self.q", ...) and are what the checkpoint stores.
class ParameterSet {
 public:
  // Glorot-uniform matrix, bound sqrt(6 / (fan_in + fan_out)).
  Tensor add_glorot(const std::string& name, std::size_t fan_in,
                    std::size_t fan_out, Rng& rng);
  // Entries drawn from N(0, stddev^2).
  Tensor add_normal(const std::string& name, Shape shape, double stddev, Rng& rng);
  Tensor add_constant(const std::string& name, Shape shape, double value);

  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const {
    return entries_;
  }
  std::vector<Tensor> tensors() const;

  void zero_grad();
  bool all_finite() const;

  // Copies values from `other` (names and shapes must match exactly).
  void assign(const std::vector<std::pair<std::string, Tensor>>& other);

 private:
  Tensor add(const std::string& name, Tensor t);
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// Adam with bias correction.
struct AdamOptions {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  // Applies one update to every tensor from its gradient buffer.
  void step(const std::vector<Tensor>& params);
  std::uint64_t steps() const { return step_; }
  const AdamOptions& options() const { return options_; }

 private:
  AdamOptions options_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

// Checkpoint file ("O2NACKPT"): magic, u32 version, then until EOF records of
// (u32 name length, UTF-8 name, u32 rank, u32 dims..., little-endian f64 data).
struct CheckpointRecord {
  std::string name;
  Tensor value;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path);

// Text payloads (config, vocabularies) ride along as rank-1 records holding
// one byte per element.
CheckpointRecord text_record(std::string name, std::string_view text);
std::string record_text(const CheckpointRecord& record);

}  // namespace o2na
