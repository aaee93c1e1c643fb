#pragma once

// A model and batch small enough for finite differences.

#include <random>
#include <vector>

#include "o2na/model.hpp"
#include "o2na/vocab.hpp"

namespace o2na::testing {

inline ModelDims tiny_dims(std::size_t layers = 1) {
  ModelDims d;
  d.frames = 2;
  d.image_dim = 3;
  d.motion_dim = 3;
  d.vocab_size = 10;
  d.object_count = 3;  // word ids 3, 4, 5
  d.max_length = 6;
  d.tfm.d_model = 8;
  d.tfm.heads = 2;
  d.tfm.d_ff = 12;
  d.tfm.layers = layers;
  d.tfm.dropout = 0.1;
  return d;
}

inline std::vector<int> tiny_object_ids() { return {3, 4, 5}; }

inline TrainingBatch tiny_batch(std::uint64_t seed = 3) {
  Rng rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  TrainingBatch b;
  b.size = 2;
  b.max_length = 4;
  b.image = Tensor({4, 3});
  b.motion = Tensor({4, 3});
  for (auto& v : b.image.data()) v = unit(rng);
  for (auto& v : b.motion.data()) v = unit(rng);
  b.captions = {6, 3, 7, 4, 8, 5, 9, kPadId};
  b.lengths = {4, 3};
  const auto ids = tiny_object_ids();
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<int> cap(b.captions.begin() + static_cast<std::ptrdiff_t>(i * 4),
                         b.captions.begin() + static_cast<std::ptrdiff_t>(i * 4 + b.lengths[i]));
    auto target = make_object_target(cap, ids);
    target.resize(4, kPadId);
    b.object_targets.insert(b.object_targets.end(), target.begin(), target.end());
  }
  b.caption_objects = Tensor::from_rows({{1, 1, 0}, {0, 0, 1}});
  b.video_objects = Tensor::from_rows({{1, 1, 0}, {0, 1, 1}});
  b.video_ids = {"v0", "v1"};
  return b;
}

}  // namespace o2na::testing
