#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "lungsynth/nn/ops.hpp"
#include "lungsynth/nn/tensor.hpp"
#include "lungsynth/rng.hpp"

namespace lungsynth::nn {

// Ordered, named parameter list owned by a model. Layers register their
// weights at construction; the order defines the serialization layout.
class ParameterStore {
 public:
  Var add(const std::string& name, Tensor init);

  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  std::size_t scalar_count() const;
  void zero_grad();

  // Binary layout: u64 count, then per parameter: u32 name length, name,
  // u32 ndim, i32 dims, f32 values (little-endian host order).
  void save(std::ostream& out) const;
  // Names and shapes must match the registered parameters exactly.
  void load(std::istream& in);

 private:
  std::vector<std::pair<std::string, Var>> items_;
};

// Checkpoint file: magic line, header length line, header text (JSON), then
// the parameter store.
void write_checkpoint(const std::filesystem::path& path, const std::string& magic, const std::string& header,
                      const ParameterStore& store);
// Reads the magic and header, leaving `in` positioned at the weights.
std::string read_checkpoint_header(std::istream& in, const std::string& magic, const std::filesystem::path& path);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
Tensor uniform_init(std::vector<int> shape, int fan_in, Rng& rng);

struct Conv2d {
  Var weight;
  Var bias;
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, int in_ch, int out_ch, int kernel, int stride, int pad,
         Rng& rng, bool zero_init = false);
  Var operator()(const Var& x) const { return conv2d(x, weight, bias, stride, pad); }
};

struct Linear {
  Var weight;
  Var bias;

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, int in_features, int out_features, Rng& rng,
         bool zero_init = false);
  Var operator()(const Var& x) const { return linear(x, weight, bias); }
};

// Group normalisation followed by a learned per-channel scale and shift.
struct GroupNorm {
  Var gamma;
  Var beta;
  int groups = 1;

  GroupNorm() = default;
  GroupNorm(ParameterStore& store, const std::string& name, int channels, int groups);
  Var operator()(const Var& x) const;
};

// Largest divisor of `channels` not exceeding `preferred`.
int group_count(int channels, int preferred = 8);

}  // namespace lungsynth::nn
