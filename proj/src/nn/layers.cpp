#include "lungsynth/nn/layers.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>

#include "lungsynth/error.hpp"

namespace lungsynth::nn {

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IntegrityError("checkpoint weights truncated");
  return v;
}

}  // namespace

Var ParameterStore::add(const std::string& name, Tensor init) {
  for (const auto& [n, _] : items_) {
    if (n == name) throw ContractError("duplicate parameter name " + name);
  }
  auto v = parameter(std::move(init));
  items_.emplace_back(name, v);
  return v;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : items_) n += v->value.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, v] : items_) {
    if (v->has_grad()) v->grad.fill(0.0f);
  }
}

void ParameterStore::save(std::ostream& out) const {
  put<std::uint64_t>(out, items_.size());
  for (const auto& [name, v] : items_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v->value.ndim()));
    for (int d : v->value.shape()) put<std::int32_t>(out, d);
    out.write(reinterpret_cast<const char*>(v->value.data()),
              static_cast<std::streamsize>(v->value.numel() * sizeof(float)));
  }
}

void ParameterStore::load(std::istream& in) {
  const auto count = get<std::uint64_t>(in);
  if (count != items_.size()) {
    throw IntegrityError("checkpoint has " + std::to_string(count) + " parameters, model expects " +
                         std::to_string(items_.size()));
  }
  for (auto& [name, v] : items_) {
    const auto len = get<std::uint32_t>(in);
    std::string stored(len, '\0');
    in.read(stored.data(), len);
    if (stored != name) throw IntegrityError("checkpoint parameter '" + stored + "' where '" + name + "' expected");
    const auto ndim = get<std::uint32_t>(in);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = get<std::int32_t>(in);
    if (shape != v->value.shape()) throw IntegrityError("checkpoint parameter '" + name + "' has the wrong shape");
    in.read(reinterpret_cast<char*>(v->value.data()), static_cast<std::streamsize>(v->value.numel() * sizeof(float)));
    if (!in) throw IntegrityError("checkpoint weights truncated");
  }
}

void write_checkpoint(const std::filesystem::path& path, const std::string& magic, const std::string& header,
                      const ParameterStore& store) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << magic << '\n' << header.size() << '\n' << header;
  store.save(out);
  if (!out) throw Error("short write to checkpoint " + path.string());
}

std::string read_checkpoint_header(std::istream& in, const std::string& magic, const std::filesystem::path& path) {
  std::string line;
  std::getline(in, line);
  if (!in || line != magic) throw FormatError(path.string() + ": not a " + magic + " file");
  std::getline(in, line);
  std::size_t len = 0;
  try {
    len = std::stoull(line);
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": corrupt checkpoint header length");
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IntegrityError(path.string() + ": checkpoint header truncated");
  return text;
}

Tensor uniform_init(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, int in_ch, int out_ch, int kernel, int stride_,
               int pad_, Rng& rng, bool zero_init)
    : stride(stride_), pad(pad_) {
  const int fan_in = in_ch * kernel * kernel;
  std::vector<int> wshape{out_ch, in_ch, kernel, kernel};
  weight = store.add(name + ".weight", zero_init ? Tensor(wshape) : uniform_init(wshape, fan_in, rng));
  bias = store.add(name + ".bias", zero_init ? Tensor({out_ch}) : uniform_init({out_ch}, fan_in, rng));
}

Linear::Linear(ParameterStore& store, const std::string& name, int in_features, int out_features, Rng& rng,
               bool zero_init) {
  std::vector<int> wshape{out_features, in_features};
  weight = store.add(name + ".weight", zero_init ? Tensor(wshape) : uniform_init(wshape, in_features, rng));
  bias = store.add(name + ".bias", zero_init ? Tensor({out_features}) : uniform_init({out_features}, in_features, rng));
}

GroupNorm::GroupNorm(ParameterStore& store, const std::string& name, int channels, int groups_) : groups(groups_) {
  gamma = store.add(name + ".gamma", Tensor({channels}, 1.0f));
  beta = store.add(name + ".beta", Tensor({channels}, 0.0f));
}

Var GroupNorm::operator()(const Var& x) const {
  return add_channel(mul_channel(group_norm(x, groups), gamma), beta);
}

int group_count(int channels, int preferred) {
  for (int g = std::min(preferred, channels); g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

}  // namespace lungsynth::nn
