#include "lungsynth/patch_classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "lungsynth/config.hpp"
#include "lungsynth/error.hpp"
#include "lungsynth/nn/optim.hpp"

namespace lungsynth {

namespace {
constexpr const char* kMagic = "LUNGSYNTH-SERESNET-1";
}

void PatchClassifierConfig::validate() const {
  if (base_channels < 1 || stages < 1 || blocks_per_stage < 1 || se_reduction < 1) {
    throw ConfigError("patch classifier: architecture sizes must be positive");
  }
  if (epochs < 1 || batch_size < 1) throw ConfigError("patch classifier: epochs and batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("patch classifier: lr must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("patch classifier: threshold must lie in (0, 1)");
}

PatchClassifierConfig PatchClassifierConfig::from_config(const Config& cfg, const std::string& section) {
  PatchClassifierConfig c;
  c.base_channels = static_cast<int>(cfg.get_int(section + ".base_channels", c.base_channels));
  c.stages = static_cast<int>(cfg.get_int(section + ".stages", c.stages));
  c.blocks_per_stage = static_cast<int>(cfg.get_int(section + ".blocks_per_stage", c.blocks_per_stage));
  c.se_reduction = static_cast<int>(cfg.get_int(section + ".se_reduction", c.se_reduction));
  c.epochs = static_cast<int>(cfg.get_int(section + ".epochs", c.epochs));
  c.batch_size = static_cast<int>(cfg.get_int(section + ".batch_size", c.batch_size));
  c.lr = cfg.get_double(section + ".lr", c.lr);
  c.weight_decay = cfg.get_double(section + ".weight_decay", c.weight_decay);
  c.augment = cfg.get_bool(section + ".augment", c.augment);
  c.threshold = cfg.get_double(section + ".threshold", c.threshold);
  c.validate();
  return c;
}

SqueezeExcite::SqueezeExcite(nn::ParameterStore& store, const std::string& name, int channels, int reduction,
                             Rng& rng)
    : fc1(store, name + ".fc1", channels, std::max(1, channels / reduction), rng),
      fc2(store, name + ".fc2", std::max(1, channels / reduction), channels, rng) {}

nn::Var SqueezeExcite::operator()(const nn::Var& x) const {
  auto s = nn::sigmoid(fc2(nn::relu(fc1(nn::global_avg_pool(x)))));
  return nn::mul_channel(x, s);
}

namespace {

struct SEBlock {
  nn::Conv2d conv1, conv2, proj;
  nn::GroupNorm gn1, gn2, gn_proj;
  SqueezeExcite se;
  bool has_proj = false;

  SEBlock(nn::ParameterStore& s, const std::string& name, int in, int out, int stride,
          const PatchClassifierConfig& c, Rng& rng)
      : conv1(s, name + ".conv1", in, out, 3, stride, 1, rng),
        conv2(s, name + ".conv2", out, out, 3, 1, 1, rng),
        gn1(s, name + ".gn1", out, nn::group_count(out)),
        gn2(s, name + ".gn2", out, nn::group_count(out)),
        se(s, name + ".se", out, c.se_reduction, rng) {
    if (in != out || stride != 1) {
      proj = nn::Conv2d(s, name + ".proj", in, out, 1, stride, 0, rng);
      gn_proj = nn::GroupNorm(s, name + ".gn_proj", out, nn::group_count(out));
      has_proj = true;
    }
  }

  nn::Var operator()(const nn::Var& x) const {
    auto h = nn::relu(gn1(conv1(x)));
    h = se(gn2(conv2(h)));
    return nn::relu(nn::add(has_proj ? gn_proj(proj(x)) : x, h));
  }
};

}  // namespace

struct SEResNet::Impl {
  nn::Conv2d stem;
  nn::GroupNorm stem_gn;
  std::vector<SEBlock> blocks;
  nn::Linear head;
};

SEResNet::SEResNet(const PatchClassifierConfig& config, std::uint64_t seed)
    : config_(config), impl_(std::make_unique<Impl>()) {
  config_.validate();
  Rng rng(seed);
  auto& s = params_;
  int ch = config_.base_channels;
  impl_->stem = nn::Conv2d(s, "stem", 1, ch, 3, 1, 1, rng);
  impl_->stem_gn = nn::GroupNorm(s, "stem_gn", ch, nn::group_count(ch));
  for (int st = 0; st < config_.stages; ++st) {
    const int out = config_.base_channels << st;
    for (int b = 0; b < config_.blocks_per_stage; ++b) {
      const int stride = (st > 0 && b == 0) ? 2 : 1;
      impl_->blocks.emplace_back(s, "stage" + std::to_string(st) + ".block" + std::to_string(b), ch, out, stride,
                                 config_, rng);
      ch = out;
    }
  }
  impl_->head = nn::Linear(s, "head", ch, 2, rng);
}

SEResNet::~SEResNet() = default;

nn::Var SEResNet::forward(const nn::Var& x) const {
  if (x->value.ndim() != 4 || x->value.dim(1) != 1) throw ContractError("SE-ResNet expects [N,1,S,S] input");
  auto h = nn::relu(impl_->stem_gn(impl_->stem(x)));
  for (const auto& b : impl_->blocks) h = b(h);
  return impl_->head(nn::global_avg_pool(h));
}

nn::Tensor patch_batch(std::span<const Patch> patches, std::span<const std::size_t> order) {
  const std::size_t n = order.empty() ? patches.size() : order.size();
  if (n == 0) throw ContractError("patch_batch: no patches");
  const int h = patches[0].pixels.rows(), w = patches[0].pixels.cols();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  nn::Tensor t({static_cast<int>(n), 1, h, w});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = patches[order.empty() ? i : order[i]];
    if (p.pixels.rows() != h || p.pixels.cols() != w) throw ContractError("patch_batch: patch sizes differ");
    for (std::size_t k = 0; k < plane; ++k) t[i * plane + k] = 2.0f * p.pixels[k] - 1.0f;
  }
  return t;
}

std::vector<double> SEResNet::predict_proba(std::span<const Patch> patches) {
  nn::NoGradGuard ng;
  std::vector<double> out;
  const std::size_t bs = static_cast<std::size_t>(config_.batch_size);
  for (std::size_t start = 0; start < patches.size(); start += bs) {
    const auto chunk = patches.subspan(start, std::min(bs, patches.size() - start));
    const auto logits = forward(nn::constant(patch_batch(chunk)))->value;
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const double d = static_cast<double>(logits[2 * i + 1]) - logits[2 * i];
      out.push_back(1.0 / (1.0 + std::exp(-d)));
    }
  }
  return out;
}

namespace {

void flip_in_place(nn::Tensor& t, std::size_t sample, bool horizontal) {
  const int h = t.dim(2), w = t.dim(3);
  float* p = t.data() + sample * static_cast<std::size_t>(h) * w;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int r2 = horizontal ? r : h - 1 - r;
      const int c2 = horizontal ? w - 1 - c : c;
      if (r2 * w + c2 > r * w + c) std::swap(p[r * w + c], p[r2 * w + c2]);
    }
  }
}

}  // namespace

TrainTrace train_patch_classifier(SEResNet& model, std::span<const Patch> train, std::uint64_t seed,
                                  const std::function<void(int, double)>& on_epoch) {
  if (train.empty()) throw ConfigError("patch classifier: the training set is empty");
  const auto& c = model.config();
  nn::AdamW opt(model.parameters(), {c.lr, 0.9, 0.999, 1e-8, c.weight_decay});
  Rng rng(seed);
  TrainTrace trace;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> step_losses;
  for (int epoch = 1; epoch <= c.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(c.batch_size)) {
      const auto idx = std::span(order).subspan(start, std::min<std::size_t>(c.batch_size, order.size() - start));
      auto x = patch_batch(train, idx);
      std::vector<int> labels;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        labels.push_back(static_cast<int>(train[idx[i]].label));
        if (c.augment) {
          if (rng.bernoulli(0.5)) flip_in_place(x, i, true);
          if (rng.bernoulli(0.5)) flip_in_place(x, i, false);
        }
      }
      auto loss = nn::cross_entropy(model.forward(nn::constant(std::move(x))), labels);
      const double v = loss->value[0];
      step_losses.push_back(v);
      if (!std::isfinite(v)) {
        std::ostringstream msg;
        msg << "patch classifier diverged at epoch " << epoch << "; recent losses:";
        for (std::size_t k = step_losses.size() > 10 ? step_losses.size() - 10 : 0; k < step_losses.size(); ++k) {
          msg << ' ' << step_losses[k];
        }
        throw NumericalError(msg.str());
      }
      opt.zero_grad();
      nn::backward(loss);
      opt.step();
      total += v * static_cast<double>(idx.size());
    }
    trace.epoch_losses.push_back(total / static_cast<double>(order.size()));
    if (on_epoch) on_epoch(epoch, trace.epoch_losses.back());
  }
  return trace;
}

ClassifierMetrics evaluate_patch_classifier(PatchClassifier& model, std::span<const Patch> test, double threshold) {
  if (test.empty()) throw ContractError("evaluate_patch_classifier: empty test set");
  const auto p = model.predict_proba(test);
  long tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const bool pred = p[i] >= threshold;
    const bool truth = test[i].label == PatchLabel::kNodule;
    tp += pred && truth;
    fp += pred && !truth;
    fn += !pred && truth;
    tn += !pred && !truth;
  }
  return classifier_metrics(tp, fp, fn, tn);
}

void save_patch_classifier(const std::filesystem::path& path, const SEResNet& model) {
  const auto& c = model.config();
  const nlohmann::json h = {{"base_channels", c.base_channels}, {"stages", c.stages},
                            {"blocks_per_stage", c.blocks_per_stage}, {"se_reduction", c.se_reduction},
                            {"epochs", c.epochs}, {"batch_size", c.batch_size},
                            {"lr", c.lr}, {"weight_decay", c.weight_decay},
                            {"augment", c.augment}, {"threshold", c.threshold}};
  nn::write_checkpoint(path, kMagic, h.dump(), model.parameters());
}

std::unique_ptr<SEResNet> load_patch_classifier(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  PatchClassifierConfig c;
  try {
    const auto h = nlohmann::json::parse(nn::read_checkpoint_header(in, kMagic, path));
    c.base_channels = h.at("base_channels");
    c.stages = h.at("stages");
    c.blocks_per_stage = h.at("blocks_per_stage");
    c.se_reduction = h.at("se_reduction");
    c.epochs = h.at("epochs");
    c.batch_size = h.at("batch_size");
    c.lr = h.at("lr");
    c.weight_decay = h.at("weight_decay");
    c.augment = h.at("augment");
    c.threshold = h.at("threshold");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": corrupt header: " + e.what());
  }
  auto model = std::make_unique<SEResNet>(c, 0);
  model->parameters().load(in);
  return model;
}

}  // namespace lungsynth
