#include "lungsynth/localizer.hpp"

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
constexpr const char* kMagic = "LUNGSYNTH-LOCALIZER-1";
constexpr int kStride = 4;
constexpr int kHidden = 64;
constexpr std::size_t kPreNms = 256;
const double kMaxLogScale = std::log(1000.0 / 16.0);
}  // namespace

void LocalizerConfig::validate() const {
  if (channels < 1 || roi_size < 4 || roi_size % 4 != 0) {
    throw ConfigError("localizer: channels must be positive and roi_size a multiple of 4");
  }
  if (anchor_sizes.empty()) throw ConfigError("localizer: anchor_sizes must not be empty");
  for (double a : anchor_sizes) {
    if (!(a > 0.0)) throw ConfigError("localizer: anchor sizes must be positive");
  }
  if (rpn_batch < 1 || proposals < 1 || roi_batch < 1 || max_detections < 1 || epochs < 1) {
    throw ConfigError("localizer: batch sizes, proposal counts and epochs must be positive");
  }
  if (!(lr > 0.0)) throw ConfigError("localizer: lr must be positive");
  if (!(rpn_neg_iou <= rpn_pos_iou)) throw ConfigError("localizer: rpn_neg_iou must not exceed rpn_pos_iou");
}

LocalizerConfig LocalizerConfig::from_config(const Config& cfg, const std::string& section) {
  LocalizerConfig c;
  auto i = [&](const char* k, int& v) { v = static_cast<int>(cfg.get_int(section + "." + k, v)); };
  auto d = [&](const char* k, double& v) { v = cfg.get_double(section + "." + k, v); };
  i("channels", c.channels);
  c.anchor_sizes = cfg.get_double_list(section + ".anchor_sizes", c.anchor_sizes);
  i("rpn_batch", c.rpn_batch);
  d("rpn_pos_iou", c.rpn_pos_iou);
  d("rpn_neg_iou", c.rpn_neg_iou);
  d("rpn_nms_iou", c.rpn_nms_iou);
  i("proposals", c.proposals);
  i("roi_size", c.roi_size);
  i("roi_batch", c.roi_batch);
  d("roi_pos_fraction", c.roi_pos_fraction);
  d("roi_pos_iou", c.roi_pos_iou);
  d("det_nms_iou", c.det_nms_iou);
  d("score_threshold", c.score_threshold);
  i("max_detections", c.max_detections);
  i("epochs", c.epochs);
  d("lr", c.lr);
  d("weight_decay", c.weight_decay);
  c.include_negative_slices = cfg.get_bool(section + ".include_negative_slices", c.include_negative_slices);
  c.validate();
  return c;
}

std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores, double iou_threshold,
                             std::size_t max_keep) {
  if (boxes.size() != scores.size()) throw ContractError("nms: boxes and scores differ in length");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> keep;
  for (auto i : order) {
    if (keep.size() >= max_keep) break;
    const bool suppressed =
        std::any_of(keep.begin(), keep.end(), [&](std::size_t k) { return iou(boxes[i], boxes[k]) > iou_threshold; });
    if (!suppressed) keep.push_back(i);
  }
  return keep;
}

std::array<double, 4> encode_box(const Box& reference, const Box& target) {
  const double rw = reference.width(), rh = reference.height();
  const double rx = reference.x_min + 0.5 * rw, ry = reference.y_min + 0.5 * rh;
  const double tx = target.x_min + 0.5 * target.width(), ty = target.y_min + 0.5 * target.height();
  return {(tx - rx) / rw, (ty - ry) / rh, std::log(target.width() / rw), std::log(target.height() / rh)};
}

Box decode_box(const Box& reference, std::span<const float> deltas) {
  const double rw = reference.width(), rh = reference.height();
  const double cx = reference.x_min + 0.5 * rw + deltas[0] * rw;
  const double cy = reference.y_min + 0.5 * rh + deltas[1] * rh;
  const double w = rw * std::exp(std::min<double>(deltas[2], kMaxLogScale));
  const double h = rh * std::exp(std::min<double>(deltas[3], kMaxLogScale));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

namespace {

Box clip(const Box& b, int rows, int cols) {
  return {std::clamp(b.x_min, 0.0, static_cast<double>(cols)), std::clamp(b.y_min, 0.0, static_cast<double>(rows)),
          std::clamp(b.x_max, 0.0, static_cast<double>(cols)), std::clamp(b.y_max, 0.0, static_cast<double>(rows))};
}

nn::Tensor image_tensor(const Grid2D<float>& img) {
  nn::Tensor t({1, 1, img.rows(), img.cols()});
  for (std::size_t i = 0; i < img.size(); ++i) t[i] = 2.0f * img[i] - 1.0f;
  return t;
}

// Bilinear resampling of `box` to size x size; pixels outside are air.
void crop_box(const Grid2D<float>& img, const Box& box, int size, float* out) {
  auto at = [&](int r, int c) { return img.in_bounds(r, c) ? img(r, c) : 0.0f; };
  const double sx = box.width() / size, sy = box.height() / size;
  for (int v = 0; v < size; ++v) {
    const double py = box.y_min + (v + 0.5) * sy - 0.5;
    const int y0 = static_cast<int>(std::floor(py));
    const double fy = py - y0;
    for (int u = 0; u < size; ++u) {
      const double px = box.x_min + (u + 0.5) * sx - 0.5;
      const int x0 = static_cast<int>(std::floor(px));
      const double fx = px - x0;
      const double val = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                         fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
      out[v * size + u] = static_cast<float>(2.0 * val - 1.0);
    }
  }
}

double best_iou(const Box& b, const std::vector<Box>& gts, int& which) {
  double best = 0.0;
  which = -1;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const double v = iou(b, gts[g]);
    if (v > best) {
      best = v;
      which = static_cast<int>(g);
    }
  }
  return best;
}

}  // namespace

struct TwoStageLocalizer::Impl {
  nn::Conv2d c1, c2, c3, rpn_conv, rpn_obj, rpn_reg;
  nn::GroupNorm g1, g2, g3;
  nn::Conv2d h1, h2, h3;
  nn::GroupNorm hg1, hg2, hg3;
  nn::Linear fc, cls, reg;

  struct RpnOut {
    nn::Var obj, reg;
    int fh = 0, fw = 0;
  };

  RpnOut rpn(const nn::Var& x) const {
    auto f = nn::relu(g1(c1(x)));
    f = nn::relu(g2(c2(f)));
    f = nn::relu(g3(c3(f)));
    auto r = nn::relu(rpn_conv(f));
    return {rpn_obj(r), rpn_reg(r), f->value.dim(2), f->value.dim(3)};
  }

  std::pair<nn::Var, nn::Var> head(const nn::Tensor& crops, int roi) const {
    auto h = nn::relu(hg1(h1(nn::constant(crops))));
    h = nn::relu(hg2(h2(h)));
    h = nn::relu(hg3(h3(h)));
    const int n = crops.dim(0);
    h = nn::reshape(h, {n, h->value.dim(1) * (roi / 4) * (roi / 4)});
    h = nn::relu(fc(h));
    return {cls(h), reg(h)};
  }
};

TwoStageLocalizer::TwoStageLocalizer(const LocalizerConfig& config, std::uint64_t seed)
    : config_(config), impl_(std::make_unique<Impl>()) {
  config_.validate();
  Rng rng(seed);
  auto& s = params_;
  auto& m = *impl_;
  const int c = config_.channels, c2 = 2 * c;
  const int a = static_cast<int>(config_.anchor_sizes.size());
  m.c1 = nn::Conv2d(s, "backbone.conv1", 1, c, 3, 1, 1, rng);
  m.g1 = nn::GroupNorm(s, "backbone.gn1", c, nn::group_count(c));
  m.c2 = nn::Conv2d(s, "backbone.conv2", c, c2, 3, 2, 1, rng);
  m.g2 = nn::GroupNorm(s, "backbone.gn2", c2, nn::group_count(c2));
  m.c3 = nn::Conv2d(s, "backbone.conv3", c2, c2, 3, 2, 1, rng);
  m.g3 = nn::GroupNorm(s, "backbone.gn3", c2, nn::group_count(c2));
  m.rpn_conv = nn::Conv2d(s, "rpn.conv", c2, c2, 3, 1, 1, rng);
  m.rpn_obj = nn::Conv2d(s, "rpn.objectness", c2, a, 1, 1, 0, rng);
  m.rpn_reg = nn::Conv2d(s, "rpn.deltas", c2, 4 * a, 1, 1, 0, rng, /*zero_init=*/true);
  m.h1 = nn::Conv2d(s, "roi.conv1", 1, c, 3, 1, 1, rng);
  m.hg1 = nn::GroupNorm(s, "roi.gn1", c, nn::group_count(c));
  m.h2 = nn::Conv2d(s, "roi.conv2", c, c2, 3, 2, 1, rng);
  m.hg2 = nn::GroupNorm(s, "roi.gn2", c2, nn::group_count(c2));
  m.h3 = nn::Conv2d(s, "roi.conv3", c2, c2, 3, 2, 1, rng);
  m.hg3 = nn::GroupNorm(s, "roi.gn3", c2, nn::group_count(c2));
  const int q = config_.roi_size / 4;
  m.fc = nn::Linear(s, "roi.fc", c2 * q * q, kHidden, rng);
  m.cls = nn::Linear(s, "roi.cls", kHidden, 1, rng);
  m.reg = nn::Linear(s, "roi.deltas", kHidden, 4, rng, /*zero_init=*/true);
}

TwoStageLocalizer::~TwoStageLocalizer() = default;

namespace {

// Anchor index = a * fh * fw + i * fw + j, matching the [1, A, fh, fw] layout.
std::vector<Box> make_anchors(const std::vector<double>& sizes, int fh, int fw) {
  std::vector<Box> out;
  for (double s : sizes) {
    for (int i = 0; i < fh; ++i) {
      for (int j = 0; j < fw; ++j) {
        const double cx = (j + 0.5) * kStride, cy = (i + 0.5) * kStride;
        out.push_back({cx - s / 2, cy - s / 2, cx + s / 2, cy + s / 2});
      }
    }
  }
  return out;
}

struct Proposals {
  std::vector<Box> boxes;
  std::vector<double> scores;
};

Proposals propose(const nn::Tensor& obj, const nn::Tensor& reg, const std::vector<Box>& anchors, int rows, int cols,
                  const LocalizerConfig& c) {
  const std::size_t hw = anchors.size() / c.anchor_sizes.size();
  std::vector<std::size_t> order(anchors.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t pre = std::min(kPreNms, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(pre), order.end(),
                    [&](std::size_t a, std::size_t b) { return obj[a] > obj[b]; });
  Proposals cand;
  for (std::size_t k = 0; k < pre; ++k) {
    const std::size_t idx = order[k];
    const std::size_t a = idx / hw, cell = idx % hw;
    std::array<float, 4> d{};
    for (std::size_t q = 0; q < 4; ++q) d[q] = reg[(a * 4 + q) * hw + cell];
    const Box b = clip(decode_box(anchors[idx], d), rows, cols);
    if (b.width() < 1.0 || b.height() < 1.0) continue;
    cand.boxes.push_back(b);
    cand.scores.push_back(1.0 / (1.0 + std::exp(-static_cast<double>(obj[idx]))));
  }
  Proposals out;
  for (auto i : nms(cand.boxes, cand.scores, c.rpn_nms_iou, static_cast<std::size_t>(c.proposals))) {
    out.boxes.push_back(cand.boxes[i]);
    out.scores.push_back(cand.scores[i]);
  }
  return out;
}

void require_shape(const SlicePair& pair) {
  if (pair.image.rows() % kStride != 0 || pair.image.cols() % kStride != 0 || pair.image.size() == 0) {
    throw ContractError("localizer: image sides must be positive multiples of 4");
  }
}

}  // namespace

nn::Var TwoStageLocalizer::loss(const SlicePair& pair, Rng& rng) {
  require_shape(pair);
  const auto& c = config_;
  const int rows = pair.image.rows(), cols = pair.image.cols();
  auto out = impl_->rpn(nn::constant(image_tensor(pair.image)));
  const auto anchors = make_anchors(c.anchor_sizes, out.fh, out.fw);
  const std::size_t hw = static_cast<std::size_t>(out.fh) * out.fw;
  const auto gts = gt_boxes_from_mask(pair.mask);

  // Proposal-stage targets.
  std::vector<int> label(anchors.size(), 0);  // 1 pos, 0 neg, -1 ignore
  std::vector<int> match(anchors.size(), -1);
  std::vector<double> gt_best(gts.size(), 0.0);
  std::vector<double> anchor_best(anchors.size(), 0.0);
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    anchor_best[k] = best_iou(anchors[k], gts, match[k]);
    for (std::size_t g = 0; g < gts.size(); ++g) gt_best[g] = std::max(gt_best[g], iou(anchors[k], gts[g]));
  }
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    if (anchor_best[k] >= c.rpn_pos_iou) {
      label[k] = 1;
    } else if (anchor_best[k] >= c.rpn_neg_iou) {
      label[k] = -1;
    }
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[k], gts[g]);
      if (v > 0.0 && v == gt_best[g]) {
        label[k] = 1;
        match[k] = static_cast<int>(g);
      }
    }
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    if (label[k] == 1) pos.push_back(k);
    if (label[k] == 0) neg.push_back(k);
  }
  rng.shuffle(pos);
  rng.shuffle(neg);
  pos.resize(std::min<std::size_t>(pos.size(), static_cast<std::size_t>(c.rpn_batch / 2)));
  neg.resize(std::min<std::size_t>(neg.size(), static_cast<std::size_t>(c.rpn_batch) - pos.size()));
  nn::Tensor obj_t(out.obj->value.shape()), obj_w(out.obj->value.shape());
  nn::Tensor reg_t(out.reg->value.shape()), reg_w(out.reg->value.shape());
  for (auto k : neg) obj_w[k] = 1.0f;
  for (auto k : pos) {
    obj_t[k] = 1.0f;
    obj_w[k] = 1.0f;
    const auto d = encode_box(anchors[k], gts[static_cast<std::size_t>(match[k])]);
    const std::size_t a = k / hw, cell = k % hw;
    for (std::size_t q = 0; q < 4; ++q) {
      reg_t[(a * 4 + q) * hw + cell] = static_cast<float>(d[q]);
      reg_w[(a * 4 + q) * hw + cell] = 1.0f;
    }
  }
  const auto sampled = static_cast<float>(std::max<std::size_t>(1, pos.size() + neg.size()));
  auto total = nn::add(nn::bce_with_logits(out.obj, obj_t, obj_w, sampled),
                       nn::smooth_l1(out.reg, reg_t, reg_w, sampled));

  // Second stage on current proposals plus jittered ground truth.
  auto props = propose(out.obj->value, out.reg->value, anchors, rows, cols, c);
  for (const auto& g : gts) {
    props.boxes.push_back(g);
    for (int j = 0; j < 3; ++j) {
      const double w = g.width(), h = g.height();
      const Box b{g.x_min + rng.uniform(-0.25, 0.25) * w, g.y_min + rng.uniform(-0.25, 0.25) * h,
                  g.x_max + rng.uniform(-0.25, 0.25) * w, g.y_max + rng.uniform(-0.25, 0.25) * h};
      const Box cb = clip(b, rows, cols);
      if (cb.width() >= 1.0 && cb.height() >= 1.0) props.boxes.push_back(cb);
    }
  }
  std::vector<std::size_t> rpos, rneg;
  std::vector<int> rmatch(props.boxes.size(), -1);
  for (std::size_t k = 0; k < props.boxes.size(); ++k) {
    (best_iou(props.boxes[k], gts, rmatch[k]) >= c.roi_pos_iou ? rpos : rneg).push_back(k);
  }
  rng.shuffle(rpos);
  rng.shuffle(rneg);
  const auto max_pos = static_cast<std::size_t>(std::lround(c.roi_batch * c.roi_pos_fraction));
  rpos.resize(std::min(rpos.size(), std::max<std::size_t>(1, max_pos)));
  rneg.resize(std::min(rneg.size(), static_cast<std::size_t>(c.roi_batch) - std::min<std::size_t>(rpos.size(), c.roi_batch)));
  std::vector<std::size_t> chosen(rpos);
  chosen.insert(chosen.end(), rneg.begin(), rneg.end());
  if (chosen.empty()) return total;

  const int n = static_cast<int>(chosen.size()), s = c.roi_size;
  nn::Tensor crops({n, 1, s, s});
  nn::Tensor cls_t({n, 1}), cls_w({n, 1}, 1.0f), reg2_t({n, 4}), reg2_w({n, 4});
  for (int i = 0; i < n; ++i) {
    const auto k = chosen[static_cast<std::size_t>(i)];
    crop_box(pair.image, props.boxes[k], s, crops.data() + static_cast<std::size_t>(i) * s * s);
    if (i < static_cast<int>(rpos.size())) {
      cls_t[static_cast<std::size_t>(i)] = 1.0f;
      const auto d = encode_box(props.boxes[k], gts[static_cast<std::size_t>(rmatch[k])]);
      for (int q = 0; q < 4; ++q) {
        reg2_t[static_cast<std::size_t>(i * 4 + q)] = static_cast<float>(d[static_cast<std::size_t>(q)]);
        reg2_w[static_cast<std::size_t>(i * 4 + q)] = 1.0f;
      }
    }
  }
  auto [cls, reg] = impl_->head(crops, s);
  total = nn::add(total, nn::bce_with_logits(cls, cls_t, cls_w, static_cast<float>(n)));
  total = nn::add(total, nn::smooth_l1(reg, reg2_t, reg2_w, static_cast<float>(n)));
  return total;
}

std::vector<BoxDetection> TwoStageLocalizer::detect(const SlicePair& pair) {
  require_shape(pair);
  nn::NoGradGuard ng;
  const auto& c = config_;
  const int rows = pair.image.rows(), cols = pair.image.cols();
  auto out = impl_->rpn(nn::constant(image_tensor(pair.image)));
  const auto anchors = make_anchors(c.anchor_sizes, out.fh, out.fw);
  const auto props = propose(out.obj->value, out.reg->value, anchors, rows, cols, c);
  if (props.boxes.empty()) return {};
  const int n = static_cast<int>(props.boxes.size()), s = c.roi_size;
  nn::Tensor crops({n, 1, s, s});
  for (int i = 0; i < n; ++i) {
    crop_box(pair.image, props.boxes[static_cast<std::size_t>(i)], s,
             crops.data() + static_cast<std::size_t>(i) * s * s);
  }
  auto [cls, reg] = impl_->head(crops, s);
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (int i = 0; i < n; ++i) {
    const double score = 1.0 / (1.0 + std::exp(-static_cast<double>(cls->value[static_cast<std::size_t>(i)])));
    const Box b = clip(decode_box(props.boxes[static_cast<std::size_t>(i)],
                                  std::span<const float>(reg->value.data() + 4 * i, 4)),
                       rows, cols);
    if (score < c.score_threshold || b.width() < 1.0 || b.height() < 1.0) continue;
    boxes.push_back(b);
    scores.push_back(score);
  }
  std::vector<BoxDetection> dets;
  const auto id = slice_id(pair.patient_id, pair.slice_index);
  for (auto i : nms(boxes, scores, c.det_nms_iou, static_cast<std::size_t>(c.max_detections))) {
    dets.push_back({boxes[i], scores[i], id});
  }
  return dets;
}

std::vector<double> train_localizer(TwoStageLocalizer& model, std::span<const SlicePair> train, std::uint64_t seed,
                                    const std::function<void(int, double)>& on_epoch) {
  const auto& c = model.config();
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (c.include_negative_slices || train[i].has_nodule()) order.push_back(i);
  }
  if (order.empty()) throw ConfigError("localizer: the training set is empty");
  nn::AdamW opt(model.parameters(), {c.lr, 0.9, 0.999, 1e-8, c.weight_decay});
  Rng rng(seed);
  std::vector<double> epoch_losses, recent;
  for (int epoch = 1; epoch <= c.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (auto i : order) {
      auto l = model.loss(train[i], rng);
      const double v = l->value[0];
      recent.push_back(v);
      if (recent.size() > 10) recent.erase(recent.begin());
      if (!std::isfinite(v)) {
        std::ostringstream msg;
        msg << "localizer diverged at epoch " << epoch << "; recent losses:";
        for (double r : recent) msg << ' ' << r;
        throw NumericalError(msg.str());
      }
      opt.zero_grad();
      nn::backward(l);
      opt.step();
      total += v;
    }
    epoch_losses.push_back(total / static_cast<double>(order.size()));
    if (on_epoch) on_epoch(epoch, epoch_losses.back());
  }
  return epoch_losses;
}

LocalizationScores evaluate_localizer(Localizer& model, std::span<const SlicePair> test,
                                      std::span<const double> iou_thresholds) {
  LocalizationScores out;
  std::vector<SliceEval> slices;
  for (const auto& p : test) {
    SliceEval e{slice_id(p.patient_id, p.slice_index), gt_boxes_from_mask(p.mask), model.detect(p)};
    out.detections.insert(out.detections.end(), e.detections.begin(), e.detections.end());
    slices.push_back(std::move(e));
  }
  for (double t : iou_thresholds) {
    out.thresholds.push_back(t);
    out.values.push_back(ap_ar_at_iou(slices, t));
  }
  return out;
}

void save_localizer(const std::filesystem::path& path, const TwoStageLocalizer& model) {
  const auto& c = model.config();
  const nlohmann::json h = {{"channels", c.channels},
                            {"anchor_sizes", c.anchor_sizes},
                            {"rpn_batch", c.rpn_batch},
                            {"rpn_pos_iou", c.rpn_pos_iou},
                            {"rpn_neg_iou", c.rpn_neg_iou},
                            {"rpn_nms_iou", c.rpn_nms_iou},
                            {"proposals", c.proposals},
                            {"roi_size", c.roi_size},
                            {"roi_batch", c.roi_batch},
                            {"roi_pos_fraction", c.roi_pos_fraction},
                            {"roi_pos_iou", c.roi_pos_iou},
                            {"det_nms_iou", c.det_nms_iou},
                            {"score_threshold", c.score_threshold},
                            {"max_detections", c.max_detections},
                            {"epochs", c.epochs},
                            {"lr", c.lr},
                            {"weight_decay", c.weight_decay},
                            {"include_negative_slices", c.include_negative_slices}};
  nn::write_checkpoint(path, kMagic, h.dump(), model.parameters());
}

std::unique_ptr<TwoStageLocalizer> load_localizer(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  LocalizerConfig c;
  try {
    const auto h = nlohmann::json::parse(nn::read_checkpoint_header(in, kMagic, path));
    c.channels = h.at("channels");
    c.anchor_sizes = h.at("anchor_sizes").get<std::vector<double>>();
    c.rpn_batch = h.at("rpn_batch");
    c.rpn_pos_iou = h.at("rpn_pos_iou");
    c.rpn_neg_iou = h.at("rpn_neg_iou");
    c.rpn_nms_iou = h.at("rpn_nms_iou");
    c.proposals = h.at("proposals");
    c.roi_size = h.at("roi_size");
    c.roi_batch = h.at("roi_batch");
    c.roi_pos_fraction = h.at("roi_pos_fraction");
    c.roi_pos_iou = h.at("roi_pos_iou");
    c.det_nms_iou = h.at("det_nms_iou");
    c.score_threshold = h.at("score_threshold");
    c.max_detections = h.at("max_detections");
    c.epochs = h.at("epochs");
    c.lr = h.at("lr");
    c.weight_decay = h.at("weight_decay");
    c.include_negative_slices = h.at("include_negative_slices");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": corrupt header: " + e.what());
  }
  auto model = std::make_unique<TwoStageLocalizer>(c, 0);
  model->parameters().load(in);
  return model;
}

}  // namespace lungsynth
