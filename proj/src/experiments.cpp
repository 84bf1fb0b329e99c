#include "lungsynth/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "lungsynth/config.hpp"
#include "lungsynth/diffusion.hpp"
#include "lungsynth/error.hpp"
#include "lungsynth/io.hpp"
#include "lungsynth/stats.hpp"

namespace lungsynth {

std::vector<FoldPartition> kfold_partition(std::span<const SliceKey> slices, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold needs at least 2 folds");
  std::set<std::string> patients;
  for (const auto& s : slices) {
    if (s.origin == OriginTag::kReal) patients.insert(s.patient_id);
  }
  if (patients.size() < static_cast<std::size_t>(k)) {
    throw ConfigError("k-fold with k=" + std::to_string(k) + " needs at least " + std::to_string(k) +
                      " real patients, found " + std::to_string(patients.size()));
  }
  std::vector<std::string> order(patients.begin(), patients.end());
  Rng rng(seed);
  rng.shuffle(order);
  std::map<std::string, int> fold_of;
  for (std::size_t i = 0; i < order.size(); ++i) fold_of[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));

  std::vector<FoldPartition> folds(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) folds[static_cast<std::size_t>(f)].fold = f;
  for (const auto& [p, f] : fold_of) folds[static_cast<std::size_t>(f)].test_patients.insert(p);
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const auto& s = slices[i];
    const auto it = fold_of.find(s.patient_id);
    const int home = it == fold_of.end() ? -1 : it->second;
    for (auto& fp : folds) {
      if (s.origin == OriginTag::kReal) {
        (home == fp.fold ? fp.test : fp.train).push_back(i);
      } else {
        (home == fp.fold ? fp.excluded : fp.train).push_back(i);
      }
    }
  }
  return folds;
}

std::string to_string(Task t) { return t == Task::kDetection ? "detection" : "localization"; }

Task parse_task(const std::string& text) {
  if (text == "detection") return Task::kDetection;
  if (text == "localization") return Task::kLocalization;
  throw ConfigError("unknown task '" + text + "' (expected detection or localization)");
}

std::string task_numeral(Task t) { return t == Task::kDetection ? "I" : "II"; }

void MatrixConfig::validate() const {
  if (folds < 2) throw ConfigError("matrix.folds must be at least 2");
  if (experiments.empty()) throw ConfigError("matrix.experiments must not be empty");
  if (tasks.empty()) throw ConfigError("matrix.tasks must not be empty");
  if (iou_thresholds.empty()) throw ConfigError("matrix.iou_thresholds must not be empty");
  for (double t : iou_thresholds) {
    if (!(t > 0.0 && t <= 1.0)) throw ConfigError("matrix.iou_thresholds must lie in (0, 1]");
  }
  std::vector<std::string> missing;
  if (real_dir.empty() || !std::filesystem::exists(real_dir / kManifestName)) {
    missing.push_back("real corpus (matrix.real = '" + real_dir.string() + "')");
  }
  for (const auto& e : experiments) {
    if (e == "A") continue;
    const auto it = synthetic.find(e);
    std::string key = e;
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
    if (it == synthetic.end() || it->second.empty()) {
      missing.push_back("synthetic set for experiment " + e + " (matrix.synthetic_" + key + " not set)");
    } else if (!std::filesystem::exists(it->second / kManifestName)) {
      missing.push_back("synthetic set for experiment " + e + " (matrix.synthetic_" + key + " = '" +
                        it->second.string() + "' has no " + kManifestName + ")");
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing experiment artifacts:";
    for (const auto& m : missing) msg += "\n  - " + m;
    throw ConfigError(msg);
  }
  classifier.validate();
  localizer.validate();
}

MatrixConfig MatrixConfig::from_config(const Config& cfg, const std::filesystem::path& base_dir, std::uint64_t seed) {
  MatrixConfig m;
  auto resolve = [&](const std::string& p) -> std::filesystem::path {
    const std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  m.real_dir = cfg.has("matrix.real") ? resolve(cfg.get_string("matrix.real")) : std::filesystem::path();
  m.experiments = cfg.get_string_list("matrix.experiments", m.experiments);
  for (const auto& e : m.experiments) {
    std::string key = e;
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
    if (cfg.has("matrix.synthetic_" + key)) m.synthetic[e] = resolve(cfg.get_string("matrix.synthetic_" + key));
  }
  std::vector<std::string> tasks;
  for (const auto& t : cfg.get_string_list("matrix.tasks", {{"detection", "localization"}})) {
    tasks.push_back(t);
  }
  m.tasks.clear();
  for (const auto& t : tasks) m.tasks.push_back(parse_task(t));
  m.folds = static_cast<int>(cfg.get_int("matrix.folds", m.folds));
  m.iou_thresholds = cfg.get_double_list("matrix.iou_thresholds", m.iou_thresholds);
  m.out_dir = resolve(cfg.get_string("matrix.out", "results"));
  m.patches.size = static_cast<int>(cfg.get_int("task_i.patch_size", m.patches.size));
  m.patches.negatives_per_slice =
      static_cast<int>(cfg.get_int("task_i.negatives_per_slice", m.patches.negatives_per_slice));
  m.patches.negative_margin = cfg.get_double("task_i.negative_margin", m.patches.negative_margin);
  m.classifier = PatchClassifierConfig::from_config(cfg, "task_i.model");
  m.localizer = LocalizerConfig::from_config(cfg, "task_ii.model");
  m.seed = seed;
  m.config_hash = cfg.hash();
  return m;
}

std::vector<std::string> metric_names(Task task, std::span<const double> iou_thresholds) {
  if (task == Task::kDetection) return {"accuracy", "precision", "recall", "specificity", "f1"};
  std::vector<std::string> out;
  for (const char* kind : {"ap", "ar"}) {
    for (double t : iou_thresholds) out.push_back(kind + std::to_string(std::lround(t * 100)));
  }
  return out;
}

std::string metric_label(const std::string& metric) {
  static const std::map<std::string, std::string> fixed = {{"accuracy", "Accuracy"},
                                                           {"precision", "Precision"},
                                                           {"recall", "Rec./Sen."},
                                                           {"specificity", "Specificity"},
                                                           {"f1", "F1"}};
  const auto it = fixed.find(metric);
  if (it != fixed.end()) return it->second + " (%)";
  if (metric.size() > 2 && (metric.starts_with("ap") || metric.starts_with("ar"))) {
    return (metric[1] == 'p' ? "AP" : "AR") + metric.substr(2) + " (%)";
  }
  return metric;
}

std::string primary_metric(Task task) { return task == Task::kDetection ? "accuracy" : "ap50"; }

namespace {

std::uint64_t stream(int fold, Task task, int stage) {
  return static_cast<std::uint64_t>(fold) * 100 + (task == Task::kDetection ? 10 : 20) + static_cast<std::uint64_t>(stage);
}

void write_fold_manifest(const std::filesystem::path& path, const std::vector<const SlicePair*>& pairs) {
  io::CsvTable t{{"patient_id", "slice_index", "origin_tag", "has_nodule"}, {}};
  for (const auto* p : pairs) {
    t.rows.push_back({p->patient_id, std::to_string(p->slice_index), to_string(p->origin),
                      p->has_nodule() ? "1" : "0"});
  }
  io::write_csv(path, t);
}

std::vector<Patch> patches_from(const std::vector<const SlicePair*>& pairs, const PatchOptions& opts,
                                std::uint64_t seed, std::vector<std::string>& notes) {
  Rng rng(seed);
  std::vector<Patch> out;
  std::size_t skipped = 0;
  for (const auto* p : pairs) {
    try {
      auto ps = extract_patches(*p, opts, rng);
      out.insert(out.end(), std::make_move_iterator(ps.begin()), std::make_move_iterator(ps.end()));
    } catch (const ContractError&) {
      ++skipped;
    }
  }
  if (skipped > 0) notes.push_back(std::to_string(skipped) + " slices without lung skipped for patches");
  return out;
}

std::string fmt_value(const std::optional<double>& v) { return v ? io::format_double(*v) : "NA"; }

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::vector<FoldResult> run_experiment(const MatrixConfig& config, const std::function<void(const std::string&)>& log) {
  config.validate();
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  const auto real = read_split(config.real_dir);
  require_all_real(real, "real corpus " + config.real_dir.string());
  if (real.empty()) throw ConfigError("real corpus " + config.real_dir.string() + " is empty");
  const int rows = real.front().image.rows(), cols = real.front().image.cols();

  std::map<std::string, std::vector<SlicePair>> synthetic;
  for (const auto& e : config.experiments) {
    if (e == "A") continue;
    auto s = read_split(config.synthetic.at(e));
    for (auto& p : s) {
      if (p.origin == OriginTag::kReal) {
        throw ContractError("synthetic set for experiment " + e + " contains a row tagged real (patient " +
                            p.patient_id + ")");
      }
      if (p.image.rows() != rows || p.image.cols() != cols) {
        if (rows != cols) throw ContractError("cannot resize synthetic slices to a non-square real shape");
        p = resize_pair(p, rows);
      }
    }
    synthetic[e] = std::move(s);
  }

  const auto& out = config.out_dir;
  std::filesystem::create_directories(out / "folds");
  std::filesystem::create_directories(out / "detections");

  std::vector<FoldResult> results;
  nlohmann::json fold_info = nlohmann::json::array();
  const auto real_folds = kfold_partition(real, config.folds, config.seed);
  {
    io::CsvTable t{{"patient_id", "fold"}, {}};
    for (const auto& f : real_folds) {
      for (const auto& p : f.test_patients) t.rows.push_back({p, std::to_string(f.fold)});
    }
    std::sort(t.rows.begin(), t.rows.end());
    io::write_csv(out / "fold_assignment.csv", t);
  }

  for (const auto& rf : real_folds) {
    const int k = rf.fold;
    std::vector<const SlicePair*> test;
    for (auto i : rf.test) test.push_back(&real[i]);
    write_fold_manifest(out / "folds" / ("fold_" + std::to_string(k) + "_test.csv"), test);
    std::vector<SlicePair> test_pairs;
    for (const auto* p : test) test_pairs.push_back(*p);
    require_all_real(test_pairs, "fold " + std::to_string(k));

    for (const auto& e : config.experiments) {
      std::vector<const SlicePair*> train_real, train_synth;
      for (auto i : rf.train) train_real.push_back(&real[i]);
      std::size_t excluded = 0;
      if (e != "A") {
        for (const auto& s : synthetic[e]) {
          if (rf.test_patients.count(s.patient_id)) {
            ++excluded;
          } else {
            train_synth.push_back(&s);
          }
        }
      }
      auto train_all = train_real;
      train_all.insert(train_all.end(), train_synth.begin(), train_synth.end());
      write_fold_manifest(out / "folds" / ("fold_" + std::to_string(k) + "_" + e + "_train.csv"), train_all);
      fold_info.push_back({{"fold", k},
                           {"experiment", e},
                           {"train_real", train_real.size()},
                           {"train_synthetic", train_synth.size()},
                           {"synthetic_excluded", excluded},
                           {"test", test.size()}});

      for (Task task : config.tasks) {
        FoldResult r{k, e, task, {}, {}};
        say("fold " + std::to_string(k) + " experiment " + e + " task " + to_string(task));
        if (excluded > 0) {
          r.notes.push_back(std::to_string(excluded) + " synthetic slices of test patients dropped from train");
        }
        if (task == Task::kDetection) {
          const auto test_patches = patches_from(test, config.patches, derive_seed(config.seed, stream(k, task, 0)),
                                                 r.notes);
          auto train_patches =
              patches_from(train_real, config.patches, derive_seed(config.seed, stream(k, task, 1)), r.notes);
          auto synth_patches =
              patches_from(train_synth, config.patches, derive_seed(config.seed, stream(k, task, 2)), r.notes);
          train_patches.insert(train_patches.end(), std::make_move_iterator(synth_patches.begin()),
                               std::make_move_iterator(synth_patches.end()));
          SEResNet model(config.classifier, derive_seed(config.seed, stream(k, task, 3)));
          train_patch_classifier(model, train_patches, derive_seed(config.seed, stream(k, task, 4)));
          const auto m = evaluate_patch_classifier(model, test_patches, config.classifier.threshold);
          r.metrics = {{"accuracy", m.accuracy},
                       {"precision", m.precision},
                       {"recall", m.recall},
                       {"specificity", m.specificity},
                       {"f1", m.f1}};
          r.notes.insert(r.notes.end(), m.undefined.begin(), m.undefined.end());
        } else {
          std::vector<SlicePair> train_pairs;
          for (const auto* p : train_all) train_pairs.push_back(*p);
          TwoStageLocalizer model(config.localizer, derive_seed(config.seed, stream(k, task, 3)));
          train_localizer(model, train_pairs, derive_seed(config.seed, stream(k, task, 4)));
          std::size_t n_gt = 0;
          for (const auto& p : test_pairs) n_gt += gt_boxes_from_mask(p.mask).size();
          const auto names = metric_names(task, config.iou_thresholds);
          if (n_gt == 0) {
            for (const auto& n : names) r.metrics.emplace_back(n, std::nullopt);
            r.notes.push_back("ap/ar: no ground-truth nodules in the test fold");
          } else {
            const auto sc = evaluate_localizer(model, test_pairs, config.iou_thresholds);
            for (const auto& v : sc.values) r.metrics.emplace_back("", v.ap);
            for (const auto& v : sc.values) r.metrics.emplace_back("", v.ar);
            for (std::size_t i = 0; i < names.size(); ++i) r.metrics[i].first = names[i];
            write_detections(out / "detections" / ("fold_" + std::to_string(k) + "_" + e + ".csv"), sc.detections);
          }
        }
        results.push_back(std::move(r));
      }
    }
  }

  write_fold_results(out / "fold_results.csv", results);
  write_report(out);

  nlohmann::json manifest;
  manifest["version"] = kVersion;
  manifest["seed"] = config.seed;
  manifest["config_hash"] = hex64(config.config_hash);
  manifest["folds"] = config.folds;
  manifest["experiments"] = config.experiments;
  std::vector<std::string> tasks;
  for (Task t : config.tasks) tasks.push_back(to_string(t));
  manifest["tasks"] = tasks;
  manifest["iou_thresholds"] = config.iou_thresholds;
  manifest["real"] = {{"path", config.real_dir.string()},
                      {"manifest_hash", hex64(fnv1a64(io::read_text(config.real_dir / kManifestName)))}};
  for (const auto& [e, dir] : config.synthetic) {
    if (!synthetic.count(e)) continue;
    manifest["synthetic"][e] = {{"path", dir.string()},
                                {"manifest_hash", hex64(fnv1a64(io::read_text(dir / kManifestName)))}};
  }
  manifest["seed_streams"] = "derive_seed(seed, fold*100 + task*10 + stage); task detection=1, localization=2; "
                             "stage 0 test patches, 1 real train patches, 2 synthetic train patches, 3 init, 4 training";
  manifest["patch_policy"] = {{"size", config.patches.size},
                              {"negatives_per_slice", config.patches.negatives_per_slice},
                              {"negative_margin_px", config.patches.negative_margin}};
  manifest["conventions"] = {{"boxes", "half-open pixel boxes, x is the column axis"},
                             {"ap", "101-point interpolated precision, greedy confidence-ordered matching"},
                             {"ar", "recall over all detections, no top-k cap"},
                             {"p_value", "two-sided Wilcoxon rank-sum vs experiment A"},
                             {"folds", "patient-level over the full real corpus; synthetic slices of test "
                                       "patients are dropped from that fold's train side"}};
  manifest["partitions"] = fold_info;
  io::write_text(out / "run_manifest.json", manifest.dump(2) + "\n");
  return results;
}

void write_fold_results(const std::filesystem::path& path, std::span<const FoldResult> results) {
  io::CsvTable t{{"fold", "experiment", "task", "metric", "value", "note"}, {}};
  for (const auto& r : results) {
    std::string note;
    for (const auto& n : r.notes) note += (note.empty() ? "" : "; ") + n;
    std::replace(note.begin(), note.end(), ',', ' ');
    for (const auto& [name, v] : r.metrics) {
      t.rows.push_back({std::to_string(r.fold), r.experiment, to_string(r.task), name, fmt_value(v), note});
    }
  }
  io::write_csv(path, t);
}

std::vector<FoldResult> read_fold_results(const std::filesystem::path& path) {
  const auto t = io::read_csv(path);
  const auto cf = t.column("fold"), ce = t.column("experiment"), ct = t.column("task"), cm = t.column("metric"),
             cv = t.column("value"), cn = t.column("note");
  std::vector<FoldResult> out;
  for (const auto& row : t.rows) {
    int fold = 0;
    const auto& fs = row[cf];
    if (std::from_chars(fs.data(), fs.data() + fs.size(), fold).ec != std::errc()) {
      throw FormatError(path.string() + ": bad fold '" + fs + "'");
    }
    const Task task = parse_task(row[ct]);
    if (out.empty() || out.back().fold != fold || out.back().experiment != row[ce] || out.back().task != task) {
      out.push_back({fold, row[ce], task, {}, {}});
      if (!row[cn].empty()) out.back().notes.push_back(row[cn]);
    }
    std::optional<double> v;
    if (row[cv] != "NA") {
      double d = 0.0;
      const auto& s = row[cv];
      const auto res = std::from_chars(s.data(), s.data() + s.size(), d);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw FormatError(path.string() + ": bad metric value '" + s + "'");
      }
      v = d;
    }
    out.back().metrics.emplace_back(row[cm], v);
  }
  return out;
}

std::vector<SummaryRow> summarize(std::span<const FoldResult> results) {
  std::vector<Task> tasks;
  std::vector<std::string> exps;
  std::map<Task, std::vector<std::string>> metrics;
  std::map<std::tuple<Task, std::string, std::string>, std::vector<double>> values;
  for (const auto& r : results) {
    if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) tasks.push_back(r.task);
    if (std::find(exps.begin(), exps.end(), r.experiment) == exps.end()) exps.push_back(r.experiment);
    auto& ms = metrics[r.task];
    for (const auto& [name, v] : r.metrics) {
      if (std::find(ms.begin(), ms.end(), name) == ms.end()) ms.push_back(name);
      auto& vec = values[{r.task, r.experiment, name}];
      if (v) vec.push_back(*v);
    }
  }
  std::sort(tasks.begin(), tasks.end());
  std::sort(exps.begin(), exps.end());
  std::vector<SummaryRow> out;
  for (Task t : tasks) {
    for (const auto& e : exps) {
      for (const auto& m : metrics[t]) {
        const auto it = values.find({t, e, m});
        if (it == values.end()) continue;
        SummaryRow row{t, e, m, mean_of(it->second), stddev_of(it->second), it->second.size(), std::nullopt, false};
        const auto ctrl = values.find({t, "A", m});
        if (e != "A" && ctrl != values.end() && !ctrl->second.empty() && !it->second.empty()) {
          const auto rs = rank_sum_test(ctrl->second, it->second);
          row.p_value = rs.p;
          row.p_degenerate = rs.degenerate;
        }
        out.push_back(std::move(row));
      }
    }
  }
  return out;
}

namespace {

std::string pct(double mean, double sd) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f±%.2f", 100.0 * mean, 100.0 * sd);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  // Display width: count UTF-8 lead bytes only.
  std::size_t w = 0;
  for (unsigned char c : s) w += (c & 0xC0) != 0x80;
  return s + std::string(width > w ? width - w : 1, ' ');
}

}  // namespace

std::string render_table(std::span<const SummaryRow> summary) {
  std::ostringstream out;
  std::vector<Task> tasks;
  for (const auto& r : summary) {
    if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) tasks.push_back(r.task);
  }
  for (Task t : tasks) {
    std::vector<std::string> exps, metrics;
    for (const auto& r : summary) {
      if (r.task != t) continue;
      if (std::find(exps.begin(), exps.end(), r.experiment) == exps.end()) exps.push_back(r.experiment);
      if (std::find(metrics.begin(), metrics.end(), r.metric) == metrics.end()) metrics.push_back(r.metric);
    }
    const std::size_t w = 17;
    out << pad("Task", 6) << pad("Exp", 5);
    for (const auto& m : metrics) out << pad(metric_label(m), w);
    out << "p-value (" << primary_metric(t) << ")\n";
    for (const auto& e : exps) {
      out << pad(task_numeral(t), 6) << pad(e, 5);
      std::string p = "-";
      for (const auto& m : metrics) {
        const auto it = std::find_if(summary.begin(), summary.end(), [&](const SummaryRow& r) {
          return r.task == t && r.experiment == e && r.metric == m;
        });
        if (it == summary.end() || it->n == 0) {
          out << pad("NA", w);
          continue;
        }
        out << pad(pct(it->mean, it->std), w);
        if (m == primary_metric(t) && it->p_value) {
          char buf[48];
          std::snprintf(buf, sizeof(buf), "%.3g%s", *it->p_value, it->p_degenerate ? " (degenerate)" : "");
          p = buf;
        }
      }
      out << p << '\n';
    }
    out << '\n';
  }
  for (Task t : tasks) {
    const auto pm = primary_metric(t);
    const auto a = std::find_if(summary.begin(), summary.end(),
                                [&](const SummaryRow& r) { return r.task == t && r.experiment == "A" && r.metric == pm; });
    const auto c = std::find_if(summary.begin(), summary.end(),
                                [&](const SummaryRow& r) { return r.task == t && r.experiment == "C" && r.metric == pm; });
    if (a != summary.end() && c != summary.end() && a->n > 0 && c->n > 0) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "C - A (%s, task %s): %+.2f percentage points\n", pm.c_str(),
                    task_numeral(t).c_str(), 100.0 * (c->mean - a->mean));
      out << buf;
    }
  }
  out << "Values are mean±std (n-1) over folds in percent. p-values: two-sided Wilcoxon rank-sum test against "
         "experiment A; exact null distribution when the two samples total at most 20 values.\n";
  return out.str();
}

void write_report(const std::filesystem::path& dir) {
  const auto results = read_fold_results(dir / "fold_results.csv");
  const auto summary = summarize(results);
  io::CsvTable t{{"task", "experiment", "metric", "mean", "std", "n", "p_value", "p_degenerate"}, {}};
  for (const auto& r : summary) {
    t.rows.push_back({to_string(r.task), r.experiment, r.metric, io::format_double(r.mean), io::format_double(r.std),
                      std::to_string(r.n), r.p_value ? io::format_double(*r.p_value) : "-",
                      r.p_degenerate ? "1" : "0"});
  }
  io::write_csv(dir / "summary.csv", t);
  io::write_text(dir / "report.txt", render_table(summary));
}

AuditResult audit_leakage(const std::filesystem::path& dir) {
  AuditResult a;
  const auto folds = dir / "folds";
  if (!std::filesystem::is_directory(folds)) {
    a.problems.push_back("no folds/ directory under " + dir.string());
    ++a.patient_overlaps;
    return a;
  }
  std::map<std::string, std::set<std::string>> test_patients;  // fold -> patients
  std::vector<std::pair<std::string, std::filesystem::path>> trains;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(folds)) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    const auto name = p.filename().string();
    if (!name.starts_with("fold_") || !name.ends_with(".csv")) continue;
    const auto rest = name.substr(5, name.size() - 9);
    const auto us = rest.find('_');
    if (us == std::string::npos) continue;
    const auto fold = rest.substr(0, us);
    if (rest.ends_with("_test")) {
      const auto t = io::read_csv(p);
      const auto cp = t.column("patient_id"), co = t.column("origin_tag");
      ++a.manifests_checked;
      for (const auto& row : t.rows) {
        if (parse_origin_tag(row[co]) != OriginTag::kReal) {
          ++a.synthetic_in_test;
          a.problems.push_back(name + ": synthetic row for patient " + row[cp]);
        }
        test_patients[fold].insert(row[cp]);
      }
    } else if (rest.ends_with("_train")) {
      trains.emplace_back(fold, p);
    }
  }
  for (const auto& [fold, p] : trains) {
    const auto t = io::read_csv(p);
    const auto cp = t.column("patient_id");
    ++a.manifests_checked;
    const auto it = test_patients.find(fold);
    if (it == test_patients.end()) {
      a.problems.push_back(p.filename().string() + ": no matching test manifest");
      continue;
    }
    for (const auto& row : t.rows) {
      if (it->second.count(row[cp])) {
        ++a.patient_overlaps;
        a.problems.push_back(p.filename().string() + ": patient " + row[cp] + " also in the test fold");
      }
    }
  }
  return a;
}

}  // namespace lungsynth
