#include "lungsynth/cli.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lungsynth/config.hpp"
#include "lungsynth/corpus.hpp"
#include "lungsynth/diffusion.hpp"
#include "lungsynth/error.hpp"
#include "lungsynth/experiments.hpp"
#include "lungsynth/fid.hpp"
#include "lungsynth/io.hpp"

namespace lungsynth {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

struct Context {
  Config cfg;
  fs::path base_dir;  // directory of the config file
  std::optional<std::uint64_t> seed;
  std::ostream& out;
  std::ostream& err;

  std::uint64_t require_seed(const std::string& command) const {
    if (!seed) throw ConfigError(command + " is stochastic: pass --seed or set `seed` in the config");
    return *seed;
  }
};

Context make_context(const Common& c, std::ostream& out, std::ostream& err) {
  Context ctx{c.config_path.empty() ? Config() : Config::load(c.config_path), fs::path(), c.seed, out, err};
  if (!c.config_path.empty()) ctx.base_dir = fs::absolute(c.config_path).parent_path();
  for (const auto& o : c.overrides) ctx.cfg.apply_override(o);
  if (!ctx.seed && ctx.cfg.has("seed")) ctx.seed = static_cast<std::uint64_t>(ctx.cfg.get_int("seed"));
  return ctx;
}

SliceMaskOptions mask_options(const Config& cfg) {
  SliceMaskOptions o;
  o.window.lo = cfg.get_double("masks.window_lo", o.window.lo);
  o.window.hi = cfg.get_double("masks.window_hi", o.window.hi);
  o.window.validate();
  o.region_labels.left_lung = static_cast<int>(cfg.get_int("masks.left_lung_label", o.region_labels.left_lung));
  o.region_labels.right_lung = static_cast<int>(cfg.get_int("masks.right_lung_label", o.region_labels.right_lung));
  o.region_labels.trachea = static_cast<int>(cfg.get_int("masks.trachea_label", o.region_labels.trachea));
  o.body_threshold = static_cast<int>(cfg.get_int("masks.body_threshold", o.body_threshold));
  return o;
}

// ---- ingest ----

struct IngestArgs {
  std::string volume, annotations, out;
};

void cmd_ingest(const Context& ctx, const IngestArgs& a) {
  const auto vol = load_volume(a.volume);
  HuWindow w;
  w.lo = ctx.cfg.get_double("masks.window_lo", w.lo);
  w.hi = ctx.cfg.get_double("masks.window_hi", w.hi);
  w.validate();
  const auto [mn, mx] = std::minmax_element(vol.voxels().begin(), vol.voxels().end());
  nlohmann::json j;
  j["series_id"] = vol.series_id();
  j["dims"] = vol.dims();
  j["spacing"] = {vol.spacing().x, vol.spacing().y, vol.spacing().z};
  j["origin"] = {vol.origin().x, vol.origin().y, vol.origin().z};
  j["hu_min"] = *mn;
  j["hu_max"] = *mx;
  j["window"] = {w.lo, w.hi};
  j["annotations"] = nlohmann::json::array();
  if (!a.annotations.empty()) {
    for (const auto& ann : read_annotations(a.annotations)) {
      if (ann.series_id != vol.series_id()) continue;
      const auto pl = place_annotation(ann, vol);
      j["annotations"].push_back({{"center_world", {ann.center_world.x, ann.center_world.y, ann.center_world.z}},
                                  {"voxel", {pl.voxel.x, pl.voxel.y, pl.voxel.z}},
                                  {"diameter_mm", ann.diameter_mm},
                                  {"inside", pl.inside}});
    }
  }
  const auto text = j.dump(2) + "\n";
  if (!a.out.empty()) io::write_text(a.out, text);
  ctx.out << text;
}

// ---- build-masks ----

struct BuildMasksArgs {
  std::string raw, seg, annotations, out;
};

void cmd_build_masks(const Context& ctx, const BuildMasksArgs& a) {
  const auto opts = mask_options(ctx.cfg);
  const auto anns = read_annotations(a.annotations);
  std::vector<fs::path> headers;
  for (const auto& e : fs::directory_iterator(a.raw)) {
    if (e.path().extension() == ".mhd") headers.push_back(e.path());
  }
  std::sort(headers.begin(), headers.end());
  if (headers.empty()) throw ConfigError("no .mhd volumes under " + a.raw);
  SplitWriter writer(a.out);
  std::vector<std::string> warnings;
  std::size_t nodule = 0, negative = 0;
  for (const auto& h : headers) {
    const auto vol = load_volume(h);
    const auto seg_path = fs::path(a.seg) / h.filename();
    if (!fs::exists(seg_path)) throw IntegrityError("missing segmentation " + seg_path.string());
    const auto seg = load_volume(seg_path);
    std::vector<NoduleAnnotation> mine;
    for (const auto& ann : anns) {
      if (ann.series_id == vol.series_id()) mine.push_back(ann);
    }
    const auto pairs = enumerate_volume(vol, seg, mine, opts, warnings);
    for (const auto& p : pairs) {
      writer.add(p);
      (p.has_nodule() ? nodule : negative) += 1;
    }
    ctx.out << vol.series_id() << ": " << pairs.size() << " lung slices\n";
  }
  writer.finish();
  std::string wtext;
  for (const auto& w : warnings) wtext += w + "\n";
  io::write_text(fs::path(a.out) / "warnings.txt", wtext);
  ctx.out << "nodule slices: " << nodule << ", slices without nodules: " << negative << ", warnings: "
          << warnings.size() << "\n";
}

// ---- build-corpus ----

struct BuildCorpusArgs {
  std::string masks, out;
};

void cmd_build_corpus(const Context& ctx, const BuildCorpusArgs& a) {
  const auto seed = ctx.require_seed("build-corpus");
  CorpusOptions o;
  o.keep_ratio = ctx.cfg.get_double("corpus.keep_ratio", o.keep_ratio);
  o.strategy = parse_subsample_strategy(ctx.cfg.get_string("corpus.subsample", "random"));
  o.n_train = static_cast<std::size_t>(ctx.cfg.get_int("corpus.n_train", static_cast<std::int64_t>(o.n_train)));
  o.n_test = static_cast<std::size_t>(ctx.cfg.get_int("corpus.n_test", static_cast<std::int64_t>(o.n_test)));
  o.split_seed = derive_seed(seed, 1);
  o.subsample_seed = derive_seed(seed, 2);
  const fs::path src(a.masks), dst(a.out);
  const auto rows = read_manifest(src / kManifestName);
  const auto assembled = assemble_corpus(rows, o);
  std::vector<ManifestRow> all;
  for (const auto& [name, part] : {std::pair{"train", &assembled.train}, std::pair{"test", &assembled.test}}) {
    SplitWriter w(dst / name);
    for (const auto& r : *part) {
      auto row = w.add(load_pair(src, r));
      row.image_path = std::string(name) + "/" + row.image_path;
      row.mask_path = std::string(name) + "/" + row.mask_path;
      all.push_back(row);
    }
    w.finish();
  }
  write_manifest(dst / kManifestName, all);
  nlohmann::json j = {{"seed", seed},
                      {"keep_ratio", o.keep_ratio},
                      {"subsample", ctx.cfg.get_string("corpus.subsample", "random")},
                      {"negatives_before", assembled.negatives_before},
                      {"negatives_kept", assembled.negatives_kept},
                      {"train_patients", assembled.split.train_patients},
                      {"test_patients", assembled.split.test_patients},
                      {"train_slices", assembled.train.size()},
                      {"test_slices", assembled.test.size()}};
  io::write_text(dst / "corpus_summary.json", j.dump(2) + "\n");
  ctx.out << "train: " << assembled.train.size() << " slices (" << assembled.split.train_patients.size()
          << " patients), test: " << assembled.test.size() << " slices (" << assembled.split.test_patients.size()
          << " patients); negatives kept " << assembled.negatives_kept << " of " << assembled.negatives_before << "\n";
}

// ---- train-diffusion ----

struct TrainDiffusionArgs {
  std::string train, out, samples;
};

void cmd_train_diffusion(const Context& ctx, const TrainDiffusionArgs& a) {
  const auto seed = ctx.require_seed("train-diffusion");
  const auto config = DiffusionTrainConfig::from_config(ctx.cfg);
  const auto corpus = read_split(a.train);
  const long log_every = ctx.cfg.get_int("diffusion.log_every", 100);
  SemanticUNet model(config.model, derive_seed(seed, 1));
  ctx.out << "denoiser parameters: " << model.parameters().scalar_count() << ", training pairs: " << corpus.size()
          << "\n";
  double window = 0.0;
  long in_window = 0;
  auto on_step = [&](const TrainProgress& p) {
    window += p.loss;
    ++in_window;
    if (log_every > 0 && p.step % log_every == 0) {
      ctx.out << "step " << p.step << " loss " << window / static_cast<double>(in_window) << "\n";
      ctx.out.flush();
      window = 0.0;
      in_window = 0;
    }
  };
  auto on_grid = [&](long step, const Grid2D<float>& grid) {
    if (a.samples.empty()) return;
    char name[64];
    std::snprintf(name, sizeof(name), "step_%07ld.pgm", step);
    io::write_pgm(fs::path(a.samples) / name, to_u8(grid));
  };
  const auto result = train_diffusion(model, config, corpus, derive_seed(seed, 2), on_step, on_grid);
  save_checkpoint(a.out, model, config);
  io::CsvTable t{{"step", "loss"}, {}};
  for (std::size_t i = 0; i < result.losses.size(); ++i) {
    t.rows.push_back({std::to_string(i + 1), io::format_double(result.losses[i])});
  }
  io::write_csv(a.out + ".losses.csv", t);
  ctx.out << "checkpoint written to " << a.out << "\n";
}

// ---- sample ----

struct SampleArgs {
  std::string checkpoint, masks, out;
  int count = 0;
  std::optional<double> guidance;
};

void cmd_sample(const Context& ctx, const SampleArgs& a) {
  const auto seed = ctx.require_seed("sample");
  auto ck = load_checkpoint(a.checkpoint);
  const double s = a.guidance ? *a.guidance : ctx.cfg.get_double("sample.guidance_scale", ck.config.guidance_scale);
  const auto rows = read_manifest(fs::path(a.masks) / kManifestName);
  const std::size_t n = a.count > 0 ? std::min<std::size_t>(static_cast<std::size_t>(a.count), rows.size()) : rows.size();
  SplitWriter w(a.out);
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = resize_pair(load_pair(a.masks, rows[i]), ck.config.image_size);
    Rng rng(derive_seed(seed, i));
    SlicePair p{sample(*ck.model, src.mask, ck.schedule, s, rng), src.mask, src.patient_id, src.slice_index,
                OriginTag::kSyntheticSdm};
    w.add(p);
    ctx.out << "sampled " << (i + 1) << "/" << n << "\n";
  }
  w.finish();
}

// ---- fid ----

struct FidArgs {
  std::string real, synth, out;
};

void cmd_fid(const Context& ctx, const FidArgs& a) {
  const auto real = read_split(a.real);
  const auto synth = read_split(a.synth);
  if (real.empty() || synth.empty()) throw ContractError("fid: empty image set");
  const auto kind = ctx.cfg.get_string("fid.embedder", "random_conv");
  std::unique_ptr<Embedder> emb;
  if (kind == "identity") {
    emb = std::make_unique<IdentityEmbedder>(real.front().image.rows(), real.front().image.cols());
  } else if (kind == "random_conv") {
    emb = std::make_unique<RandomConvEmbedder>(static_cast<int>(ctx.cfg.get_int("fid.dim", 64)),
                                               static_cast<int>(ctx.cfg.get_int("fid.input_size", 64)),
                                               static_cast<std::uint64_t>(ctx.cfg.get_int("fid.embed_seed", 0x5eedf1d)));
  } else {
    throw ConfigError("fid.embedder must be identity or random_conv");
  }
  std::vector<FidReportRow> rows;
  for (const char* subset : {"nodule", "non_nodule", "all"}) {
    auto pick = [&](const std::vector<SlicePair>& v) {
      std::vector<Grid2D<float>> out;
      for (const auto& p : v) {
        const bool keep = std::string(subset) == "all" || (std::string(subset) == "nodule") == p.has_nodule();
        if (keep) out.push_back(p.image);
      }
      return out;
    };
    const auto ri = pick(real), si = pick(synth);
    FidReportRow r{subset, ri.size(), si.size(), std::numeric_limits<double>::quiet_NaN()};
    if (ri.size() >= 2 && si.size() >= 2) {
      r.fid = fid(gaussian_stats(extract_features(ri, *emb)), gaussian_stats(extract_features(si, *emb)));
    }
    ctx.out << subset << ": n_real=" << r.n_real << " n_synth=" << r.n_synth << " fid="
            << (std::isnan(r.fid) ? std::string("NA (fewer than 2 images)") : io::format_double(r.fid)) << "\n";
    rows.push_back(r);
  }
  if (!a.out.empty()) {
    write_fid_report(a.out, rows,
                     {{"embedder", emb->name()}, {"real", a.real}, {"synthetic", a.synth},
                      {"image_size", std::to_string(real.front().image.rows()) + "x" +
                                         std::to_string(real.front().image.cols())},
                      {"intensity", "windowed [0,1] from 8-bit PGM"}});
  }
}

// ---- train-task / evaluate ----

struct TaskArgs {
  std::string task, train, out, model, test;
  std::vector<std::string> synthetic;
};

PatchOptions patch_options(const Config& cfg) {
  PatchOptions p;
  p.size = static_cast<int>(cfg.get_int("task_i.patch_size", p.size));
  p.negatives_per_slice = static_cast<int>(cfg.get_int("task_i.negatives_per_slice", p.negatives_per_slice));
  p.negative_margin = cfg.get_double("task_i.negative_margin", p.negative_margin);
  return p;
}

std::vector<Patch> all_patches(std::span<const SlicePair> pairs, const PatchOptions& o, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Patch> out;
  for (const auto& p : pairs) {
    auto ps = extract_patches(p, o, rng);
    out.insert(out.end(), ps.begin(), ps.end());
  }
  return out;
}

void cmd_train_task(const Context& ctx, const TaskArgs& a) {
  const auto seed = ctx.require_seed("train-task");
  const Task task = parse_task(a.task);
  auto train = read_split(a.train);
  require_all_real(train, a.train);
  for (const auto& s : a.synthetic) train = mix_synthetic(std::move(train), read_split(s));
  if (task == Task::kDetection) {
    const auto patches = all_patches(train, patch_options(ctx.cfg), derive_seed(seed, 1));
    SEResNet model(PatchClassifierConfig::from_config(ctx.cfg, "task_i.model"), derive_seed(seed, 2));
    train_patch_classifier(model, patches, derive_seed(seed, 3),
                           [&](int e, double l) { ctx.out << "epoch " << e << " loss " << l << "\n"; });
    save_patch_classifier(a.out, model);
  } else {
    TwoStageLocalizer model(LocalizerConfig::from_config(ctx.cfg, "task_ii.model"), derive_seed(seed, 2));
    train_localizer(model, train, derive_seed(seed, 3),
                    [&](int e, double l) { ctx.out << "epoch " << e << " loss " << l << "\n"; });
    save_localizer(a.out, model);
  }
  ctx.out << "model written to " << a.out << "\n";
}

void cmd_evaluate(const Context& ctx, const TaskArgs& a) {
  const Task task = parse_task(a.task);
  const auto test = read_split(a.test);
  require_all_real(test, a.test);
  io::CsvTable t{{"metric", "value", "note"}, {}};
  if (task == Task::kDetection) {
    const auto seed = ctx.require_seed("evaluate --task detection");
    auto model = load_patch_classifier(a.model);
    const auto patches = all_patches(test, patch_options(ctx.cfg), derive_seed(seed, 1));
    const auto m = evaluate_patch_classifier(*model, patches, model->config().threshold);
    auto row = [&](const std::string& name, const std::optional<double>& v) {
      std::string note;
      for (const auto& u : m.undefined) {
        if (u.starts_with(name + ":")) note = u;
      }
      std::replace(note.begin(), note.end(), ',', ' ');
      t.rows.push_back({name, v ? io::format_double(*v) : "NA", note});
    };
    row("accuracy", m.accuracy);
    row("precision", m.precision);
    row("recall", m.recall);
    row("specificity", m.specificity);
    row("f1", m.f1);
  } else {
    auto model = load_localizer(a.model);
    const auto thresholds = ctx.cfg.get_double_list("matrix.iou_thresholds", {{0.5, 0.6, 0.7}});
    const auto sc = evaluate_localizer(*model, test, thresholds);
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      const auto tag = std::to_string(std::lround(thresholds[i] * 100));
      t.rows.push_back({"ap" + tag, io::format_double(sc.values[i].ap), ""});
      t.rows.push_back({"ar" + tag, io::format_double(sc.values[i].ar), ""});
    }
    write_detections(fs::path(a.out) / "detections.csv", sc.detections);
  }
  io::write_csv(fs::path(a.out) / "metrics.csv", t);
  for (const auto& r : t.rows) ctx.out << r[0] << " = " << r[1] << (r[2].empty() ? "" : "  (" + r[2] + ")") << "\n";
}

// ---- run-matrix / report ----

struct MatrixArgs {
  std::string out;
};

void print_audit(const Context& ctx, const AuditResult& a) {
  ctx.out << "leakage audit: " << a.manifests_checked << " fold manifests, " << a.synthetic_in_test
          << " synthetic rows in test partitions, " << a.patient_overlaps << " patient overlaps\n";
  for (const auto& p : a.problems) ctx.out << "  " << p << "\n";
}

void cmd_run_matrix(const Context& ctx, const MatrixArgs& a) {
  const auto seed = ctx.require_seed("run-matrix");
  auto m = MatrixConfig::from_config(ctx.cfg, ctx.base_dir, seed);
  if (!a.out.empty()) m.out_dir = a.out;
  run_experiment(m, [&](const std::string& s) {
    ctx.out << s << "\n";
    ctx.out.flush();
  });
  ctx.out << "\n" << io::read_text(m.out_dir / "report.txt");
  const auto audit = audit_leakage(m.out_dir);
  print_audit(ctx, audit);
  if (!audit.ok()) throw IntegrityError("leakage audit failed");
}

void cmd_report(const Context& ctx, const std::string& dir) {
  write_report(dir);
  ctx.out << io::read_text(fs::path(dir) / "report.txt");
  const auto audit = audit_leakage(dir);
  print_audit(ctx, audit);
  if (!audit.ok()) throw IntegrityError("leakage audit failed");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semantic-mask CT slice synthesis and evaluation pipeline", "lungsynth"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config_path, "Configuration file (TOML subset)");
  app.add_option("--set", common.overrides, "Override a config key, section.key=value");
  app.add_option("--seed", common.seed, "Root seed (required by stochastic commands)");

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Inspect a MetaImage volume and place its annotations");
  c_ingest->add_option("--volume", ingest.volume, "Volume header (.mhd)")->required();
  c_ingest->add_option("--annotations", ingest.annotations, "Annotation CSV");
  c_ingest->add_option("--out", ingest.out, "Write the summary JSON here");

  BuildMasksArgs bm;
  auto* c_bm = app.add_subcommand("build-masks", "Build slice/label-map pairs for every lung slice");
  c_bm->add_option("--raw", bm.raw, "Directory of CT volumes (.mhd)")->required();
  c_bm->add_option("--seg", bm.seg, "Directory of lung segmentations with matching names")->required();
  c_bm->add_option("--annotations", bm.annotations, "Annotation CSV")->required();
  c_bm->add_option("--out", bm.out, "Output split directory")->required();

  BuildCorpusArgs bc;
  auto* c_bc = app.add_subcommand("build-corpus", "Subsample negatives and split by patient");
  c_bc->add_option("--masks", bc.masks, "Output of build-masks")->required();
  c_bc->add_option("--out", bc.out, "Corpus directory (train/, test/, manifest.csv)")->required();

  TrainDiffusionArgs td;
  auto* c_td = app.add_subcommand("train-diffusion", "Train the mask-conditioned diffusion model");
  c_td->add_option("--train", td.train, "Training split directory")->required();
  c_td->add_option("--out", td.out, "Checkpoint path")->required();
  c_td->add_option("--samples", td.samples, "Directory for periodic sample grids");

  SampleArgs sa;
  auto* c_sa = app.add_subcommand("sample", "Generate one image per label map");
  c_sa->add_option("--checkpoint", sa.checkpoint, "Diffusion checkpoint")->required();
  c_sa->add_option("--masks", sa.masks, "Split directory whose label maps condition sampling")->required();
  c_sa->add_option("--out", sa.out, "Output split directory")->required();
  c_sa->add_option("--count", sa.count, "Number of masks to use (0 = all)");
  c_sa->add_option("--guidance", sa.guidance, "Guidance scale (default from checkpoint)");

  FidArgs fa;
  auto* c_fid = app.add_subcommand("fid", "Frechet distance between real and synthetic sets");
  c_fid->add_option("--real", fa.real, "Real split directory")->required();
  c_fid->add_option("--synth", fa.synth, "Synthetic split directory")->required();
  c_fid->add_option("--out", fa.out, "Report file");

  TaskArgs tt;
  auto* c_tt = app.add_subcommand("train-task", "Train a downstream model");
  c_tt->add_option("--task", tt.task, "detection or localization")->required();
  c_tt->add_option("--train", tt.train, "Real training split")->required();
  c_tt->add_option("--synthetic", tt.synthetic, "Synthetic split(s) to add");
  c_tt->add_option("--out", tt.out, "Model path")->required();

  TaskArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Evaluate a downstream model on a test split");
  c_ev->add_option("--task", ev.task, "detection or localization")->required();
  c_ev->add_option("--model", ev.model, "Model path")->required();
  c_ev->add_option("--test", ev.test, "Test split")->required();
  c_ev->add_option("--out", ev.out, "Output directory")->required();

  MatrixArgs ma;
  auto* c_rm = app.add_subcommand("run-matrix", "Run the A/B/C x task x fold experiment matrix");
  c_rm->add_option("--out", ma.out, "Output directory (overrides matrix.out)");

  std::string report_dir;
  auto* c_rep = app.add_subcommand("report", "Rebuild summary and table from fold results");
  c_rep->add_option("--dir", report_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    const auto ctx = make_context(common, out, err);
    if (c_ingest->parsed()) cmd_ingest(ctx, ingest);
    else if (c_bm->parsed()) cmd_build_masks(ctx, bm);
    else if (c_bc->parsed()) cmd_build_corpus(ctx, bc);
    else if (c_td->parsed()) cmd_train_diffusion(ctx, td);
    else if (c_sa->parsed()) cmd_sample(ctx, sa);
    else if (c_fid->parsed()) cmd_fid(ctx, fa);
    else if (c_tt->parsed()) cmd_train_task(ctx, tt);
    else if (c_ev->parsed()) cmd_evaluate(ctx, ev);
    else if (c_rm->parsed()) cmd_run_matrix(ctx, ma);
    else if (c_rep->parsed()) cmd_report(ctx, report_dir);
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace lungsynth
