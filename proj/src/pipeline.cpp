#include "cloudseg/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <future>
#include <numeric>

#include "cloudseg/checkpoint.hpp"
#include "cloudseg/infer.hpp"
#include "cloudseg/train.hpp"

namespace fs = std::filesystem;

namespace cloudseg {

namespace {

void say(const LogFn& log, const std::string& msg) {
  if (log) log(msg);
}

DatasetFingerprint load_fingerprint(const fs::path& run_dir) {
  return fingerprint_from_json(read_json(run_dir / "fingerprint.json"));
}

PipelineConfig load_config(const fs::path& run_dir) { return config_from_json(read_json(run_dir / "pipeline.json")); }

std::vector<LabeledPatch> load_normalized(const Manifest& m, const DatasetFingerprint& f) {
  auto patches = load_all(m);
  for (auto& p : patches) p.image = normalize_patch(p.image, f);
  return patches;
}

fs::path fold_dir(const fs::path& run_dir, int fold) { return run_dir / "models" / ("fold" + std::to_string(fold)); }

std::optional<double> mean_ji(const std::vector<SegmentationMetrics>& ms) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& m : ms)
    if (m.ji) {
      sum += *m.ji;
      ++n;
    }
  if (!n) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace

namespace stages {

DatasetFingerprint fingerprint(const fs::path& train_manifest, const fs::path& run_dir) {
  fs::create_directories(run_dir);
  auto f = compute_fingerprint(read_manifest(train_manifest));
  write_canonical_json(run_dir / "fingerprint.json", to_json(f));
  return f;
}

ConfiguredPipeline configure(const fs::path& run_dir, const MemoryBudget& budget, int folds,
                             const ConfigOverrides& overrides) {
  auto result = configure_pipeline(load_fingerprint(run_dir), budget, folds, overrides);
  write_canonical_json(run_dir / "pipeline.json", to_json(result.config));
  std::string trace;
  for (const auto& line : result.trace) trace += line + "\n";
  write_text_atomic(run_dir / "pipeline.trace.txt", trace);
  return result;
}

void train(const fs::path& train_manifest, const fs::path& run_dir, const TrainOptions& options, const LogFn& log) {
  const auto config = load_config(run_dir);
  const auto fp = load_fingerprint(run_dir);
  const auto manifest = read_manifest(train_manifest);
  const auto patches = load_normalized(manifest, fp);
  const auto split = make_folds(manifest.records, config.n_folds, derive_seed(options.seed, 1000));

  json folds = json::array();
  for (const auto& f : split.folds) {
    json val = json::array();
    for (auto i : f.validation) val.push_back(manifest.records[i].patch_id);
    folds.push_back({{"validation", val}});
  }
  write_canonical_json(run_dir / "folds.json", {{"k", split.k}, {"folds", folds}});

  auto run_fold = [&](int k) {
    TrainHyper hyper;
    hyper.epochs = config.epochs;
    hyper.batches_per_epoch = config.batches_per_epoch;
    hyper.lr0 = config.lr0;
    hyper.momentum = config.momentum;
    hyper.seed = derive_seed(options.seed, static_cast<std::uint64_t>(k));
    const auto t0 = std::chrono::steady_clock::now();
    auto result = train_fold(config, patches, split.folds[k], hyper);
    save_checkpoint(result.model, fold_dir(run_dir, k));
    write_text_atomic(run_dir / ("fold" + std::to_string(k) + "_curve.csv"), curve_csv(result.curve));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[160];
    std::snprintf(buf, sizeof buf, "fold %d trained in %.1f s, final val JI %.4f", k, secs,
                  result.curve.empty() ? std::nan("") : result.curve.back().val_ji);
    return std::string(buf);
  };

  const int threads = std::max(1, options.threads);
  for (int start = 0; start < split.k; start += threads) {
    std::vector<std::future<std::string>> jobs;
    for (int k = start; k < std::min(split.k, start + threads); ++k)
      jobs.push_back(std::async(threads > 1 ? std::launch::async : std::launch::deferred, run_fold, k));
    for (auto& j : jobs) say(log, j.get());
  }
}

void predict(const fs::path& manifest_path, const fs::path& run_dir, const fs::path& out_dir,
             const PredictOptions& options, const LogFn& log) {
  const auto config = load_config(run_dir);
  const auto fp = load_fingerprint(run_dir);
  const auto manifest = read_manifest(manifest_path);
  std::vector<UNetModel> members;
  for (int k = 0; k < config.n_folds; ++k) members.push_back(load_checkpoint(fold_dir(run_dir, k)));
  const EnsembleModel ensemble(std::move(members));
  require(config_hash(ensemble.config()) == config_hash(config), ErrorKind::Consistency,
          "checkpoints were trained with a different pipeline.json");
  const double overlap = options.overlap.value_or(config.overlap);
  const Blend blend = options.blend.value_or(config.blend);
  fs::create_directories(out_dir);

  std::vector<std::vector<SegmentationMetrics>> per_member(ensemble.size());
  std::vector<SegmentationMetrics> fused;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& r : manifest.records) {
    auto image = normalize_patch(load_patch(manifest, r), fp);
    auto prob = sliding_window_predict(ensemble, image, overlap, blend);
    auto mask = binarize(prob, config.threshold);
    save_tensor(to_tensor(prob), out_dir / (r.patch_id + ".prob.cseg"));
    save_tensor(to_tensor(mask), out_dir / (r.patch_id + ".mask.cseg"));
    if (auto gt = load_mask(manifest, r)) {
      fused.push_back(metrics_from_confusion(confusion(mask, *gt)));
      for (std::size_t k = 0; k < ensemble.size(); ++k) {
        EnsembleModel single({ensemble.members()[k]});
        auto pk = binarize(sliding_window_predict(single, image, overlap, blend), config.threshold);
        per_member[k].push_back(metrics_from_confusion(confusion(pk, *gt)));
      }
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double rate = secs > 0 ? static_cast<double>(manifest.records.size()) / secs : 0.0;
  write_canonical_json(out_dir / "predict_stats.json",
                       {{"patches", manifest.records.size()}, {"seconds", secs}, {"patches_per_second", rate}});
  char buf[128];
  std::snprintf(buf, sizeof buf, "predicted %zu patches at %.2f patches/s", manifest.records.size(), rate);
  say(log, buf);

  if (!fused.empty()) {
    json members_json = json::array();
    for (const auto& m : per_member) {
      auto ji = mean_ji(m);
      members_json.push_back(ji ? json(*ji) : json(nullptr));
    }
    auto ens = mean_ji(fused);
    write_canonical_json(out_dir / "members.json",
                         {{"member_mean_ji", members_json}, {"ensemble_mean_ji", ens ? json(*ens) : json(nullptr)}});
  }
}

std::size_t postprocess(const fs::path& in_dir, const fs::path& out_dir, PostRule rule) {
  fs::create_directories(out_dir);
  std::vector<fs::path> inputs;
  for (const auto& e : fs::directory_iterator(in_dir)) {
    const auto name = e.path().filename().string();
    if (name.size() > 10 && name.ends_with(".mask.cseg")) inputs.push_back(e.path());
  }
  std::sort(inputs.begin(), inputs.end());
  for (const auto& p : inputs)
    save_tensor(to_tensor(apply_post_rule(mask_from_tensor(load_tensor(p)), rule)), out_dir / p.filename());
  return inputs.size();
}

namespace {

std::vector<SegmentationMetrics> score_set(const Manifest& m, const fs::path& dir, std::vector<std::string>& ids,
                                           ConfusionCounts& pooled, const fs::path& jsonl) {
  std::vector<SegmentationMetrics> out;
  std::string lines;
  ids.clear();
  for (const auto& r : m.records) {
    auto gt = load_mask(m, r);
    if (!gt) continue;
    auto pred = mask_from_tensor(load_tensor(dir / (r.patch_id + ".mask.cseg")));
    auto c = confusion(pred, *gt);
    pooled += c;
    auto metrics = metrics_from_confusion(c);
    json j = to_json(metrics);
    j["id"] = r.patch_id;
    lines += canonical_json_line(j) + "\n";
    out.push_back(metrics);
    ids.push_back(r.patch_id);
  }
  require(!out.empty(), ErrorKind::Consistency, "evaluation manifest has no ground-truth masks");
  write_text_atomic(jsonl, lines);
  return out;
}

json summarize(const std::vector<SegmentationMetrics>& ms, const ConfusionCounts& pooled) {
  json per_metric;
  for (const auto& [name, d] : summarize_metrics(ms)) per_metric[name] = to_json(d);
  json j = {{"patches", ms.size()}, {"per_patch", per_metric}, {"pooled", to_json(metrics_from_confusion(pooled))}};
  return j;
}

}  // namespace

EvaluationReport evaluate(const fs::path& manifest_path, const fs::path& pred_dir, const std::optional<fs::path>& pp_dir,
                          const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const auto manifest = read_manifest(manifest_path);
  EvaluationReport rep;
  std::vector<std::string> ids;
  ConfusionCounts pooled_raw, pooled_pp;
  rep.raw = score_set(manifest, pred_dir, ids, pooled_raw, out_dir / "metrics.jsonl");
  rep.mean_ji_raw = mean_ji(rep.raw);
  json summary = {{"raw", summarize(rep.raw, pooled_raw)}};
  std::string report;
  char buf[160];
  auto fmt4 = [&](const char* label, std::optional<double> v) {
    if (v)
      std::snprintf(buf, sizeof buf, "%s: %.4f\n", label, *v);
    else
      std::snprintf(buf, sizeof buf, "%s: undefined\n", label);
    report += buf;
  };
  fmt4("patch-mean JI (raw)", rep.mean_ji_raw);

  json significance = json::object();
  if (pp_dir) {
    rep.post = score_set(manifest, *pp_dir, ids, pooled_pp, out_dir / "metrics.pp.jsonl");
    rep.mean_ji_post = mean_ji(rep.post);
    summary["post"] = summarize(rep.post, pooled_pp);
    fmt4("patch-mean JI (post-processed)", rep.mean_ji_post);
    if (rep.mean_ji_raw && rep.mean_ji_post) {
      const double delta = *rep.mean_ji_post - *rep.mean_ji_raw;
      summary["delta_ji"] = delta;
      std::snprintf(buf, sizeof buf, "delta JI (post - raw): %+.4f\n", delta);
      report += buf;
    }
    for (std::size_t k = 0; k < SegmentationMetrics::kNames.size(); ++k) {
      std::vector<double> a, b;
      for (std::size_t i = 0; i < rep.raw.size(); ++i) {
        auto x = rep.raw[i].get(k), y = rep.post[i].get(k);
        if (x && y) {
          a.push_back(*x);
          b.push_back(*y);
        }
      }
      const char* name = SegmentationMetrics::kNames[k];
      try {
        significance[name] = to_json(wilcoxon_two_tailed(a, b));
        significance[name]["pairs"] = a.size();
      } catch (const Error& e) {
        significance[name] = {{"status", "insufficient"}, {"pairs", a.size()}, {"reason", e.what()}};
      }
    }
  }
  write_canonical_json(out_dir / "summary.json", summary);
  write_canonical_json(out_dir / "significance.json", significance);
  write_text_atomic(out_dir / "report.txt", report);
  return rep;
}

}  // namespace stages

RunConfig read_run_config(const fs::path& path) {
  const json j = read_json(path);
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path q(p);
    return q.is_absolute() ? q : base / q;
  };
  try {
    RunConfig c;
    c.train_manifest = resolve(j.at("train_manifest").get<std::string>());
    c.test_manifest = resolve(j.at("test_manifest").get<std::string>());
    c.folds = j.value("folds", 5);
    c.seed = j.value("seed", std::uint64_t{0});
    c.budget_gb = j.value("budget_gb", 24.0);
    c.safety_factor = j.value("safety_factor", 0.85);
    if (j.contains("overrides")) {
      const auto& o = j["overrides"];
      if (o.contains("base_channels")) c.overrides.base_channels = o["base_channels"].get<int>();
      if (o.contains("epochs")) c.overrides.epochs = o["epochs"].get<int>();
      if (o.contains("batches_per_epoch")) c.overrides.batches_per_epoch = o["batches_per_epoch"].get<int>();
      if (o.contains("batch_size")) c.overrides.batch_size = o["batch_size"].get<int>();
      if (o.contains("patch_size")) c.overrides.patch_size = o["patch_size"].get<int>();
    }
    c.post_rule = parse_post_rule(j.value("post_rule", std::string("none")));
    if (j.contains("overlap")) c.overlap = j["overlap"].get<double>();
    if (j.contains("blend")) c.blend = parse_blend(j["blend"].get<std::string>());
    c.threads = j.value("threads", 1);
    return c;
  } catch (const json::exception& e) {
    fail(ErrorKind::Argument, path.string() + ": malformed run config: " + e.what());
  }
}

json to_json(const RunConfig& c) {
  json overrides = json::object();
  if (c.overrides.base_channels) overrides["base_channels"] = *c.overrides.base_channels;
  if (c.overrides.epochs) overrides["epochs"] = *c.overrides.epochs;
  if (c.overrides.batches_per_epoch) overrides["batches_per_epoch"] = *c.overrides.batches_per_epoch;
  if (c.overrides.batch_size) overrides["batch_size"] = *c.overrides.batch_size;
  if (c.overrides.patch_size) overrides["patch_size"] = *c.overrides.patch_size;
  json j = {{"train_manifest", c.train_manifest.string()},
            {"test_manifest", c.test_manifest.string()},
            {"folds", c.folds},
            {"seed", c.seed},
            {"budget_gb", c.budget_gb},
            {"safety_factor", c.safety_factor},
            {"overrides", overrides},
            {"post_rule", to_string(c.post_rule)},
            {"threads", c.threads}};
  if (c.overlap) j["overlap"] = *c.overlap;
  if (c.blend) j["blend"] = to_string(*c.blend);
  return j;
}

fs::path stage_marker(const fs::path& run_dir, const std::string& stage) {
  return run_dir / "stages" / (stage + ".done");
}

void run_pipeline(const RunConfig& rc, const fs::path& run_dir, bool force, const LogFn& log) {
  fs::create_directories(run_dir / "stages");
  write_canonical_json(run_dir / "run_config.json", to_json(rc));
  bool rerun = force;
  auto stage = [&](const std::string& name, const std::function<void()>& body) {
    const auto marker = stage_marker(run_dir, name);
    if (!rerun && fs::exists(marker)) {
      say(log, "stage " + name + ": already complete, skipping");
      return;
    }
    rerun = true;  // everything downstream of a re-run stage is stale
    fs::remove(marker);
    say(log, "stage " + name + ": running");
    body();
    write_text_atomic(marker, name + "\n");
  };
  stage("fingerprint", [&] { stages::fingerprint(rc.train_manifest, run_dir); });
  stage("configure", [&] {
    MemoryBudget budget;
    budget.bytes_available = static_cast<std::uint64_t>(rc.budget_gb * static_cast<double>(1ull << 30));
    budget.safety_factor = rc.safety_factor;
    stages::configure(run_dir, budget, rc.folds, rc.overrides);
  });
  stage("train", [&] { stages::train(rc.train_manifest, run_dir, {rc.seed, rc.threads}, log); });
  stage("predict", [&] {
    stages::predict(rc.test_manifest, run_dir, run_dir / "predictions", {rc.overlap, rc.blend}, log);
  });
  const bool post = rc.post_rule != PostRule::None;
  if (post)
    stage("postprocess", [&] { stages::postprocess(run_dir / "predictions", run_dir / "postprocessed", rc.post_rule); });
  stage("evaluate", [&] {
    auto rep = stages::evaluate(rc.test_manifest, run_dir / "predictions",
                                post ? std::optional<fs::path>(run_dir / "postprocessed") : std::nullopt, run_dir);
    say(log, read_text(run_dir / "report.txt"));
  });
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Argument: return 2;
    case ErrorKind::Format:
    case ErrorKind::Corruption:
    case ErrorKind::Version:
    case ErrorKind::Io:
    case ErrorKind::Consistency:
    case ErrorKind::Budget: return 3;
    case ErrorKind::Numeric:
    case ErrorKind::Contract: return 4;
  }
  return 1;
}

}  // namespace cloudseg
