#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "cloudseg/autoconfig.hpp"
#include "cloudseg/eval.hpp"
#include "cloudseg/postproc.hpp"

namespace cloudseg {

using LogFn = std::function<void(const std::string&)>;

// Stage-level entry points shared by the CLI subcommands and run_pipeline.
// Every artifact lands in run_dir under a fixed name.
namespace stages {

DatasetFingerprint fingerprint(const std::filesystem::path& train_manifest, const std::filesystem::path& run_dir);

ConfiguredPipeline configure(const std::filesystem::path& run_dir, const MemoryBudget& budget, int folds,
                             const ConfigOverrides& overrides);

struct TrainOptions {
  std::uint64_t seed = 0;
  int threads = 1;
};

// Trains every fold of run_dir/pipeline.json; writes models/fold{i}/ and fold{i}_curve.csv.
void train(const std::filesystem::path& train_manifest, const std::filesystem::path& run_dir,
           const TrainOptions& options, const LogFn& log = {});

struct PredictOptions {
  std::optional<double> overlap;  // defaults to pipeline.json
  std::optional<Blend> blend;
};

// Ensemble prediction for every record; writes {patch_id}.prob.cseg / .mask.cseg into out_dir,
// predict_stats.json (throughput) and, when GT is available, members.json.
void predict(const std::filesystem::path& manifest, const std::filesystem::path& run_dir,
             const std::filesystem::path& out_dir, const PredictOptions& options, const LogFn& log = {});

// Applies the rule to every *.mask.cseg in in_dir.
std::size_t postprocess(const std::filesystem::path& in_dir, const std::filesystem::path& out_dir, PostRule rule);

struct EvaluationReport {
  std::vector<SegmentationMetrics> raw;
  std::vector<SegmentationMetrics> post;  // empty without a post-processed set
  std::optional<double> mean_ji_raw;
  std::optional<double> mean_ji_post;
};

// metrics.jsonl (+ metrics.pp.jsonl), summary.json, significance.json, report.txt.
EvaluationReport evaluate(const std::filesystem::path& manifest, const std::filesystem::path& pred_dir,
                          const std::optional<std::filesystem::path>& pp_dir, const std::filesystem::path& out_dir);

}  // namespace stages

// Contents of a pipeline run configuration file (canonical JSON).
struct RunConfig {
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  int folds = 5;
  std::uint64_t seed = 0;
  double budget_gb = 24.0;
  double safety_factor = 0.85;
  ConfigOverrides overrides;
  PostRule post_rule = PostRule::None;
  std::optional<double> overlap;
  std::optional<Blend> blend;
  int threads = 1;
};

RunConfig read_run_config(const std::filesystem::path& path);
json to_json(const RunConfig& c);

inline constexpr const char* kStageNames[] = {"fingerprint", "configure", "train", "predict", "postprocess", "evaluate"};

// fingerprint -> configure -> train -> predict -> [postprocess] -> evaluate; a stage with a
// completion marker is skipped unless force is set.
void run_pipeline(const RunConfig& config, const std::filesystem::path& run_dir, bool force, const LogFn& log = {});

std::filesystem::path stage_marker(const std::filesystem::path& run_dir, const std::string& stage);

int exit_code_for(ErrorKind kind);

}  // namespace cloudseg
