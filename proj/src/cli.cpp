#include "cloudseg/cli.hpp"

#include <ostream>

#include "CLI11.hpp"
#include "cloudseg/baseline.hpp"
#include "cloudseg/pipeline.hpp"
#include "cloudseg/synth.hpp"

namespace fs = std::filesystem;

namespace cloudseg {

namespace {

std::pair<int, int> parse_size(const std::string& s) {
  int h = 0, w = 0;
  char sep = 0;
  std::istringstream in(s);
  if (!(in >> h)) fail(ErrorKind::Argument, "--size expects H,W or N");
  if (!(in >> sep)) return {h, h};
  if ((sep != ',' && sep != 'x') || !(in >> w)) fail(ErrorKind::Argument, "--size expects H,W");
  return {h, w};
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      fail(ErrorKind::Argument, "expected a comma-separated integer list, got '" + s + "'");
    }
  }
  return out;
}

struct Globals {
  fs::path run_dir = "run";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<double> budget_gb;
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-configuring cloud segmentation pipeline"};
  app.require_subcommand(1);
  Globals g;
  std::string run_dir_s = "run";
  app.add_option("--run-dir", run_dir_s, "Run directory for stage artifacts");
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--threads", g.threads, "Worker threads for fold training")->check(CLI::PositiveNumber);
  app.add_option("--budget-gb", g.budget_gb, "Accelerator memory budget in GiB")->check(CLI::PositiveNumber);

  LogFn log = [&err](const std::string& m) { err << m << (m.ends_with('\n') ? "" : "\n"); };

  // fingerprint
  auto* c_fp = app.add_subcommand("fingerprint", "Compute dataset statistics");
  std::string fp_manifest;
  c_fp->add_option("--manifest", fp_manifest, "Training manifest")->required();

  // configure
  auto* c_cfg = app.add_subcommand("configure", "Derive the pipeline configuration from fingerprint.json");
  int cfg_folds = 5;
  double cfg_safety = 0.85;
  ConfigOverrides cfg_over;
  c_cfg->add_option("--folds", cfg_folds, "Cross-validation folds");
  c_cfg->add_option("--safety", cfg_safety, "Fraction of the budget that may be used");
  c_cfg->add_option("--base-channels", cfg_over.base_channels);
  c_cfg->add_option("--epochs", cfg_over.epochs);
  c_cfg->add_option("--batches-per-epoch", cfg_over.batches_per_epoch);
  c_cfg->add_option("--batch-size", cfg_over.batch_size);
  c_cfg->add_option("--patch-size", cfg_over.patch_size, "Square patch instead of the median shape");

  // train
  auto* c_train = app.add_subcommand("train", "Train every fold of pipeline.json");
  std::string tr_manifest;
  c_train->add_option("--manifest", tr_manifest, "Training manifest")->required();

  // predict
  auto* c_pred = app.add_subcommand("predict", "Ensemble sliding-window prediction");
  std::string pr_manifest, pr_out;
  std::optional<double> pr_overlap;
  std::optional<std::string> pr_blend;
  c_pred->add_option("--manifest", pr_manifest, "Manifest of scenes to predict")->required();
  c_pred->add_option("--out", pr_out, "Output directory (default RUN_DIR/predictions)");
  c_pred->add_option("--overlap", pr_overlap, "Window overlap fraction");
  c_pred->add_option("--blend", pr_blend, "gaussian|uniform");

  // postprocess
  auto* c_pp = app.add_subcommand("postprocess", "Morphological clean-up of predicted masks");
  std::string pp_in, pp_out, pp_rule = "adaptive";
  c_pp->add_option("--in", pp_in, "Directory of *.mask.cseg")->required();
  c_pp->add_option("--out", pp_out, "Output directory")->required();
  c_pp->add_option("--rule", pp_rule, "adaptive|open|close|none");

  // baseline
  auto* c_base = app.add_subcommand("baseline", "Single-band threshold baseline");
  std::string bl_band, bl_out, bl_gt;
  std::optional<double> bl_tau;
  bool bl_otsu = false;
  c_base->add_option("--band", bl_band, "Band tensor (CSEG)")->required();
  auto* tau_opt = c_base->add_option("--tau", bl_tau, "Fixed threshold");
  auto* otsu_opt = c_base->add_flag("--otsu", bl_otsu, "Pick the threshold with Otsu's method");
  tau_opt->excludes(otsu_opt);
  c_base->add_option("--out", bl_out, "Output mask tensor");
  c_base->add_option("--gt", bl_gt, "Ground-truth mask; prints metrics");

  // evaluate
  auto* c_eval = app.add_subcommand("evaluate", "Per-patch metrics, summaries and significance");
  std::string ev_manifest, ev_pred, ev_pp, ev_out;
  c_eval->add_option("--manifest", ev_manifest, "Manifest with ground truth")->required();
  c_eval->add_option("--pred", ev_pred, "Directory of predicted masks")->required();
  c_eval->add_option("--pp", ev_pp, "Directory of post-processed masks");
  c_eval->add_option("--out", ev_out, "Output directory (default RUN_DIR)");

  // mos-report
  auto* c_mos = app.add_subcommand("mos-report", "Aggregate a mean-opinion-score study");
  std::string mos_resp, mos_ji, mos_out;
  c_mos->add_option("--responses", mos_resp, "CSV image_id,choice")->required();
  c_mos->add_option("--ji", mos_ji, "CSV image_id,ji_a,ji_b")->required();
  c_mos->add_option("--out", mos_out, "Output CSV (default stdout)");

  // synth
  auto* c_syn = app.add_subcommand("synth", "Generate a seeded synthetic dataset");
  SynthSpec spec;
  std::string syn_size = "128,128", syn_out;
  c_syn->add_option("--scenes", spec.n_scenes);
  c_syn->add_option("--size", syn_size, "H,W");
  c_syn->add_option("--bands", spec.bands);
  c_syn->add_option("--density", spec.density);
  c_syn->add_option("--haze", spec.haze_fraction);
  c_syn->add_option("--noise", spec.noise_std);
  c_syn->add_option("--patch", spec.patch, "Cut scenes into square patches of this size");
  c_syn->add_option("--out", syn_out)->required();

  // pipeline
  auto* c_pipe = app.add_subcommand("pipeline", "Run every stage from a run configuration");
  std::string pipe_cfg;
  std::optional<std::string> pipe_post;
  bool pipe_force = false;
  c_pipe->add_option("--config", pipe_cfg, "Run configuration (JSON)")->required();
  c_pipe->add_option("--post-rule", pipe_post, "adaptive|open|close|none");
  c_pipe->add_flag("--force", pipe_force, "Re-run stages that already completed");

  // render
  auto* c_render = app.add_subcommand("render", "Write PPM overlays of predicted masks");
  std::string rd_manifest, rd_pred, rd_out, rd_rgb = "2,1,0";
  c_render->add_option("--manifest", rd_manifest)->required();
  c_render->add_option("--pred", rd_pred, "Directory of *.mask.cseg")->required();
  c_render->add_option("--out", rd_out)->required();
  c_render->add_option("--rgb", rd_rgb, "Band indices for red,green,blue");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << e.what() << "\n";
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 2;
  }

  g.run_dir = run_dir_s;
  const std::uint64_t seed = g.seed.value_or(0);

  try {
    if (*c_fp) {
      auto f = stages::fingerprint(fp_manifest, g.run_dir);
      out << canonical_json(to_json(f));
    } else if (*c_cfg) {
      MemoryBudget b;
      if (g.budget_gb) b.bytes_available = static_cast<std::uint64_t>(*g.budget_gb * static_cast<double>(1ull << 30));
      b.safety_factor = cfg_safety;
      auto r = stages::configure(g.run_dir, b, cfg_folds, cfg_over);
      for (const auto& line : r.trace) out << line << "\n";
    } else if (*c_train) {
      stages::train(tr_manifest, g.run_dir, {seed, g.threads.value_or(1)}, log);
    } else if (*c_pred) {
      stages::PredictOptions o;
      o.overlap = pr_overlap;
      if (pr_blend) o.blend = parse_blend(*pr_blend);
      stages::predict(pr_manifest, g.run_dir, pr_out.empty() ? g.run_dir / "predictions" : fs::path(pr_out), o, log);
    } else if (*c_pp) {
      auto n = stages::postprocess(pp_in, pp_out, parse_post_rule(pp_rule));
      out << "post-processed " << n << " masks\n";
    } else if (*c_base) {
      require(bl_tau.has_value() || bl_otsu, ErrorKind::Argument, "baseline needs --tau or --otsu");
      auto band = band_from_tensor(load_tensor(bl_band));
      const double tau = bl_otsu ? otsu_threshold(band) : *bl_tau;
      auto mask = band_threshold(band, tau);
      out << "threshold " << format_g9(tau) << "\n";
      if (!bl_out.empty()) save_tensor(to_tensor(mask), bl_out);
      if (!bl_gt.empty()) {
        auto m = metrics_from_confusion(confusion(mask, mask_from_tensor(load_tensor(bl_gt))));
        out << canonical_json_line(to_json(m)) << "\n";
      }
    } else if (*c_eval) {
      auto rep = stages::evaluate(ev_manifest, ev_pred, ev_pp.empty() ? std::nullopt : std::optional<fs::path>(ev_pp),
                                  ev_out.empty() ? g.run_dir : fs::path(ev_out));
      out << read_text((ev_out.empty() ? g.run_dir : fs::path(ev_out)) / "report.txt");
    } else if (*c_mos) {
      auto table = mos_aggregate(parse_mos_responses_csv(read_text(mos_resp)), parse_ji_table_csv(read_text(mos_ji)));
      const auto csv = mos_table_csv(table);
      if (mos_out.empty())
        out << csv;
      else
        write_text_atomic(mos_out, csv);
    } else if (*c_syn) {
      std::tie(spec.height, spec.width) = parse_size(syn_size);
      spec.seed = seed;
      auto m = generate_synthetic_dataset(spec, syn_out);
      out << "wrote " << m.records.size() << " records to " << syn_out << "\n";
    } else if (*c_pipe) {
      auto rc = read_run_config(pipe_cfg);
      if (g.seed) rc.seed = *g.seed;
      if (g.threads) rc.threads = *g.threads;
      if (g.budget_gb) rc.budget_gb = *g.budget_gb;
      if (pipe_post) rc.post_rule = parse_post_rule(*pipe_post);
      run_pipeline(rc, g.run_dir, pipe_force, log);
    } else if (*c_render) {
      const auto idx = parse_int_list(rd_rgb);
      require(idx.size() == 3, ErrorKind::Argument, "--rgb needs three band indices");
      const auto manifest = read_manifest(rd_manifest);
      fs::create_directories(rd_out);
      for (const auto& r : manifest.records) {
        auto image = load_patch(manifest, r);
        MultiBandPatch rgb(3, image.height, image.width);
        for (int c = 0; c < 3; ++c) {
          require(idx[c] >= 0 && idx[c] < image.bands, ErrorKind::Argument, "--rgb band index out of range");
          std::copy(image.band(idx[c]).begin(), image.band(idx[c]).end(), rgb.band(c).begin());
        }
        auto mask = mask_from_tensor(load_tensor(fs::path(rd_pred) / (r.patch_id + ".mask.cseg")));
        render_overlay(rgb, mask, load_mask(manifest, r), fs::path(rd_out) / (r.patch_id + ".ppm"));
      }
      out << "rendered " << manifest.records.size() << " overlays\n";
    }
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error (io): " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace cloudseg
