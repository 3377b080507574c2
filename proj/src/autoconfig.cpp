#include "cloudseg/autoconfig.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace cloudseg {

std::vector<int> stage_channels(int base, int cap, int d) {
  std::vector<int> ch;
  for (int s = 0; s <= d; ++s) ch.push_back(static_cast<int>(std::min<long long>(static_cast<long long>(base) << s, cap)));
  return ch;
}

void validate_config(const PipelineConfig& c) {
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorKind::Argument, "invalid config: " + what); };
  check(c.n_downsamplings >= 1 && c.n_downsamplings <= kMaxDownsamplings, "1 <= d <= 5");
  const int div = 1 << c.n_downsamplings;
  check(c.patch_height > 0 && c.patch_width > 0, "positive patch");
  check(c.patch_height % div == 0 && c.patch_width % div == 0, "patch divisible by 2^d");
  check(c.batch_size >= 2, "batch >= 2");
  check(c.n_folds == 4 || c.n_folds == 5, "folds in {4,5}");
  check(static_cast<int>(c.channels.size()) == c.n_downsamplings + 1, "one channel entry per stage");
  check(std::is_sorted(c.channels.begin(), c.channels.end()), "channels nondecreasing");
  check(c.in_channels >= 1 && c.n_classes == 2, "channel counts");
  check(c.epochs >= 0 && c.batches_per_epoch >= 1, "schedule");
  check(c.lr0 > 0 && c.momentum >= 0 && c.momentum < 1, "optimizer");
  check(c.threshold > 0 && c.threshold < 1, "threshold in (0,1)");
  check(c.overlap >= 0 && c.overlap < 1, "overlap in [0,1)");
}

std::uint64_t ParamSpec::count() const {
  return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1}, std::multiplies<>());
}

std::uint64_t conv_param_count(std::uint64_t in_ch, std::uint64_t out_ch, std::uint64_t kernel, bool bias) {
  return in_ch * out_ch * kernel * kernel + (bias ? out_ch : 0);
}

std::vector<ParamSpec> parameter_layout(const PipelineConfig& c) {
  require(static_cast<int>(c.channels.size()) == c.n_downsamplings + 1, ErrorKind::Argument,
          "channels must have d + 1 entries");
  using Init = ParamSpec::Init;
  std::vector<ParamSpec> out;
  auto u = [](int v) { return static_cast<std::uint32_t>(v); };
  auto conv = [&](const std::string& prefix, int cin, int cout, int k) {
    out.push_back({prefix + ".weight", {u(cout), u(cin), u(k), u(k)}, std::uint64_t(cin) * k * k, Init::HeNormal});
    out.push_back({prefix + ".bias", {u(cout)}, 0, Init::Zero});
  };
  auto norm = [&](const std::string& prefix, int ch) {
    out.push_back({prefix + ".scale", {u(ch)}, 0, Init::One});
    out.push_back({prefix + ".shift", {u(ch)}, 0, Init::Zero});
  };
  int prev = c.in_channels;
  for (int s = 0; s <= c.n_downsamplings; ++s) {
    const std::string p = "enc" + std::to_string(s);
    conv(p + ".conv0", prev, c.channels[s], 3);
    norm(p + ".norm0", c.channels[s]);
    conv(p + ".conv1", c.channels[s], c.channels[s], 3);
    norm(p + ".norm1", c.channels[s]);
    prev = c.channels[s];
  }
  for (int s = c.n_downsamplings - 1; s >= 0; --s) {
    const std::string p = "dec" + std::to_string(s);
    const int up = c.channels[s + 1], ch = c.channels[s];
    // Transposed conv weight layout [in, out, 2, 2].
    out.push_back({p + ".up.weight", {u(up), u(ch), 2, 2}, std::uint64_t(up) * 4, Init::HeNormal});
    out.push_back({p + ".up.bias", {u(ch)}, 0, Init::Zero});
    conv(p + ".conv0", 2 * ch, ch, 3);
    norm(p + ".norm0", ch);
    conv(p + ".conv1", ch, ch, 3);
    norm(p + ".norm1", ch);
  }
  conv("head", c.channels[0], c.n_classes, 1);
  return out;
}

std::uint64_t count_parameters(const PipelineConfig& c) {
  std::uint64_t n = 0;
  for (const auto& p : parameter_layout(c)) n += p.count();
  return n;
}

std::uint64_t activation_bytes(const PipelineConfig& c, std::uint64_t batch) {
  constexpr std::uint64_t kBytes = 4, kOverhead = 2, kConvsPerStage = 2;
  std::uint64_t per_sample = 0;
  auto stage = [&](int s) {
    std::uint64_t h = static_cast<std::uint64_t>(c.patch_height) >> s;
    std::uint64_t w = static_cast<std::uint64_t>(c.patch_width) >> s;
    return h * w * static_cast<std::uint64_t>(c.channels[s]) * kConvsPerStage;
  };
  for (int s = 0; s <= c.n_downsamplings; ++s) per_sample += stage(s);
  for (int s = 0; s < c.n_downsamplings; ++s) per_sample += stage(s);
  return kBytes * batch * kOverhead * per_sample;
}

std::uint64_t estimate_memory(const PipelineConfig& c, std::uint64_t batch) {
  return activation_bytes(c, batch) + 12 * count_parameters(c);
}

namespace {

int depth_for(int h, int w) {
  int d = 0;
  while (d < kMaxDownsamplings && std::min(h, w) / (1 << (d + 1)) >= kMinFeatureSize) ++d;
  return d;
}

int largest_pow2_at_most(long long v) {
  int p = 1;
  while (2LL * p <= v) p *= 2;
  return p;
}

}  // namespace

ConfiguredPipeline configure_pipeline(const DatasetFingerprint& f, const MemoryBudget& b, int folds,
                                      const ConfigOverrides& ov) {
  require(folds == 4 || folds == 5, ErrorKind::Argument, "folds must be 4 or 5");
  require(b.bytes_available > 0, ErrorKind::Argument, "memory budget must be positive");
  require(b.safety_factor > 0 && b.safety_factor <= 1, ErrorKind::Argument, "safety factor must be in (0,1]");
  require(f.band_count >= 1 && f.median_height > 0 && f.median_width > 0, ErrorKind::Argument,
          "invalid fingerprint");

  ConfiguredPipeline out;
  auto& c = out.config;
  auto& trace = out.trace;
  auto log = [&](const std::string& s) { trace.push_back(std::to_string(trace.size() + 1) + ". " + s); };
  auto shape = [](int h, int w) { return std::to_string(h) + "x" + std::to_string(w); };

  c.in_channels = f.band_count;
  c.n_folds = folds;
  c.base_channels = ov.base_channels.value_or(32);
  require(c.base_channels >= 1, ErrorKind::Argument, "base channels must be positive");

  if (ov.patch_size)
    require(*ov.patch_size >= 16, ErrorKind::Argument, "patch override must be >= 16");
  int h = ov.patch_size.value_or(f.median_height), w = ov.patch_size.value_or(f.median_width);
  auto fit_depth = [&](const std::string& why) {
    int d = depth_for(h, w);
    require(d >= 1, ErrorKind::Budget,
            "dataset/budget incompatible: patch " + shape(h, w) + " admits no downsampling with feature size >= 8");
    const int div = 1 << d;
    const int rh = h / div * div, rw = w / div * div;
    log(why + ": patch " + shape(h, w) + " -> " + shape(rh, rw) + " (multiple of 2^" + std::to_string(d) + ")");
    h = rh;
    w = rw;
    c.n_downsamplings = d;
    log("depth d = " + std::to_string(d) + " (min(patch)/2^d = " + std::to_string(std::min(h, w) / div) +
        " >= 8, d <= 5)");
    c.channels = stage_channels(c.base_channels, c.channel_cap, d);
    std::string ch;
    for (int v : c.channels) ch += (ch.empty() ? "" : ",") + std::to_string(v);
    log("channels " + std::to_string(c.base_channels) + "*2^s capped at " + std::to_string(c.channel_cap) + ": [" +
        ch + "]");
  };
  fit_depth(ov.patch_size ? "patch <- override " + shape(h, w) + " (median " + shape(f.median_height, f.median_width) + ")"
                          : "patch <- median shape " + shape(f.median_height, f.median_width));

  const int batch_cap =
      largest_pow2_at_most(std::max<long long>(2, static_cast<long long>(0.05 * static_cast<double>(f.n_patches))));
  bool shrunk = false;
  for (;;) {
    c.patch_height = h;
    c.patch_width = w;
    if (estimate_memory(c, 2) <= b.limit()) break;
    log("batch 2 needs " + std::to_string(estimate_memory(c, 2)) + " B > " +
        std::to_string(static_cast<std::uint64_t>(b.limit())) + " B; shrinking patch");
    int& axis = h >= w ? h : w;
    require(axis / 2 >= kMinShrunkPatch, ErrorKind::Budget,
            "dataset/budget incompatible: patch would fall below 64 on an axis before fitting");
    axis /= 2;
    shrunk = true;
    fit_depth("halved larger axis");
  }

  if (ov.batch_size) {
    c.batch_size = *ov.batch_size;
    require(c.batch_size >= 2, ErrorKind::Argument, "batch override must be >= 2");
    require(estimate_memory(c, c.batch_size) <= b.limit(), ErrorKind::Budget,
            "batch override " + std::to_string(c.batch_size) + " exceeds the memory budget");
    log("batch = " + std::to_string(c.batch_size) + " (override)");
  } else if (shrunk) {
    c.batch_size = 2;
    log("batch = 2 (patch was shrunk; larger patches take precedence over batch)");
  } else {
    int batch = 2;
    while (2 * batch <= batch_cap && estimate_memory(c, 2 * batch) <= b.limit()) batch *= 2;
    c.batch_size = batch;
    log("batch = " + std::to_string(batch) + " (largest power of two within budget, cap " +
        std::to_string(batch_cap) + " = 5% of " + std::to_string(f.n_patches) + " patches)");
  }
  log("memory estimate " + std::to_string(estimate_memory(c, c.batch_size)) + " B <= " +
      std::to_string(static_cast<std::uint64_t>(b.limit())) + " B (safety " + format_g9(b.safety_factor) + ")");

  c.epochs = ov.epochs.value_or(1000);
  c.batches_per_epoch = ov.batches_per_epoch.value_or(50);
  c.lr0 = 0.01;
  c.momentum = 0.99;
  c.threshold = 0.5;
  c.blend = Blend::Gaussian;
  c.overlap = 0.5;
  c.ensemble = true;
  log("training defaults: epochs=" + std::to_string(c.epochs) + " batches_per_epoch=" +
      std::to_string(c.batches_per_epoch) + " lr0=0.01 momentum=0.99 (Nesterov) folds=" + std::to_string(folds));
  log("inference defaults: ensemble of " + std::to_string(folds) + " folds, gaussian blend, overlap 0.5, tau=0.5");
  log("parameters: " + std::to_string(count_parameters(c)));
  validate_config(c);
  return out;
}

json to_json(const PipelineConfig& c) {
  return {{"in_channels", c.in_channels},
          {"n_classes", c.n_classes},
          {"patch_size", {c.patch_height, c.patch_width}},
          {"batch_size", c.batch_size},
          {"n_downsamplings", c.n_downsamplings},
          {"base_channels", c.base_channels},
          {"channel_cap", c.channel_cap},
          {"channels_per_stage", c.channels},
          {"n_folds", c.n_folds},
          {"epochs", c.epochs},
          {"batches_per_epoch", c.batches_per_epoch},
          {"lr0", c.lr0},
          {"momentum", c.momentum},
          {"normalization", c.normalization},
          {"ensemble", c.ensemble},
          {"blend", to_string(c.blend)},
          {"overlap", c.overlap},
          {"threshold", c.threshold}};
}

PipelineConfig config_from_json(const json& j) {
  try {
    PipelineConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    c.patch_height = j.at("patch_size").at(0).get<int>();
    c.patch_width = j.at("patch_size").at(1).get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.n_downsamplings = j.at("n_downsamplings").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.channel_cap = j.at("channel_cap").get<int>();
    c.channels = j.at("channels_per_stage").get<std::vector<int>>();
    c.n_folds = j.at("n_folds").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.batches_per_epoch = j.at("batches_per_epoch").get<int>();
    c.lr0 = j.at("lr0").get<double>();
    c.momentum = j.at("momentum").get<double>();
    c.normalization = j.at("normalization").get<std::string>();
    c.ensemble = j.at("ensemble").get<bool>();
    c.blend = parse_blend(j.at("blend").get<std::string>());
    c.overlap = j.at("overlap").get<double>();
    c.threshold = j.at("threshold").get<double>();
    validate_config(c);
    return c;
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("malformed pipeline config: ") + e.what());
  }
}

std::string config_hash(const PipelineConfig& c) { return fnv1a_hex(canonical_json(to_json(c))); }

}  // namespace cloudseg
