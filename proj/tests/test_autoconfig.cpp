#include <gtest/gtest.h>

#include "cloudseg/autoconfig.hpp"
#include "oracles.hpp"

using namespace cloudseg;

namespace {

DatasetFingerprint fp(int h, int w, std::size_t n = 1000, int bands = 4) {
  DatasetFingerprint f;
  f.n_patches = n;
  f.band_count = bands;
  f.median_height = h;
  f.median_width = w;
  f.bands.assign(bands, BandStats{0, 1, -1, 1});
  return f;
}

MemoryBudget generous() { return MemoryBudget{}; }

// Layer-by-layer count written out independently of parameter_layout.
std::uint64_t oracle_params(int in, const std::vector<int>& ch, int classes) {
  auto conv3 = [](std::uint64_t i, std::uint64_t o) { return i * o * 9 + o; };
  auto norm = [](std::uint64_t c) { return 2 * c; };
  std::uint64_t n = 0;
  int prev = in;
  for (std::size_t s = 0; s < ch.size(); ++s) {
    n += conv3(prev, ch[s]) + norm(ch[s]) + conv3(ch[s], ch[s]) + norm(ch[s]);
    prev = ch[s];
  }
  for (int s = static_cast<int>(ch.size()) - 2; s >= 0; --s) {
    n += static_cast<std::uint64_t>(ch[s + 1]) * ch[s] * 4 + ch[s];
    n += conv3(2 * ch[s], ch[s]) + norm(ch[s]) + conv3(ch[s], ch[s]) + norm(ch[s]);
  }
  return n + static_cast<std::uint64_t>(ch[0]) * classes + classes;
}

std::uint64_t oracle_activation(int h, int w, const std::vector<int>& ch, std::uint64_t batch) {
  std::uint64_t sum = 0;
  const int d = static_cast<int>(ch.size()) - 1;
  for (int s = 0; s <= d; ++s) sum += std::uint64_t(h >> s) * (w >> s) * ch[s] * 2;
  for (int s = 0; s < d; ++s) sum += std::uint64_t(h >> s) * (w >> s) * ch[s] * 2;
  return 4 * batch * 2 * sum;
}

}  // namespace

TEST(Autoconfig, Median384) {
  auto r = configure_pipeline(fp(384, 384), generous(), 5);
  EXPECT_EQ(r.config.patch_height, 384);
  EXPECT_EQ(r.config.patch_width, 384);
  EXPECT_EQ(r.config.n_downsamplings, 5);
  EXPECT_EQ(r.config.channels, (std::vector<int>{32, 64, 128, 256, 512, 512}));
  EXPECT_EQ(r.config.epochs, 1000);
  EXPECT_DOUBLE_EQ(r.config.lr0, 0.01);
  EXPECT_DOUBLE_EQ(r.config.momentum, 0.99);
  EXPECT_DOUBLE_EQ(r.config.threshold, 0.5);
  EXPECT_EQ(r.config.blend, Blend::Gaussian);
  EXPECT_TRUE(r.config.ensemble);
  EXPECT_GE(r.trace.size(), 6u);
}

TEST(Autoconfig, Median512And16) {
  auto a = configure_pipeline(fp(512, 512), generous(), 4);
  EXPECT_EQ(a.config.patch_height, 512);
  EXPECT_EQ(a.config.n_downsamplings, 5);
  EXPECT_EQ(a.config.channels, (std::vector<int>{32, 64, 128, 256, 512, 512}));
  auto b = configure_pipeline(fp(16, 16), generous(), 5);
  EXPECT_EQ(b.config.patch_height, 16);
  EXPECT_EQ(b.config.patch_width, 16);
  EXPECT_EQ(b.config.n_downsamplings, 1);
  EXPECT_EQ(b.config.channels, (std::vector<int>{32, 64}));
}

TEST(Autoconfig, RoundingToMultiple) {
  auto r = configure_pipeline(fp(500, 333), generous(), 5);
  EXPECT_EQ(r.config.n_downsamplings, 5);
  EXPECT_EQ(r.config.patch_height, 480);
  EXPECT_EQ(r.config.patch_width, 320);
}

TEST(Autoconfig, Errors) {
  EXPECT_THROW(configure_pipeline(fp(384, 384), generous(), 3), Error);
  try {
    configure_pipeline(fp(384, 384), MemoryBudget{1 << 20, 0.85}, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Budget);
    EXPECT_NE(std::string(e.what()).find("dataset/budget incompatible"), std::string::npos);
  }
}

TEST(Autoconfig, Deterministic) {
  auto a = configure_pipeline(fp(300, 260, 77), MemoryBudget{3ull << 30, 0.7}, 4);
  auto b = configure_pipeline(fp(300, 260, 77), MemoryBudget{3ull << 30, 0.7}, 4);
  EXPECT_EQ(a.config, b.config);
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_EQ(config_hash(a.config), config_hash(b.config));
  EXPECT_EQ(config_from_json(json::parse(canonical_json(to_json(a.config)))), a.config);
}

TEST(Memory, HandArithmetic) {
  PipelineConfig c;
  c.patch_height = c.patch_width = 64;
  c.n_downsamplings = 0;
  c.channels = {32};
  EXPECT_EQ(activation_bytes(c, 1), 2'097'152u);
  EXPECT_EQ(activation_bytes(c, 2), 2 * activation_bytes(c, 1));
  EXPECT_EQ(conv_param_count(1, 1, 3, true), 10u);
}

TEST(Memory, MatchesOracleAndIsMonotone) {
  oracle::Gen g(33);
  for (int t = 0; t < 200; ++t) {
    PipelineConfig c;
    c.n_downsamplings = g.uniform_int(1, 5);
    const int div = 1 << c.n_downsamplings;
    c.patch_height = div * g.uniform_int(1, 20);
    c.patch_width = div * g.uniform_int(1, 20);
    c.base_channels = g.uniform_int(1, 48);
    c.in_channels = g.uniform_int(1, 6);
    c.channels = stage_channels(c.base_channels, c.channel_cap, c.n_downsamplings);
    const std::uint64_t batch = 1ull << g.uniform_int(1, 5);
    EXPECT_EQ(count_parameters(c), oracle_params(c.in_channels, c.channels, 2));
    EXPECT_EQ(activation_bytes(c, batch), oracle_activation(c.patch_height, c.patch_width, c.channels, batch));
    PipelineConfig bigger = c;
    bigger.patch_height += div;
    EXPECT_GE(estimate_memory(bigger, batch), estimate_memory(c, batch));
  }
}

TEST(Params, DefaultModelSizeAndQuadraticScaling) {
  auto r = configure_pipeline(fp(384, 384), generous(), 5);
  const auto n = count_parameters(r.config);
  EXPECT_GE(n, 15'000'000u);
  EXPECT_LE(n, 40'000'000u);

  PipelineConfig a = r.config, b = r.config;
  a.channel_cap = b.channel_cap = 1 << 20;
  a.base_channels = 32;
  b.base_channels = 64;
  a.channels = stage_channels(32, a.channel_cap, a.n_downsamplings);
  b.channels = stage_channels(64, b.channel_cap, b.n_downsamplings);
  auto la = parameter_layout(a), lb = parameter_layout(b);
  ASSERT_EQ(la.size(), lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) {
    const auto& name = la[i].name;
    const bool weight = name.ends_with(".weight");
    const bool touches_input = name == "enc0.conv0.weight" || name == "head.weight";
    if (weight && !touches_input) { EXPECT_EQ(lb[i].count(), 4 * la[i].count()) << name; }
    if (touches_input) { EXPECT_EQ(lb[i].count(), 2 * la[i].count()) << name; }
  }
}

TEST(Autoconfig, FuzzedInvariants) {
  oracle::Gen g(1234);
  for (int t = 0; t < 2000; ++t) {
    auto f = fp(g.uniform_int(16, 1024), g.uniform_int(16, 1024), g.uniform_int(1, 20000), g.uniform_int(1, 13));
    MemoryBudget b{static_cast<std::uint64_t>(g.uniform(0.01, 32.0) * (1ull << 30)), g.uniform(0.3, 1.0)};
    ConfiguredPipeline r;
    try {
      r = configure_pipeline(f, b, 5);
    } catch (const Error& e) {
      ASSERT_EQ(e.kind(), ErrorKind::Budget);
      continue;
    }
    const auto& c = r.config;
    const int div = 1 << c.n_downsamplings;
    ASSERT_GE(c.n_downsamplings, 1);
    ASSERT_LE(c.n_downsamplings, 5);
    ASSERT_EQ(c.patch_height % div, 0);
    ASSERT_EQ(c.patch_width % div, 0);
    ASSERT_GE(std::min(c.patch_height, c.patch_width) / div, 8);
    ASSERT_GE(c.batch_size, 2);
    ASSERT_LE(static_cast<double>(estimate_memory(c, c.batch_size)), b.limit());
    for (std::size_t s = 1; s < c.channels.size(); ++s) ASSERT_GE(c.channels[s], c.channels[s - 1]);

    // A strictly larger budget never shrinks patch or batch.
    MemoryBudget more{b.bytes_available + b.bytes_available / 2 + 1, b.safety_factor};
    auto r2 = configure_pipeline(f, more, 5);
    ASSERT_GE(r2.config.patch_height * r2.config.patch_width, c.patch_height * c.patch_width);
    ASSERT_GE(r2.config.patch_height, c.patch_height);
    ASSERT_GE(r2.config.patch_width, c.patch_width);
    ASSERT_GE(r2.config.batch_size, c.batch_size);
  }
}

TEST(Autoconfig, OverridesAreHonoured) {
  ConfigOverrides o;
  o.base_channels = 8;
  o.epochs = 15;
  o.batches_per_epoch = 20;
  auto r = configure_pipeline(fp(64, 64, 200), generous(), 4, o);
  EXPECT_EQ(r.config.channels, (std::vector<int>{8, 16, 32, 64}));
  EXPECT_EQ(r.config.epochs, 15);
  EXPECT_EQ(r.config.batches_per_epoch, 20);
  EXPECT_EQ(r.config.batch_size, 8);  // 5% of 200 patches
}

TEST(Autoconfig, PatchOverrideReplacesMedianShape) {
  ConfigOverrides o;
  o.patch_size = 64;
  o.batch_size = 8;
  auto r = configure_pipeline(fp(128, 128, 37), generous(), 4, o);
  EXPECT_EQ(r.config.patch_height, 64);
  EXPECT_EQ(r.config.patch_width, 64);
  EXPECT_EQ(r.config.n_downsamplings, 3);
  EXPECT_EQ(r.config.batch_size, 8);
  o.patch_size = 100;  // rounded down to a multiple of 2^d like a median shape
  EXPECT_EQ(configure_pipeline(fp(128, 128), generous(), 4, o).config.patch_height, 96);
  o.patch_size = 8;
  EXPECT_THROW(configure_pipeline(fp(128, 128), generous(), 4, o), Error);
}
