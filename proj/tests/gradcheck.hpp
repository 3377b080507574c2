#pragma once
// Central finite-difference checks against the analytic backward passes, in double.

#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cloudseg/autoconfig.hpp"
#include "cloudseg/layers.hpp"
#include "cloudseg/net.hpp"
#include "cloudseg/train.hpp"

namespace gradcheck {

using cloudseg::nn::Feature;

inline constexpr double kEps = 1e-3;
inline constexpr double kKinkEps = 1e-6;
inline constexpr double kTolerance = 1e-4;
inline constexpr double kFloor = 1e-6;

inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kFloor});
}

struct Report {
  std::string name;
  std::size_t checked = 0;
  std::size_t kink_retries = 0;
  std::size_t skipped = 0;  // still straddling a kink at the small step
  double worst = 0.0;
  std::string worst_at;

  bool ok() const { return checked > 0 && worst <= kTolerance && skipped * 10 <= checked; }
  void note(double err, const std::string& where) {
    ++checked;
    if (err > worst) {
      worst = err;
      worst_at = where;
    }
  }
  std::string summary() const {
    std::ostringstream s;
    s << name << ": " << checked << " entries, worst rel err " << worst;
    if (!worst_at.empty()) s << " at " << worst_at;
    if (kink_retries) s << ", " << kink_retries << " kink retries";
    if (skipped) s << ", " << skipped << " skipped";
    return s.str();
  }
};

inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t max, std::mt19937_64& eng) {
  std::vector<std::size_t> idx;
  if (n <= max) {
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    return idx;
  }
  std::uniform_int_distribution<std::size_t> d(0, n - 1);
  for (std::size_t i = 0; i < max; ++i) idx.push_back(d(eng));
  return idx;
}

// Perturbs x[i] in place; loss() must read x.
inline void check_entries(Report& r, std::vector<double>& x, const std::vector<double>& analytic,
                          const std::function<double()>& loss, const std::vector<std::size_t>& idx,
                          const std::string& label) {
  for (std::size_t i : idx) {
    const double keep = x[i];
    x[i] = keep + kEps;
    const double lp = loss();
    x[i] = keep - kEps;
    const double lm = loss();
    x[i] = keep;
    r.note(rel_err(analytic[i], (lp - lm) / (2 * kEps)), label + "[" + std::to_string(i) + "]");
  }
}

inline Feature<double> random_feature(int c, int h, int w, std::mt19937_64& eng, double lo = -1, double hi = 1) {
  Feature<double> f(c, h, w);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : f.data) v = u(eng);
  return f;
}

inline std::vector<double> random_vec(std::size_t n, std::mt19937_64& eng, double lo = -1, double hi = 1) {
  std::vector<double> v(n);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& x : v) x = u(eng);
  return v;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

namespace nn = cloudseg::nn;

inline Report conv(int in, int out, int kernel, int stride, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  Report r;
  r.name = "conv" + std::to_string(kernel) + "x" + std::to_string(kernel) + "/s" + std::to_string(stride);
  nn::ConvShape s{in, out, kernel, stride, kernel / 2};
  auto x = random_feature(in, 9, 10, eng);
  auto w = random_vec(static_cast<std::size_t>(out) * in * kernel * kernel, eng);
  auto b = random_vec(out, eng);
  auto y0 = nn::conv_forward<double>(x, s, w, b);
  auto proj = random_vec(y0.data.size(), eng);
  auto loss = [&] { return dot(nn::conv_forward<double>(x, s, w, b).data, proj); };
  Feature<double> dy(y0.channels, y0.height, y0.width);
  dy.data = proj;
  std::vector<double> dw(w.size(), 0.0), db(b.size(), 0.0);
  auto dx = nn::conv_backward<double>(x, s, w, dy, dw, db, true);
  check_entries(r, w, dw, loss, sample_indices(w.size(), 40, eng), "weight");
  check_entries(r, b, db, loss, sample_indices(b.size(), 40, eng), "bias");
  check_entries(r, x.data, dx.data, loss, sample_indices(x.data.size(), 40, eng), "input");
  return r;
}

inline Report upconv(int in, int out, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  Report r;
  r.name = "transposed conv 2x2/s2";
  auto x = random_feature(in, 4, 5, eng);
  auto w = random_vec(static_cast<std::size_t>(in) * out * 4, eng);
  auto b = random_vec(out, eng);
  auto y0 = nn::upconv_forward<double>(x, out, w, b);
  auto proj = random_vec(y0.data.size(), eng);
  auto loss = [&] { return dot(nn::upconv_forward<double>(x, out, w, b).data, proj); };
  Feature<double> dy(y0.channels, y0.height, y0.width);
  dy.data = proj;
  std::vector<double> dw(w.size(), 0.0), db(b.size(), 0.0);
  auto dx = nn::upconv_backward<double>(x, out, w, dy, dw, db);
  check_entries(r, w, dw, loss, sample_indices(w.size(), 40, eng), "weight");
  check_entries(r, b, db, loss, sample_indices(b.size(), 40, eng), "bias");
  check_entries(r, x.data, dx.data, loss, sample_indices(x.data.size(), 40, eng), "input");
  return r;
}

inline Report instance_norm(std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  Report r;
  r.name = "instance norm";
  auto x = random_feature(3, 5, 6, eng, -2, 3);
  auto scale = random_vec(3, eng, 0.5, 1.5);
  auto shift = random_vec(3, eng);
  auto proj = random_vec(x.data.size(), eng);
  auto loss = [&] { return dot(nn::instance_norm_forward<double>(x, scale, shift, nullptr).data, proj); };
  nn::NormCache<double> cache;
  nn::instance_norm_forward<double>(x, scale, shift, &cache);
  Feature<double> dy(3, 5, 6);
  dy.data = proj;
  std::vector<double> dscale(3, 0.0), dshift(3, 0.0);
  auto dx = nn::instance_norm_backward<double>(cache, scale, dy, dscale, dshift);
  check_entries(r, scale, dscale, loss, sample_indices(3, 3, eng), "scale");
  check_entries(r, shift, dshift, loss, sample_indices(3, 3, eng), "shift");
  check_entries(r, x.data, dx.data, loss, sample_indices(x.data.size(), 90, eng), "input");
  return r;
}

inline Report leaky_relu(std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  Report r;
  r.name = "leaky relu";
  auto x = random_feature(2, 4, 4, eng);
  for (auto& v : x.data)
    if (std::abs(v) < 0.05) v = v < 0 ? -0.05 : 0.05;  // keep every input clear of the kink
  auto proj = random_vec(x.data.size(), eng);
  auto loss = [&] {
    auto y = x;
    nn::leaky_relu_inplace(y);
    return dot(y.data, proj);
  };
  auto y = x;
  nn::leaky_relu_inplace(y);
  Feature<double> g(2, 4, 4);
  g.data = proj;
  nn::leaky_relu_backward_inplace(y, g);
  check_entries(r, x.data, g.data, loss, sample_indices(x.data.size(), 32, eng), "input");
  return r;
}

inline Report concat_split(std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  Report r;
  r.name = "channel concat";
  auto a = random_feature(2, 3, 3, eng);
  auto b = random_feature(3, 3, 3, eng);
  auto proj = random_vec(5 * 9, eng);
  auto loss = [&] { return dot(nn::concat_channels(a, b).data, proj); };
  Feature<double> g(5, 3, 3);
  g.data = proj;
  auto [ga, gb] = nn::split_channels(g, 2);
  check_entries(r, a.data, ga.data, loss, sample_indices(a.data.size(), 18, eng), "first");
  check_entries(r, b.data, gb.data, loss, sample_indices(b.data.size(), 27, eng), "second");
  return r;
}

inline cloudseg::Batch<double> random_batch(int n, int c, int h, int w, std::mt19937_64& eng) {
  cloudseg::Batch<double> b(n, c, h, w);
  std::normal_distribution<double> d(0.0, 1.0);
  for (auto& v : b.data) v = d(eng);
  return b;
}

inline std::vector<cloudseg::CloudMask> random_masks(int n, int h, int w, std::mt19937_64& eng) {
  std::vector<cloudseg::CloudMask> out;
  std::bernoulli_distribution coin(0.4);
  for (int i = 0; i < n; ++i) {
    cloudseg::CloudMask m(h, w);
    for (auto& v : m.values) v = coin(eng) ? 1 : 0;
    out.push_back(m);
  }
  return out;
}

inline Report dice_ce(std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  Report r;
  r.name = "dice+ce loss";
  auto logits = random_batch(2, 2, 6, 7, eng);
  auto masks = random_masks(2, 6, 7, eng);
  auto res = cloudseg::dice_ce_loss<double>(logits, masks);
  auto loss = [&] { return cloudseg::dice_ce_loss<double>(logits, masks).loss; };
  check_entries(r, logits.data, res.grad_logits.data, loss, sample_indices(logits.data.size(), 168, eng), "logit");
  return r;
}

inline cloudseg::PipelineConfig tiny_config(int bands, int base, int d, int hw) {
  cloudseg::PipelineConfig c;
  c.in_channels = bands;
  c.patch_height = c.patch_width = hw;
  c.n_downsamplings = d;
  c.base_channels = base;
  c.channels = cloudseg::stage_channels(base, c.channel_cap, d);
  c.n_folds = 4;
  return c;
}

// Leaky ReLU sign pattern of every block output: a finite-difference step that flips one
// of these crosses a kink and is not a valid derivative estimate.
inline std::vector<bool> activation_signs(const cloudseg::UNet<double>& model, const cloudseg::Batch<double>& x) {
  cloudseg::ForwardCache<double> cache;
  model.forward(x, &cache);
  std::vector<bool> signs;
  for (const auto& s : cache.samples) {
    for (const auto& b : s.encoder)
      for (double v : b.output.data) signs.push_back(v > 0);
    for (const auto& b : s.decoder)
      for (double v : b.output.data) signs.push_back(v > 0);
  }
  return signs;
}

// Every parameter tensor of a tiny U-Net through the Dice+CE loss.
inline Report unet(const cloudseg::PipelineConfig& config, std::uint64_t seed, std::size_t per_tensor) {
  std::mt19937_64 eng(seed);
  Report r;
  r.name = "u-net d=" + std::to_string(config.n_downsamplings) + " " + std::to_string(config.patch_height) + "x" +
           std::to_string(config.patch_width);
  auto model = cloudseg::UNet<double>::init_params(config, seed);
  // Non-trivial affine parameters so scale/shift gradients are exercised away from the init.
  for (auto& p : model.mutable_parameters())
    if (p.name.find(".norm") != std::string::npos || p.name.ends_with(".bias"))
      for (auto& v : p.values) v += std::uniform_real_distribution<double>(-0.3, 0.3)(eng);
  auto x = random_batch(2, config.in_channels, config.patch_height, config.patch_width, eng);
  auto masks = random_masks(2, config.patch_height, config.patch_width, eng);

  cloudseg::ForwardCache<double> cache;
  auto logits = model.forward(x, &cache);
  auto lr = cloudseg::dice_ce_loss<double>(logits, masks);
  auto grads = model.backward(cache, lr.grad_logits);

  auto loss_at = [&] { return cloudseg::dice_ce_loss<double>(model.forward(x), masks).loss; };
  const auto names = model.parameters();
  for (std::size_t t = 0; t < names.size(); ++t) {
    for (std::size_t i : sample_indices(names[t].values.size(), per_tensor, eng)) {
      const double keep = model.parameters()[t].values[i];
      double numeric = 0.0;
      bool valid = false;
      for (double eps : {kEps, kKinkEps}) {
        model.mutable_parameters()[t].values[i] = keep + eps;
        const auto sp = activation_signs(model, x);
        const double lp = loss_at();
        model.mutable_parameters()[t].values[i] = keep - eps;
        const auto sm = activation_signs(model, x);
        const double lm = loss_at();
        model.mutable_parameters()[t].values[i] = keep;
        if (sp == sm) {
          numeric = (lp - lm) / (2 * eps);
          valid = true;
          break;
        }
        if (eps == kEps) ++r.kink_retries;
      }
      if (!valid) {
        ++r.skipped;
        continue;
      }
      r.note(rel_err(grads[t][i], numeric), names[t].name + "[" + std::to_string(i) + "]");
    }
  }
  return r;
}

// The standard suite: every layer type plus full networks at depth 1 and 2.
inline std::vector<Report> full_suite() {
  std::vector<Report> out;
  out.push_back(conv(3, 4, 3, 1, 1));
  out.push_back(conv(3, 4, 3, 2, 2));
  out.push_back(conv(5, 2, 1, 1, 3));
  out.push_back(upconv(4, 3, 4));
  out.push_back(instance_norm(5));
  out.push_back(leaky_relu(6));
  out.push_back(concat_split(7));
  out.push_back(dice_ce(8));
  out.push_back(unet(tiny_config(2, 4, 1, 8), 9, 20));
  out.push_back(unet(tiny_config(3, 4, 2, 16), 10, 20));
  return out;
}

}  // namespace gradcheck
