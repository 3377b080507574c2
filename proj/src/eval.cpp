#include "cloudseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cloudseg {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

std::optional<double> SegmentationMetrics::get(std::size_t i) const {
  switch (i) {
    case 0: return ji;
    case 1: return pr;
    case 2: return re;
    case 3: return spe;
    case 4: return oa;
  }
  fail(ErrorKind::Argument, "metric index out of range");
}

ConfusionCounts confusion(const CloudMask& pred, const CloudMask& gt) {
  require(pred.same_shape(gt), ErrorKind::Argument, "confusion: prediction and GT shapes differ");
  std::array<std::uint64_t, 4> bins{};  // index = 2*pred + gt
  for (std::size_t i = 0; i < pred.values.size(); ++i) ++bins[2 * (pred.values[i] != 0) + (gt.values[i] != 0)];
  return {bins[3], bins[2], bins[1], bins[0]};
}

SegmentationMetrics metrics_from_confusion(const ConfusionCounts& c) {
  auto ratio = [](std::uint64_t num, std::uint64_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  return {ratio(c.tp, c.tp + c.fp + c.fn), ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn),
          ratio(c.tn, c.tn + c.fp), ratio(c.tp + c.tn, c.total())};
}

json to_json(const SegmentationMetrics& m) {
  json j;
  json undefined = json::array();
  for (std::size_t i = 0; i < SegmentationMetrics::kNames.size(); ++i) {
    auto v = m.get(i);
    if (v) {
      j[SegmentationMetrics::kNames[i]] = *v;
    } else {
      j[SegmentationMetrics::kNames[i]] = nullptr;
      undefined.push_back(SegmentationMetrics::kNames[i]);
    }
  }
  j["undefined"] = undefined;
  return j;
}

double median_of_sorted(std::span<const double> s) {
  require(!s.empty(), ErrorKind::Argument, "median of empty set");
  const std::size_t n = s.size();
  return n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
}

TukeySummary tukey_summary(std::span<const double> values) {
  require(!values.empty(), ErrorKind::Argument, "tukey summary of empty set");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  TukeySummary t;
  t.median = median_of_sorted(v);
  if (n == 1) {
    t.q1 = t.q3 = v[0];
  } else {
    const std::size_t half = n / 2;
    t.q1 = median_of_sorted(std::span<const double>(v.data(), half));
    t.q3 = median_of_sorted(std::span<const double>(v.data() + (n - half), half));
  }
  const double iqr = t.q3 - t.q1;
  const double lo = t.q1 - 1.5 * iqr, hi = t.q3 + 1.5 * iqr;
  t.whisker_lo = t.q1;
  t.whisker_hi = t.q3;
  bool have_lo = false, have_hi = false;
  for (double x : v) {
    if (x < lo || x > hi) {
      t.outliers.push_back(x);
      continue;
    }
    if (!have_lo) {
      t.whisker_lo = x;
      have_lo = true;
    }
    t.whisker_hi = x;
    have_hi = true;
  }
  if (!have_hi) t.whisker_hi = t.q3;
  return t;
}

json to_json(const TukeySummary& t) {
  return {{"q1", t.q1},
          {"median", t.median},
          {"q3", t.q3},
          {"whisker_lo", t.whisker_lo},
          {"whisker_hi", t.whisker_hi},
          {"outliers", t.outliers}};
}

std::vector<double> signed_ranks(std::span<const double> d) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] != 0.0) idx.push_back(i);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<double> ranks(idx.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && std::abs(d[idx[j + 1]]) == std::abs(d[idx[i]])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[k] = d[idx[k]] > 0 ? avg : -avg;
    i = j + 1;
  }
  return ranks;
}

namespace {

double w_plus_of(std::span<const double> ranks) {
  double w = 0.0;
  for (double r : ranks)
    if (r > 0) w += r;
  return w;
}

}  // namespace

double wilcoxon_exact_p(std::span<const double> differences) {
  const auto ranks = signed_ranks(differences);
  require(!ranks.empty(), ErrorKind::Argument, "exact Wilcoxon needs nonzero differences");
  // Doubled average ranks are integers; count sign assignments per doubled rank sum.
  std::vector<int> r2;
  int total = 0;
  int observed = 0;
  for (double r : ranks) {
    const int v = static_cast<int>(std::lround(2.0 * std::abs(r)));
    r2.push_back(v);
    total += v;
    if (r > 0) observed += v;
  }
  std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
  counts[0] = 1.0;
  int reach = 0;
  for (int v : r2) {
    for (int s = reach; s >= 0; --s)
      if (counts[s] != 0.0) counts[s + v] += counts[s];
    reach += v;
  }
  const double all = std::ldexp(1.0, static_cast<int>(r2.size()));
  double le = 0.0, ge = 0.0;
  for (int s = 0; s <= total; ++s) {
    if (s <= observed) le += counts[s];
    if (s >= observed) ge += counts[s];
  }
  return std::min(1.0, 2.0 * std::min(le, ge) / all);
}

double wilcoxon_normal_p(std::span<const double> differences) {
  const auto ranks = signed_ranks(differences);
  require(!ranks.empty(), ErrorKind::Argument, "normal Wilcoxon needs nonzero differences");
  const double n = static_cast<double>(ranks.size());
  const double mean = n * (n + 1) / 4.0;
  double tie_term = 0.0;
  std::vector<double> mags;
  for (double r : ranks) mags.push_back(std::abs(r));
  std::sort(mags.begin(), mags.end());
  for (std::size_t i = 0; i < mags.size();) {
    std::size_t j = i;
    while (j < mags.size() && mags[j] == mags[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0;
  if (var <= 0.0) return 1.0;
  const double w = w_plus_of(ranks);
  double diff = w - mean;
  if (diff > 0)
    diff = std::max(0.0, diff - 0.5);
  else if (diff < 0)
    diff = std::min(0.0, diff + 0.5);
  const double z = diff / std::sqrt(var);
  return std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
}

WilcoxonResult wilcoxon_two_tailed(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::Argument, "Wilcoxon: paired samples differ in length");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  WilcoxonResult r;
  const auto ranks = signed_ranks(d);
  r.n = ranks.size();
  if (r.n == 0) {
    r.degenerate = true;
    r.p_value = 1.0;
    return r;
  }
  require(r.n >= 5, ErrorKind::Argument,
          "Wilcoxon needs at least 5 nonzero differences, got " + std::to_string(r.n));
  r.w_plus = w_plus_of(ranks);
  r.exact = r.n <= 20;
  r.p_value = r.exact ? wilcoxon_exact_p(d) : wilcoxon_normal_p(d);
  return r;
}

json to_json(const WilcoxonResult& w) {
  return {{"w_plus", w.w_plus},
          {"p_value", w.p_value},
          {"n", w.n},
          {"exact", w.exact},
          {"degenerate", w.degenerate},
          {"significant_at_0_05", !w.degenerate && w.p_value < 0.05}};
}

std::map<std::string, MetricDistribution> summarize_metrics(std::span<const SegmentationMetrics> per_patch) {
  std::map<std::string, MetricDistribution> out;
  for (std::size_t k = 0; k < SegmentationMetrics::kNames.size(); ++k) {
    MetricDistribution d;
    std::vector<double> vals;
    for (const auto& m : per_patch) {
      if (auto v = m.get(k))
        vals.push_back(*v);
      else
        ++d.undefined;
    }
    d.defined = vals.size();
    if (!vals.empty()) {
      d.mean = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
      d.tukey = tukey_summary(vals);
    }
    out[SegmentationMetrics::kNames[k]] = std::move(d);
  }
  return out;
}

json to_json(const MetricDistribution& d) {
  json j = {{"defined", d.defined}, {"undefined", d.undefined}, {"mean", nullptr}, {"tukey", nullptr}};
  if (d.mean) j["mean"] = *d.mean;
  if (d.tukey) j["tukey"] = to_json(*d.tukey);
  return j;
}

MosChoice parse_mos_choice(const std::string& raw) {
  std::string s;
  for (char c : raw)
    if (!std::isspace(static_cast<unsigned char>(c))) s += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (s == "A") return MosChoice::A;
  if (s == "B") return MosChoice::B;
  if (s == "BOTH") return MosChoice::Both;
  if (s == "NONE") return MosChoice::None;
  fail(ErrorKind::Argument, "unknown MOS choice '" + raw + "'");
}

MosTable mos_aggregate(std::span<const MosResponse> responses, const std::map<std::string, JiPair>& ji_table) {
  std::map<std::string, std::array<double, 4>> counts;
  for (const auto& r : responses) {
    require(ji_table.count(r.image_id) > 0, ErrorKind::Consistency, "MOS response for unknown image " + r.image_id);
    ++counts[r.image_id][static_cast<int>(r.choice)];
  }
  MosTable t;
  for (const auto& [id, ji] : ji_table) t.delta[id] = ji.ji_b - ji.ji_a;

  auto make_row = [&](const char* name, auto include) {
    MosRow row;
    row.group = name;
    double ji_a = 0, ji_b = 0;
    std::array<double, 4> pct{};
    for (const auto& [id, ji] : ji_table) {
      auto it = counts.find(id);
      if (!include(ji) || it == counts.end()) continue;
      const auto& c = it->second;
      const double total = c[0] + c[1] + c[2] + c[3];
      for (int k = 0; k < 4; ++k) pct[k] += 100.0 * c[k] / total;
      ji_a += ji.ji_a;
      ji_b += ji.ji_b;
      ++row.n_images;
    }
    if (row.n_images == 0) return;
    const double n = static_cast<double>(row.n_images);
    row.pct_a = pct[0] / n;
    row.pct_b = pct[1] / n;
    row.pct_both = pct[2] / n;
    row.pct_none = pct[3] / n;
    row.avg_ji_a = ji_a / n;
    row.avg_ji_b = ji_b / n;
    t.rows.push_back(row);
  };
  make_row(kMosGroupA, [](const JiPair& j) { return j.ji_a > j.ji_b; });
  make_row(kMosGroupB, [](const JiPair& j) { return j.ji_b > j.ji_a; });
  make_row(kMosGroupAll, [](const JiPair&) { return true; });
  return t;
}

namespace {

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

}  // namespace

std::vector<MosResponse> parse_mos_responses_csv(const std::string& text) {
  auto rows = parse_csv(text);
  std::vector<MosResponse> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i].size() == 2, ErrorKind::Format, "responses CSV line " + std::to_string(i + 1) + ": want 2 fields");
    if (i == 0 && trim(rows[i][0]) == "image_id") continue;
    out.push_back({trim(rows[i][0]), parse_mos_choice(rows[i][1])});
  }
  return out;
}

std::map<std::string, JiPair> parse_ji_table_csv(const std::string& text) {
  auto rows = parse_csv(text);
  std::map<std::string, JiPair> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i].size() == 3, ErrorKind::Format, "JI table CSV line " + std::to_string(i + 1) + ": want 3 fields");
    if (i == 0 && trim(rows[i][0]) == "image_id") continue;
    try {
      out[trim(rows[i][0])] = {std::stod(rows[i][1]), std::stod(rows[i][2])};
    } catch (const std::exception&) {
      fail(ErrorKind::Format, "JI table CSV line " + std::to_string(i + 1) + ": bad number");
    }
  }
  return out;
}

std::string mos_table_csv(const MosTable& t) {
  std::ostringstream out;
  out << "images,n_images,mask_a_pct,mask_a_avg_ji,mask_b_pct,mask_b_avg_ji,both_pct,none_pct\n";
  char buf[256];
  for (const auto& r : t.rows) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.2f,%.3f,%.2f,%.3f,%.2f,%.2f\n", r.group.c_str(), r.n_images, r.pct_a,
                  r.avg_ji_a, r.pct_b, r.avg_ji_b, r.pct_both, r.pct_none);
    out << buf;
  }
  return out.str();
}

}  // namespace cloudseg
