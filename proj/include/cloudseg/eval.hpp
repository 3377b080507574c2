#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cloudseg/json_util.hpp"
#include "cloudseg/raster.hpp"

namespace cloudseg {

// Cloud is the positive class.
struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// Ratios with a zero denominator are std::nullopt ("undefined").
struct SegmentationMetrics {
  std::optional<double> ji;
  std::optional<double> pr;
  std::optional<double> re;
  std::optional<double> spe;
  std::optional<double> oa;

  static constexpr std::array<const char*, 5> kNames = {"ji", "pr", "re", "spe", "oa"};
  std::optional<double> get(std::size_t i) const;
};

ConfusionCounts confusion(const CloudMask& pred, const CloudMask& gt);
SegmentationMetrics metrics_from_confusion(const ConfusionCounts& c);

json to_json(const SegmentationMetrics& m);

struct TukeySummary {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double whisker_lo = 0.0;
  double whisker_hi = 0.0;
  std::vector<double> outliers;
};

double median_of_sorted(std::span<const double> sorted);

// Quartiles are Tukey hinges (medians of the lower/upper halves, median excluded for
// odd counts); whiskers reach the most extreme points inside the 1.5 IQR fences.
TukeySummary tukey_summary(std::span<const double> values);
json to_json(const TukeySummary& t);

struct WilcoxonResult {
  double w_plus = 0.0;       // sum of ranks of positive differences a - b
  double p_value = 1.0;      // two-tailed
  std::size_t n = 0;         // nonzero differences
  bool exact = false;
  bool degenerate = false;   // every difference was zero
};

// Average ranks of |d| over nonzero differences; zeros are dropped.
std::vector<double> signed_ranks(std::span<const double> differences);

double wilcoxon_exact_p(std::span<const double> differences);
double wilcoxon_normal_p(std::span<const double> differences);

// Exact for n <= 20 nonzero differences, tie-corrected normal approximation with
// continuity correction above.
WilcoxonResult wilcoxon_two_tailed(std::span<const double> a, std::span<const double> b);
json to_json(const WilcoxonResult& w);

struct MetricDistribution {
  std::size_t defined = 0;
  std::size_t undefined = 0;
  std::optional<double> mean;
  std::optional<TukeySummary> tukey;
};

// One distribution per metric name; undefined values are counted, not summarized.
std::map<std::string, MetricDistribution> summarize_metrics(std::span<const SegmentationMetrics> per_patch);
json to_json(const MetricDistribution& d);

// --- Mean opinion score study -------------------------------------------------

enum class MosChoice { A, B, Both, None };

MosChoice parse_mos_choice(const std::string& s);

struct MosResponse {
  std::string image_id;
  MosChoice choice = MosChoice::None;
};

struct JiPair {
  double ji_a = 0.0;
  double ji_b = 0.0;
};

struct MosRow {
  std::string group;
  std::size_t n_images = 0;
  double pct_a = 0.0;
  double pct_b = 0.0;
  double pct_both = 0.0;
  double pct_none = 0.0;
  double avg_ji_a = 0.0;
  double avg_ji_b = 0.0;
};

struct MosTable {
  std::vector<MosRow> rows;             // A-better, B-better, all (empty groups omitted)
  std::map<std::string, double> delta;  // ji_b - ji_a per image
};

inline constexpr const char* kMosGroupA = "Higher JI for Mask A";
inline constexpr const char* kMosGroupB = "Higher JI for Mask B";
inline constexpr const char* kMosGroupAll = "All images";

// Per-image percentages first, then the unweighted mean across the group's images.
MosTable mos_aggregate(std::span<const MosResponse> responses, const std::map<std::string, JiPair>& ji_table);

std::vector<MosResponse> parse_mos_responses_csv(const std::string& text);
std::map<std::string, JiPair> parse_ji_table_csv(const std::string& text);
std::string mos_table_csv(const MosTable& t);

}  // namespace cloudseg
