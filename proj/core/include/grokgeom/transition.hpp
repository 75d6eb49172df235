#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace grokgeom {

struct OnsetRule {
  std::size_t baseline_n = 3;
  double multiplier = 10.0;
  double abs_floor = 20.0;
};

struct OnsetDetection {
  std::optional<std::int64_t> onset_step;
  double baseline = 0.0;   // median of the first baseline_n values
  double threshold = 0.0;  // max(multiplier * baseline, abs_floor)
};

/// First step whose value exceeds max(mult * baseline, floor). Non-finite
/// values never trigger. Throws std::invalid_argument when fewer than
/// baseline_n values are given or the spans differ in length.
OnsetDetection detect_onset(std::span<const std::int64_t> steps, std::span<const double> values,
                            const OnsetRule& rule = {});

struct OnsetReport {
  std::string label;  // grouping key, usually the operation tag
  std::optional<std::int64_t> onset_step;
  std::optional<std::int64_t> grok_step;
  double baseline = 0.0;

  bool has_lead() const { return onset_step && grok_step; }
  std::int64_t lead_time() const { return *grok_step - *onset_step; }
  double lead_fraction() const { return double(lead_time()) / double(*grok_step); }
};

struct GroupLeadStats {
  std::size_t n = 0;
  double mean_lead = 0.0;
  double mean_grok_step = 0.0;
  double mean_lead_fraction = 0.0;
};

struct LeadStats {
  double mean_lead = 0.0;
  std::size_t n_with_lead = 0;     // onset and grok both present
  std::size_t n_positive = 0;      // onset strictly before grok
  std::size_t n_no_grok = 0;
  std::size_t n_onset_no_grok = 0; // onset without generalization
  std::size_t n_grok_no_onset = 0;
  std::vector<std::int64_t> leads;
  std::map<std::string, GroupLeadStats> by_label;
};

/// Aggregates lead times over runs with both markers; other runs only enter
/// the tallies.
LeadStats lead_stats(std::span<const OnsetReport> runs);

/// One-sided P(X >= n_positive) for X ~ Binomial(n, 1/2).
double sign_test(std::size_t n_positive, std::size_t n);
/// Same, counting strictly positive leads.
double sign_test(std::span<const std::int64_t> leads);

struct PowerLawFit {
  double alpha = 0.0;
  double alpha_stderr = 0.0;
  double intercept = 0.0;  // ln c in dt = c * t^alpha
  double r_squared = 0.0;
  std::size_t n_points = 0;
  std::size_t n_excluded = 0;  // points with a non-positive coordinate
};

/// OLS of ln(dt) on ln(t). Throws std::invalid_argument with fewer than 3
/// usable points or when all t coincide.
PowerLawFit power_law_fit(std::span<const std::pair<double, double>> points);

}  // namespace grokgeom
