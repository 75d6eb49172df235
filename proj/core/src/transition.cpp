#include "grokgeom/transition.hpp"

#include "grokgeom/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace grokgeom {

OnsetDetection detect_onset(std::span<const std::int64_t> steps, std::span<const double> values,
                            const OnsetRule& rule) {
  if (steps.size() != values.size()) throw std::invalid_argument("detect_onset: length mismatch");
  if (rule.baseline_n == 0 || values.size() < rule.baseline_n) {
    throw std::invalid_argument("detect_onset: not enough measurements for the baseline");
  }
  OnsetDetection d;
  d.baseline = median(std::vector<double>(values.begin(), values.begin() + std::ptrdiff_t(rule.baseline_n)));
  d.threshold = std::max(rule.multiplier * d.baseline, rule.abs_floor);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isfinite(values[i]) && values[i] > d.threshold) {
      d.onset_step = steps[i];
      break;
    }
  }
  return d;
}

LeadStats lead_stats(std::span<const OnsetReport> runs) {
  LeadStats s;
  std::map<std::string, GroupLeadStats> sums;
  for (const auto& r : runs) {
    if (!r.grok_step) {
      ++s.n_no_grok;
      if (r.onset_step) ++s.n_onset_no_grok;
      continue;
    }
    if (!r.onset_step) {
      ++s.n_grok_no_onset;
      continue;
    }
    const auto lead = r.lead_time();
    s.leads.push_back(lead);
    ++s.n_with_lead;
    if (lead > 0) ++s.n_positive;
    s.mean_lead += double(lead);
    auto& g = sums[r.label];
    ++g.n;
    g.mean_lead += double(lead);
    g.mean_grok_step += double(*r.grok_step);
    g.mean_lead_fraction += r.lead_fraction();
  }
  if (s.n_with_lead) s.mean_lead /= double(s.n_with_lead);
  for (auto& [label, g] : sums) {
    g.mean_lead /= double(g.n);
    g.mean_grok_step /= double(g.n);
    g.mean_lead_fraction /= double(g.n);
  }
  s.by_label = std::move(sums);
  return s;
}

double sign_test(std::size_t n_positive, std::size_t n) {
  if (n == 0) throw std::invalid_argument("sign_test: n must be >= 1");
  if (n_positive > n) throw std::invalid_argument("sign_test: n_positive > n");
  if (n_positive == 0) return 1.0;
  if (n <= 1000) {
    // C(n, k) is built incrementally in doubles and scaled by 2^-n at the end;
    // exact whenever the coefficients are representable.
    double coeff = 1.0, tail = 0.0;
    std::vector<double> c(n + 1);
    for (std::size_t k = 0; k <= n; ++k) {
      c[k] = coeff;
      coeff = coeff * double(n - k) / double(k + 1);
    }
    for (std::size_t k = n; k + 1 > n_positive; --k) tail += c[k];
    return std::min(1.0, std::ldexp(tail, -int(n)));
  }
  double tail = 0.0;
  for (std::size_t k = n_positive; k <= n; ++k) {
    tail += std::exp(std::lgamma(double(n) + 1) - std::lgamma(double(k) + 1) - std::lgamma(double(n - k) + 1) -
                     double(n) * std::log(2.0));
  }
  return std::min(1.0, tail);
}

double sign_test(std::span<const std::int64_t> leads) {
  std::size_t pos = 0;
  for (auto l : leads) pos += l > 0;
  return sign_test(pos, leads.size());
}

PowerLawFit power_law_fit(std::span<const std::pair<double, double>> points) {
  PowerLawFit f;
  std::vector<double> x, y;
  for (const auto& [t, dt] : points) {
    if (t > 0.0 && dt > 0.0 && std::isfinite(t) && std::isfinite(dt)) {
      x.push_back(std::log(t));
      y.push_back(std::log(dt));
    } else {
      ++f.n_excluded;
    }
  }
  const std::size_t n = x.size();
  if (n < 3) throw std::invalid_argument("power_law_fit: need at least 3 positive points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= double(n);
  my /= double(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("power_law_fit: grok steps are all equal");
  f.n_points = n;
  f.alpha = sxy / sxx;
  f.intercept = my - f.alpha * mx;
  double ssr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - (f.intercept + f.alpha * x[i]);
    ssr += r * r;
  }
  f.alpha_stderr = n > 2 ? std::sqrt(ssr / double(n - 2) / sxx) : 0.0;
  f.r_squared = syy > 0.0 ? std::clamp(1.0 - ssr / syy, 0.0, 1.0) : 1.0;
  return f;
}

}  // namespace grokgeom
