#include "xrdattn/preproc.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

#include "xrdattn/dataset_io.hpp"
#include "xrdattn/errors.hpp"

namespace xrdattn::preproc {

std::size_t mode_class_count(ModeScheme scheme) { return scheme == ModeScheme::FourClass ? 4 : 2; }

std::size_t mode_class(synth::Mode mode, ModeScheme scheme) {
  if (scheme == ModeScheme::FourClass) return static_cast<std::size_t>(mode);
  return synth::branch_of(mode) == synth::Branch::Charge ? 0 : 1;
}

std::vector<double> minmax_standardize(std::span<const double> v) {
  if (v.empty()) throw DegenerateInput("cannot standardize an empty vector");
  auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  return minmax_standardize(v, *mn, *mx);
}

std::vector<double> minmax_standardize(std::span<const double> v, double lo, double hi) {
  if (v.empty()) throw DegenerateInput("cannot standardize an empty vector");
  if (!(hi > lo)) throw DegenerateInput("constant spectrum: max equals min");
  const double range = hi - lo;
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - lo) / range;
  return out;
}

NaturalCubicSpline::NaturalCubicSpline(std::span<const double> y) : y_(y.begin(), y.end()), m_(y.size(), 0.0) {
  const std::size_t n = y_.size();
  if (n < 2) throw LengthError("a spline needs at least two knots");
  if (n == 2) return;
  // Unit spacing: M[i-1] + 4 M[i] + M[i+1] = 6 (y[i+1] - 2 y[i] + y[i-1]),
  // with M[0] = M[n-1] = 0. Thomas algorithm on the interior unknowns.
  const std::size_t k = n - 2;
  std::vector<double> c(k), d(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double rhs = 6.0 * (y_[i + 2] - 2.0 * y_[i + 1] + y_[i]);
    if (i == 0) {
      c[i] = 1.0 / 4.0;
      d[i] = rhs / 4.0;
    } else {
      const double denom = 4.0 - c[i - 1];
      c[i] = 1.0 / denom;
      d[i] = (rhs - d[i - 1]) / denom;
    }
  }
  m_[k] = d[k - 1];
  for (std::size_t i = k - 1; i-- > 0;) m_[i + 1] = d[i] - c[i] * m_[i + 2];
}

double NaturalCubicSpline::operator()(double x) const {
  const std::size_t n = y_.size();
  const double last = static_cast<double>(n - 1);
  x = std::clamp(x, 0.0, last);
  std::size_t seg = static_cast<std::size_t>(x);
  if (seg >= n - 1) seg = n - 2;
  const double t = x - static_cast<double>(seg);
  const double s = 1.0 - t;
  return s * y_[seg] + t * y_[seg + 1] + ((s * s * s - s) * m_[seg] + (t * t * t - t) * m_[seg + 1]) / 6.0;
}

std::vector<double> spline_resample(std::span<const double> v, std::size_t out_len, std::size_t source_len) {
  if (v.size() != source_len) {
    throw LengthError("spline_resample expects " + std::to_string(source_len) + " samples, got " +
                      std::to_string(v.size()));
  }
  if (out_len < 2) throw LengthError("spline_resample needs out_len >= 2");
  NaturalCubicSpline spline(v);
  std::vector<double> out(out_len);
  const double ratio = static_cast<double>(source_len - 1) / static_cast<double>(out_len - 1);
  for (std::size_t j = 0; j < out_len; ++j) {
    const double pos = j + 1 == out_len ? static_cast<double>(source_len - 1) : static_cast<double>(j) * ratio;
    out[j] = spline(pos);
  }
  return out;
}

std::optional<EncodedLabels> encode_labels(const synth::SampleRecord& record, const VoltageWindow& window,
                                           ModeScheme scheme) {
  if (!window.contains(record.voltage)) return std::nullopt;
  EncodedLabels e;
  e.voltage_norm = window.normalize(record.voltage);
  e.mode_onehot.assign(mode_class_count(scheme), 0.0);
  e.mode_onehot[mode_class(record.mode, scheme)] = 1.0;
  e.rate_onehot.assign(synth::kRateCount, 0.0);
  e.rate_onehot[static_cast<std::size_t>(record.rate)] = 1.0;
  return e;
}

std::pair<double, double> global_intensity_range(const std::vector<synth::SampleRecord>& records) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& r : records) {
    for (double v : r.intensity) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  return {lo, hi};
}

std::vector<ProcessedSample> process(const std::vector<synth::SampleRecord>& records,
                                     const PreprocessOptions& options) {
  if (!(options.window.lo < options.window.hi)) throw ConfigError("voltage window needs lo < hi");
  std::pair<double, double> range{0.0, 1.0};
  if (options.standardize == StandardizeMode::Global) {
    range = options.global_range ? *options.global_range : global_intensity_range(records);
  }
  std::vector<ProcessedSample> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    auto labels = encode_labels(r, options.window, options.mode_scheme);
    if (!labels) continue;
    ProcessedSample s;
    if (options.standardize == StandardizeMode::PerPattern) {
      // Standardize, resample, then pin [0, 1] again: the spline can overshoot
      // slightly around sharp peaks.
      auto resampled = spline_resample(minmax_standardize(r.intensity), options.out_len, options.source_len);
      s.x = minmax_standardize(resampled);
    } else {
      s.x = spline_resample(minmax_standardize(r.intensity, range.first, range.second), options.out_len,
                            options.source_len);
    }
    s.voltage_norm = labels->voltage_norm;
    s.voltage_raw = r.voltage;
    s.mode_onehot = std::move(labels->mode_onehot);
    s.rate_onehot = std::move(labels->rate_onehot);
    s.mode_class = mode_class(r.mode, options.mode_scheme);
    s.rate_class = static_cast<std::size_t>(r.rate);
    s.soc = r.soc;
    s.t = r.t;
    s.source_index = i;
    out.push_back(std::move(s));
  }
  return out;
}

Split split_half(std::size_t n, std::uint64_t seed) {
  if (n < 2) throw LengthError("split_half needs at least two samples");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  // Fisher-Yates with explicit modulo draws so the permutation does not
  // depend on the standard library's distribution implementation.
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(idx[i], idx[j]);
  }
  Split s;
  const std::size_t half = n / 2;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(half));
  s.validation.assign(idx.begin() + static_cast<std::ptrdiff_t>(half), idx.end());
  return s;
}

void dump_processed_csv(std::ostream& os, const std::vector<ProcessedSample>& samples) {
  const std::size_t n = samples.empty() ? 0 : samples.front().x.size();
  os << "voltage_norm,voltage,mode,rate";
  for (std::size_t i = 0; i < n; ++i) os << ",x" << i;
  os << '\n';
  for (const auto& s : samples) {
    os << synth::format_double(s.voltage_norm) << ',' << synth::format_double(s.voltage_raw) << ','
       << s.mode_class << ',' << s.rate_class;
    for (double v : s.x) os << ',' << synth::format_double(v);
    os << '\n';
  }
}

}  // namespace xrdattn::preproc
