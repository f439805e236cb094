#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "xrdattn/synthcell.hpp"

namespace xrdattn::preproc {

/// Closed interval of cell voltages kept for training; outside is skipped.
struct VoltageWindow {
  double lo = 3.6;
  double hi = 4.2;
  double normalize(double v) const { return (v - lo) / (hi - lo); }
  double denormalize(double n) const { return lo + n * (hi - lo); }
  bool contains(double v) const { return v >= lo && v <= hi; }
};

enum class StandardizeMode { PerPattern, Global };
/// FourClass: charge/discharge x first/second half. TwoClass: charge vs discharge.
enum class ModeScheme { FourClass, TwoClass };

std::size_t mode_class_count(ModeScheme scheme);
std::size_t mode_class(synth::Mode mode, ModeScheme scheme);

/// (v - min) / (max - min); DegenerateInput when the vector is constant or empty.
std::vector<double> minmax_standardize(std::span<const double> v);
/// Same map with a caller-supplied range (global standardization).
std::vector<double> minmax_standardize(std::span<const double> v, double lo, double hi);

/// Natural cubic spline through uniformly spaced knots.
class NaturalCubicSpline {
 public:
  /// Knots at x = 0, 1, ..., n-1 (index space).
  explicit NaturalCubicSpline(std::span<const double> y);
  /// x in [0, n-1]; values outside are clamped to the end segments' range.
  double operator()(double x) const;
  std::size_t knots() const { return y_.size(); }

 private:
  std::vector<double> y_;
  std::vector<double> m_;  // second derivatives at the knots
};

/// Resamples `source_len` uniform samples to `out_len` uniform samples over the
/// same interval. Endpoints are reproduced exactly. LengthError when
/// v.size() != source_len.
std::vector<double> spline_resample(std::span<const double> v, std::size_t out_len = 256,
                                    std::size_t source_len = 1400);

struct EncodedLabels {
  double voltage_norm = 0.0;
  std::vector<double> mode_onehot;
  std::vector<double> rate_onehot;
};

/// nullopt (skip) when the record's voltage lies outside the window.
std::optional<EncodedLabels> encode_labels(const synth::SampleRecord& record, const VoltageWindow& window,
                                           ModeScheme scheme = ModeScheme::FourClass);

struct ProcessedSample {
  std::vector<double> x;  // standardized, resampled pattern
  double voltage_norm = 0.0;
  double voltage_raw = 0.0;
  std::vector<double> mode_onehot;
  std::vector<double> rate_onehot;
  std::size_t mode_class = 0;
  std::size_t rate_class = 0;
  double soc = 0.0;
  double t = 0.0;
  std::size_t source_index = 0;  // position in the record list it came from
};

struct PreprocessOptions {
  std::size_t out_len = 256;
  std::size_t source_len = 1400;
  VoltageWindow window;
  StandardizeMode standardize = StandardizeMode::PerPattern;
  ModeScheme mode_scheme = ModeScheme::FourClass;
  /// Used when standardize == Global; computed from the records if unset.
  std::optional<std::pair<double, double>> global_range;
};

/// Smallest and largest intensity across all records.
std::pair<double, double> global_intensity_range(const std::vector<synth::SampleRecord>& records);

/// Filters by voltage window, standardizes, resamples and encodes labels.
std::vector<ProcessedSample> process(const std::vector<synth::SampleRecord>& records,
                                     const PreprocessOptions& options);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Seeded shuffle of 0..n-1; the first floor(n/2) go to training.
Split split_half(std::size_t n, std::uint64_t seed);

template <class T>
std::pair<std::vector<T>, std::vector<T>> split_half(const std::vector<T>& samples, std::uint64_t seed) {
  Split s = split_half(samples.size(), seed);
  std::pair<std::vector<T>, std::vector<T>> out;
  for (auto i : s.train) out.first.push_back(samples[i]);
  for (auto i : s.validation) out.second.push_back(samples[i]);
  return out;
}

/// One row per sample: voltage_norm,voltage,mode,rate,x0..x{n-1}.
void dump_processed_csv(std::ostream& os, const std::vector<ProcessedSample>& samples);

}  // namespace xrdattn::preproc
