#pragma once

// Visualized Attention Weight: per-query maximum of the attention map,
// min-max normalized and laid over the resampled pattern.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xrdattn/model.hpp"
#include "xrdattn/preproc.hpp"
#include "xrdattn/synthcell.hpp"

namespace xrdattn::vaw {

/// Square row-major matrix; rows are queries, columns keys.
struct AttentionMap {
  std::size_t n = 0;
  std::vector<double> values;

  double at(std::size_t q, std::size_t k) const { return values[q * n + k]; }
  std::span<const double> row(std::size_t q) const { return {values.data() + q * n, n}; }
};

/// Eval-mode attention map for a single resampled pattern.
AttentionMap attention_map(model::Model& model, std::span<const double> x);

struct Vaw {
  std::vector<double> values;   // normalized to [0, 1]
  std::vector<double> row_max;  // before normalization
  bool degenerate = false;      // all row maxima equal; values are zeros
};

/// Max over keys for every query.
std::vector<double> row_maxima(const AttentionMap& a);

/// (m - min) / (max - min); zeros and the degenerate flag when max == min.
Vaw normalize_maxima(std::vector<double> row_max);

/// Same map with a fixed scale so panels can be compared; values are clamped.
Vaw normalize_maxima(std::vector<double> row_max, double lo, double hi);

Vaw reduce_vaw(const AttentionMap& a);

struct SampleMeta {
  double voltage = 0.0;
  std::size_t mode = 0;
  std::size_t rate = 0;
  std::optional<std::size_t> index;  // position in the processed dataset
  std::string label;                 // free text for panel titles
};

struct VawRecord {
  std::vector<double> two_theta;
  std::vector<double> intensity;
  std::vector<double> vaw;
  SampleMeta meta;
};

/// 2-theta positions of the resampled bins: the grid's range split into n points.
std::vector<double> resampled_axis(const synth::Grid& grid, std::size_t n = 256);

/// Bundles aligned vectors; LengthError when lengths differ.
VawRecord project(std::span<const double> vaw, std::span<const double> spectrum,
                  std::span<const double> two_theta, SampleMeta meta = {});

/// `two_theta,intensity,vaw` with 12 significant digits. Several records are
/// written back to back under one header.
void write_csv(std::ostream& os, const std::vector<VawRecord>& records);
/// Splits records where 2-theta stops increasing. FormatError with byte offset.
std::vector<VawRecord> read_csv(std::istream& is);

/// One panel per record: grayscale band per bin (1 black, 0 white) under the
/// spectrum polyline.
void write_svg(std::ostream& os, const std::vector<VawRecord>& records);

void emit_overlay(const std::vector<VawRecord>& records, const std::filesystem::path& csv_path,
                  const std::filesystem::path& svg_path);

/// Bins in [lo, hi] degrees.
struct Window {
  std::string name;
  double lo = 0.0;
  double hi = 0.0;
};

/// One window per generator peak covering the centre's full excursion over
/// soc, branch and rate, widened by twice the largest FWHM.
std::vector<Window> default_windows(const synth::GeneratorConfig& config);

inline constexpr double kRatioCap = 1.0e6;
inline const std::string kBackground = "background";

struct WindowStats {
  std::string name;
  std::size_t bins = 0;
  double mean = 0.0;
  double max = 0.0;
  double ratio = 0.0;  // mean / background mean
};

struct SaliencyReport {
  std::vector<WindowStats> windows;  // named windows, then background last
  double background_mean = 0.0;
  /// Background mean was zero while a window mean was not; those ratios hold kRatioCap.
  bool background_zero = false;

  const WindowStats& operator[](const std::string& name) const;
};

/// Background is every bin outside all windows. WindowError when a window
/// covers no bin of the axis or no background bin is left. When both means
/// are zero the ratio is 1.
SaliencyReport peak_saliency_report(std::span<const double> vaw, std::span<const double> two_theta,
                                    const std::vector<Window>& windows);

/// Mean of the per-sample normalized VAW over a dataset; degenerate maps are
/// skipped. Returns the mean and the number of samples used.
std::pair<std::vector<double>, std::size_t> mean_vaw(model::Model& model,
                                                     const std::vector<preproc::ProcessedSample>& samples,
                                                     std::size_t chunk = 64);

nlohmann::json report_json(const SaliencyReport& report);

}  // namespace xrdattn::vaw
