#pragma once

// Synthetic in-situ XRD charge/discharge datasets.
//
// Each reflection is a pseudo-Voigt line whose centre follows Bragg's law for
// a d-spacing that drifts linearly with state of charge, with an extra offset
// on the discharge branch (hysteresis) and extra width at 1.0 C.

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace xrdattn::synth {

inline constexpr double kCuKalpha1 = 1.5406;  // Angstrom

enum class Branch { Charge, Discharge };

/// Four-way label: branch x half of the sweep (in time order).
enum class Mode : int { Charge1st = 0, Charge2nd = 1, Discharge1st = 2, Discharge2nd = 3 };
inline constexpr std::size_t kModeCount = 4;

/// 0.2 C is encoded as 0 and 1.0 C as 1 everywhere (files, one-hots).
enum class Rate : int { Slow = 0, Normal = 1 };
inline constexpr std::size_t kRateCount = 2;

double c_rate(Rate r);
/// Accepts 0.2 or 1.0 (within 1e-9); throws DomainError otherwise.
Rate rate_from_c(double c);
std::string rate_label(Rate r);  // "0.2C" / "1.0C"
std::string mode_label(Mode m);

Mode mode_for(double soc, Branch branch);
Branch branch_of(Mode m);

struct PeakSpec {
  std::string phase_label;
  double d0 = 1.0;                     // Angstrom
  double amplitude = 1.0;              // peak height, background units
  double fwhm0 = 0.1;                  // degrees 2-theta
  double eta = 0.5;                    // Lorentzian fraction
  double soc_shift_coeff = 0.0;        // d change per unit soc, Angstrom
  double hysteresis_offset = 0.0;      // d change on the discharge branch, Angstrom
  double rate_broadening_coeff = 0.0;  // extra FWHM at 1.0 C, degrees

  void validate() const;
  double fwhm_at(Rate rate) const;
};

void to_json(nlohmann::json& j, const PeakSpec& p);
void from_json(const nlohmann::json& j, PeakSpec& p);

/// NMC(003), C(002) and Al(111) with textbook d-spacings.
std::vector<PeakSpec> default_peaks();

struct Grid {
  double lo = 15.0;
  double hi = 40.0;
  std::size_t n = 1400;

  double step() const { return (hi - lo) / static_cast<double>(n - 1); }
  double at(std::size_t i) const;
  std::vector<double> points() const;
  void validate() const;
};

struct CellProtocol {
  double v_min = 2.6;
  double v_max = 4.2;
  Rate rate = Rate::Normal;
  std::size_t n_samples = 4000;
  double noise_scale = 0.01;
  std::uint64_t seed = 42;

  void validate() const;
};

/// Everything about the simulated instrument and cell that is not per-run.
struct GeneratorConfig {
  double wavelength = kCuKalpha1;
  Grid grid;
  std::vector<PeakSpec> peaks = default_peaks();
  /// Peak centres must stay this far (degrees) inside the grid.
  double guard_band = 0.5;
  /// Photon counts per unit height.
  double counts_scale = 1.0e4;
  /// Quadratic background c0 + c1 u + c2 u^2 over u in [0, 1] across the grid.
  std::array<double, 3> background{0.05, -0.02, 0.015};
  /// Open-circuit curve shape: a * saturating rise (scale tau) + (1 - a) * linear.
  double curve_rise_weight = 0.6;
  double curve_rise_scale = 0.06;
  /// Charge/discharge voltage gap at 1.0 C as a fraction of (v_max - v_min);
  /// scales linearly with the C-rate.
  double overpotential_fraction = 0.04;

  void validate() const;
};

void to_json(nlohmann::json& j, const GeneratorConfig& g);
void from_json(const nlohmann::json& j, GeneratorConfig& g);

struct CellState {
  double soc = 0.0;
  Branch branch = Branch::Charge;
  Rate rate = Rate::Normal;
};

struct SampleRecord {
  std::shared_ptr<const std::vector<double>> two_theta;
  std::vector<double> intensity;
  double voltage = 0.0;
  Mode mode = Mode::Charge1st;
  Rate rate = Rate::Normal;
  double soc = 0.0;
  double t = 0.0;  // hours since the start of the protocol

  Branch branch() const { return branch_of(mode); }
};

/// 2-theta (degrees) from Bragg's law; DomainError when d <= lambda / 2.
double bragg_angle(double d, double lambda);

/// Unit-height pseudo-Voigt: eta * Lorentzian + (1 - eta) * Gaussian, same FWHM.
double pseudo_voigt(double x, double center, double fwhm, double eta);

/// d-spacing of a reflection at the given state of charge and branch.
double lattice_trajectory(const PeakSpec& peak, double soc, Branch branch);

/// Cell voltage; increasing in soc, charge above discharge, within [v_min, v_max].
double voltage_curve(double soc, Branch branch, Rate rate, const CellProtocol& protocol,
                     const GeneratorConfig& config);

/// Peak centre in degrees for a state; DomainError outside the guard band.
double peak_center(const PeakSpec& peak, const CellState& state, const GeneratorConfig& config);

/// Counts on the configured grid. Same rng state and arguments give identical output.
std::vector<double> render_pattern(const CellState& state, double noise_scale, std::mt19937_64& rng,
                                   const GeneratorConfig& config);

/// Sweeps soc 0 -> 1 on charge then 1 -> 0 on discharge with midpoint sampling.
/// Records are rendered in parallel shards; each record has its own seed, so
/// the output does not depend on the worker count.
std::vector<SampleRecord> generate_dataset(const CellProtocol& protocol, const GeneratorConfig& config);

std::array<std::size_t, kModeCount> mode_counts(const std::vector<SampleRecord>& records);

}  // namespace xrdattn::synth
