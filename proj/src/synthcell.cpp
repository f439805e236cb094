#include "xrdattn/synthcell.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

#include "xrdattn/errors.hpp"
#include "xrdattn/runtime.hpp"

namespace xrdattn::synth {

double c_rate(Rate r) { return r == Rate::Normal ? 1.0 : 0.2; }

Rate rate_from_c(double c) {
  if (std::abs(c - 1.0) < 1e-9) return Rate::Normal;
  if (std::abs(c - 0.2) < 1e-9) return Rate::Slow;
  throw DomainError("C-rate must be 0.2 or 1.0, got " + std::to_string(c));
}

std::string rate_label(Rate r) { return r == Rate::Normal ? "1.0C" : "0.2C"; }

std::string mode_label(Mode m) {
  switch (m) {
    case Mode::Charge1st: return "charge-1st-half";
    case Mode::Charge2nd: return "charge-2nd-half";
    case Mode::Discharge1st: return "discharge-1st-half";
    case Mode::Discharge2nd: return "discharge-2nd-half";
  }
  return "?";
}

Mode mode_for(double soc, Branch branch) {
  if (branch == Branch::Charge) return soc < 0.5 ? Mode::Charge1st : Mode::Charge2nd;
  // Discharge runs from soc 1 down to 0, so its first half is the high-soc half.
  return soc > 0.5 ? Mode::Discharge1st : Mode::Discharge2nd;
}

Branch branch_of(Mode m) {
  return (m == Mode::Charge1st || m == Mode::Charge2nd) ? Branch::Charge : Branch::Discharge;
}

void PeakSpec::validate() const {
  if (!(d0 > 0.0)) throw DomainError(phase_label + ": d0 must be positive");
  if (!(fwhm0 > 0.0)) throw DomainError(phase_label + ": fwhm0 must be positive");
  if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError(phase_label + ": eta must lie in [0, 1]");
  if (!(amplitude > 0.0)) throw DomainError(phase_label + ": amplitude must be positive");
  if (rate_broadening_coeff < 0.0) throw DomainError(phase_label + ": rate broadening must be non-negative");
}

double PeakSpec::fwhm_at(Rate rate) const {
  return fwhm0 + (rate == Rate::Normal ? rate_broadening_coeff : 0.0);
}

void to_json(nlohmann::json& j, const PeakSpec& p) {
  j = nlohmann::json{{"phase_label", p.phase_label},
                     {"d0", p.d0},
                     {"amplitude", p.amplitude},
                     {"fwhm0", p.fwhm0},
                     {"eta", p.eta},
                     {"soc_shift_coeff", p.soc_shift_coeff},
                     {"hysteresis_offset", p.hysteresis_offset},
                     {"rate_broadening_coeff", p.rate_broadening_coeff}};
}

void from_json(const nlohmann::json& j, PeakSpec& p) {
  p.phase_label = j.at("phase_label").get<std::string>();
  p.d0 = j.at("d0").get<double>();
  p.amplitude = j.at("amplitude").get<double>();
  p.fwhm0 = j.at("fwhm0").get<double>();
  p.eta = j.at("eta").get<double>();
  p.soc_shift_coeff = j.value("soc_shift_coeff", 0.0);
  p.hysteresis_offset = j.value("hysteresis_offset", 0.0);
  p.rate_broadening_coeff = j.value("rate_broadening_coeff", 0.0);
}

std::vector<PeakSpec> default_peaks() {
  // The layered cathode's c axis expands on delithiation; graphite expands as
  // lithium enters the van der Waals gap. The Al foil does not move.
  return {
      {"NMC(003)", 4.73, 1.0, 0.12, 0.5, 0.06, 0.02, 0.03},
      {"C(002)", 3.354, 0.8, 0.15, 0.4, 0.15, -0.03, 0.25},
      {"Al(111)", 2.338, 0.6, 0.08, 0.3, 0.0, 0.0, 0.0},
  };
}

double Grid::at(std::size_t i) const {
  if (i + 1 == n) return hi;
  return lo + static_cast<double>(i) * step();
}

std::vector<double> Grid::points() const {
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = at(i);
  return p;
}

void Grid::validate() const {
  if (n < 2) throw DomainError("grid needs at least two points");
  if (!(lo < hi)) throw DomainError("grid must have lo < hi");
}

void CellProtocol::validate() const {
  if (!(v_min < v_max)) throw DomainError("protocol needs v_min < v_max");
  if (n_samples < 4) throw DomainError("protocol needs at least 4 samples (one per mode)");
  if (noise_scale < 0.0) throw DomainError("noise_scale must be non-negative");
}

void GeneratorConfig::validate() const {
  grid.validate();
  if (!(wavelength > 0.0)) throw DomainError("wavelength must be positive");
  if (peaks.empty()) throw DomainError("at least one peak is required");
  for (const auto& p : peaks) p.validate();
  if (guard_band < 0.0) throw DomainError("guard_band must be non-negative");
  if (!(counts_scale > 0.0)) throw DomainError("counts_scale must be positive");
  if (!(curve_rise_weight >= 0.0 && curve_rise_weight <= 1.0)) throw DomainError("curve_rise_weight in [0, 1]");
  if (!(curve_rise_scale > 0.0)) throw DomainError("curve_rise_scale must be positive");
  if (!(overpotential_fraction >= 0.0 && overpotential_fraction < 1.0)) {
    throw DomainError("overpotential_fraction must lie in [0, 1)");
  }
}

void to_json(nlohmann::json& j, const GeneratorConfig& g) {
  j = nlohmann::json{{"wavelength", g.wavelength},
                     {"grid", {{"lo", g.grid.lo}, {"hi", g.grid.hi}, {"n", g.grid.n}}},
                     {"peaks", g.peaks},
                     {"guard_band", g.guard_band},
                     {"counts_scale", g.counts_scale},
                     {"background", g.background},
                     {"curve_rise_weight", g.curve_rise_weight},
                     {"curve_rise_scale", g.curve_rise_scale},
                     {"overpotential_fraction", g.overpotential_fraction}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& g) {
  GeneratorConfig d;
  g.wavelength = j.value("wavelength", d.wavelength);
  if (j.contains("grid")) {
    const auto& gr = j.at("grid");
    g.grid.lo = gr.value("lo", d.grid.lo);
    g.grid.hi = gr.value("hi", d.grid.hi);
    g.grid.n = gr.value("n", d.grid.n);
  }
  g.peaks = j.contains("peaks") ? j.at("peaks").get<std::vector<PeakSpec>>() : d.peaks;
  g.guard_band = j.value("guard_band", d.guard_band);
  g.counts_scale = j.value("counts_scale", d.counts_scale);
  g.background = j.value("background", d.background);
  g.curve_rise_weight = j.value("curve_rise_weight", d.curve_rise_weight);
  g.curve_rise_scale = j.value("curve_rise_scale", d.curve_rise_scale);
  g.overpotential_fraction = j.value("overpotential_fraction", d.overpotential_fraction);
}

double bragg_angle(double d, double lambda) {
  if (!(lambda > 0.0)) throw DomainError("wavelength must be positive");
  if (!(d > lambda / 2.0)) {
    throw DomainError("no diffraction for d = " + std::to_string(d) + " A at lambda = " + std::to_string(lambda));
  }
  return 2.0 * std::asin(lambda / (2.0 * d)) * 180.0 / std::numbers::pi;
}

double pseudo_voigt(double x, double center, double fwhm, double eta) {
  if (!(fwhm > 0.0)) throw DomainError("pseudo_voigt: fwhm must be positive");
  if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("pseudo_voigt: eta must lie in [0, 1]");
  const double u = (x - center) / fwhm;
  const double lorentz = 1.0 / (1.0 + 4.0 * u * u);
  const double gauss = std::exp(-4.0 * std::numbers::ln2 * u * u);
  return eta * lorentz + (1.0 - eta) * gauss;
}

double lattice_trajectory(const PeakSpec& peak, double soc, Branch branch) {
  if (!(soc >= 0.0 && soc <= 1.0)) throw DomainError("soc must lie in [0, 1]");
  double d = peak.d0 + peak.soc_shift_coeff * soc;
  if (branch == Branch::Discharge) d += peak.hysteresis_offset;
  return d;
}

namespace {

// Normalized open-circuit shape f with f(0) = 0, f(1) = 1, f' > 0.
double ocv_shape(double soc, const GeneratorConfig& c) {
  const double a = c.curve_rise_weight;
  const double tau = c.curve_rise_scale;
  const double rise = -std::expm1(-soc / tau) / -std::expm1(-1.0 / tau);
  return a * rise + (1.0 - a) * soc;
}

std::uint64_t record_seed(std::uint64_t seed, Rate rate, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(rate), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(index) >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace

double voltage_curve(double soc, Branch branch, Rate rate, const CellProtocol& protocol,
                     const GeneratorConfig& config) {
  if (!(soc >= 0.0 && soc <= 1.0)) throw DomainError("soc must lie in [0, 1]");
  const double span = protocol.v_max - protocol.v_min;
  const double eta = config.overpotential_fraction * c_rate(rate);
  const double f = ocv_shape(soc, config);
  // Charge is lifted by the overpotential, discharge is pulled down; both
  // stay inside [v_min, v_max] with the anchors V_dis(0) = v_min, V_ch(1) = v_max.
  const double frac = branch == Branch::Charge ? eta + (1.0 - eta) * f : (1.0 - eta) * f;
  return std::clamp(protocol.v_min + span * frac, protocol.v_min, protocol.v_max);
}

double peak_center(const PeakSpec& peak, const CellState& state, const GeneratorConfig& config) {
  const double center = bragg_angle(lattice_trajectory(peak, state.soc, state.branch), config.wavelength);
  if (center < config.grid.lo + config.guard_band || center > config.grid.hi - config.guard_band) {
    throw DomainError(peak.phase_label + " centre " + std::to_string(center) + " deg falls outside the grid guard band");
  }
  return center;
}

std::vector<double> render_pattern(const CellState& state, double noise_scale, std::mt19937_64& rng,
                                   const GeneratorConfig& config) {
  if (config.peaks.empty()) throw DomainError("render_pattern needs at least one peak");
  const Grid& g = config.grid;
  std::vector<double> centers, widths;
  for (const auto& p : config.peaks) {
    centers.push_back(peak_center(p, state, config));
    widths.push_back(p.fwhm_at(state.rate));
  }
  std::vector<double> out(g.n);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < g.n; ++i) {
    const double x = g.at(i);
    const double u = (x - g.lo) / (g.hi - g.lo);
    double y = config.background[0] + config.background[1] * u + config.background[2] * u * u;
    for (std::size_t k = 0; k < config.peaks.size(); ++k) {
      const auto& p = config.peaks[k];
      y += p.amplitude * pseudo_voigt(x, centers[k], widths[k], p.eta);
    }
    y *= config.counts_scale;
    if (noise_scale > 0.0) y *= 1.0 + noise_scale * normal(rng);
    out[i] = std::max(0.0, y);
  }
  return out;
}

std::vector<SampleRecord> generate_dataset(const CellProtocol& protocol, const GeneratorConfig& config) {
  protocol.validate();
  config.validate();
  const std::size_t n = protocol.n_samples;
  const std::size_t n_charge = (n + 1) / 2;
  const std::size_t n_discharge = n - n_charge;
  const double rate_c = c_rate(protocol.rate);
  auto grid = std::make_shared<const std::vector<double>>(config.grid.points());

  std::vector<SampleRecord> records(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = records[i];
    Branch branch;
    if (i < n_charge) {
      branch = Branch::Charge;
      r.soc = (static_cast<double>(i) + 0.5) / static_cast<double>(n_charge);
      r.t = r.soc / rate_c;
    } else {
      branch = Branch::Discharge;
      const double progress = (static_cast<double>(i - n_charge) + 0.5) / static_cast<double>(n_discharge);
      r.soc = 1.0 - progress;
      r.t = (1.0 + progress) / rate_c;
    }
    r.two_theta = grid;
    r.mode = mode_for(r.soc, branch);
    r.rate = protocol.rate;
    r.voltage = voltage_curve(r.soc, branch, protocol.rate, protocol, config);
  }

  // Validate peak placement once up front so workers never throw.
  for (double soc : {0.0, 1.0}) {
    for (Branch b : {Branch::Charge, Branch::Discharge}) {
      for (const auto& p : config.peaks) peak_center(p, {soc, b, protocol.rate}, config);
    }
  }

  auto render_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto& r = records[i];
      std::mt19937_64 rng(record_seed(protocol.seed, protocol.rate, i));
      r.intensity = render_pattern({r.soc, r.branch(), r.rate}, protocol.noise_scale, rng, config);
    }
  };
  const std::size_t workers = std::min<std::size_t>(worker_count(), std::max<std::size_t>(1, n / 64));
  if (workers <= 1) {
    render_range(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t b = w * chunk, e = std::min(n, b + chunk);
      if (b < e) pool.emplace_back(render_range, b, e);
    }
    for (auto& t : pool) t.join();
  }
  return records;
}

std::array<std::size_t, kModeCount> mode_counts(const std::vector<SampleRecord>& records) {
  std::array<std::size_t, kModeCount> counts{};
  for (const auto& r : records) ++counts[static_cast<std::size_t>(r.mode)];
  return counts;
}

}  // namespace xrdattn::synth
