#include "xrdattn/vaw.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>

#include "xrdattn/errors.hpp"
#include "xrdattn/train.hpp"

namespace xrdattn::vaw {

namespace {

constexpr const char* kCsvHeader = "two_theta,intensity,vaw";
constexpr const char* kSvgVersion = "xrdattn-vaw-svg 1";

// Runs the model in eval mode over samples and hands every map to fn.
void for_each_map(model::Model& model, const std::vector<preproc::ProcessedSample>& samples, std::size_t chunk,
                  const std::function<void(std::size_t, const AttentionMap&)>& fn) {
  ad::NoGradGuard no_grad;
  std::vector<std::size_t> idx;
  AttentionMap map;
  for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
    const std::size_t end = std::min(samples.size(), begin + chunk);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    auto out = model.forward(train::make_input(samples, idx), ad::BnMode::Eval);
    const auto& w = out.attention.weights;
    const std::size_t n = w.dim(1);
    auto data = w.data();
    map.n = n;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      map.values.assign(data.begin() + static_cast<std::ptrdiff_t>(b * n * n),
                        data.begin() + static_cast<std::ptrdiff_t>((b + 1) * n * n));
      fn(idx[b], map);
    }
  }
}

std::string fmt12(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

double parse_field(std::string_view s, std::size_t offset) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("bad numeric field '" + std::string(s) + "'", offset);
  }
  return v;
}

}  // namespace

AttentionMap attention_map(model::Model& model, std::span<const double> x) {
  ad::NoGradGuard no_grad;
  auto input = ad::Tensor::from({1, x.size(), 1}, std::vector<double>(x.begin(), x.end()));
  auto out = model.forward(input, ad::BnMode::Eval);
  const auto& w = out.attention.weights;
  AttentionMap map;
  map.n = w.dim(1);
  map.values.assign(w.data().begin(), w.data().end());
  return map;
}

std::vector<double> row_maxima(const AttentionMap& a) {
  if (a.values.size() != a.n * a.n) throw ShapeError("attention map is not square");
  std::vector<double> out(a.n);
  for (std::size_t q = 0; q < a.n; ++q) {
    auto r = a.row(q);
    out[q] = *std::max_element(r.begin(), r.end());
  }
  return out;
}

Vaw normalize_maxima(std::vector<double> row_max) {
  if (row_max.empty()) throw LengthError("no row maxima to normalize");
  const auto [mn, mx] = std::ranges::minmax(row_max);
  return normalize_maxima(std::move(row_max), mn, mx);
}

Vaw normalize_maxima(std::vector<double> row_max, double lo, double hi) {
  Vaw v;
  v.values.assign(row_max.size(), 0.0);
  if (!(hi > lo)) {
    v.degenerate = true;
  } else {
    const double range = hi - lo;
    for (std::size_t i = 0; i < row_max.size(); ++i) v.values[i] = std::clamp((row_max[i] - lo) / range, 0.0, 1.0);
  }
  v.row_max = std::move(row_max);
  return v;
}

Vaw reduce_vaw(const AttentionMap& a) { return normalize_maxima(row_maxima(a)); }

std::vector<double> resampled_axis(const synth::Grid& grid, std::size_t n) {
  if (n < 2) throw LengthError("axis needs at least two points");
  std::vector<double> out(n);
  const double step = (grid.hi - grid.lo) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) out[i] = grid.lo + step * static_cast<double>(i);
  out.back() = grid.hi;
  return out;
}

VawRecord project(std::span<const double> vaw, std::span<const double> spectrum, std::span<const double> two_theta,
                  SampleMeta meta) {
  if (vaw.size() != spectrum.size() || vaw.size() != two_theta.size()) {
    throw LengthError("vaw, spectrum and axis lengths differ");
  }
  VawRecord r;
  r.two_theta.assign(two_theta.begin(), two_theta.end());
  r.intensity.assign(spectrum.begin(), spectrum.end());
  r.vaw.assign(vaw.begin(), vaw.end());
  r.meta = std::move(meta);
  return r;
}

void write_csv(std::ostream& os, const std::vector<VawRecord>& records) {
  os << kCsvHeader << '\n';
  for (const auto& r : records) {
    if (r.vaw.size() != r.intensity.size() || r.vaw.size() != r.two_theta.size()) {
      throw LengthError("record vectors differ in length");
    }
    for (std::size_t i = 0; i < r.vaw.size(); ++i) {
      os << fmt12(r.two_theta[i]) << ',' << fmt12(r.intensity[i]) << ',' << fmt12(r.vaw[i]) << '\n';
    }
  }
}

std::vector<VawRecord> read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader) throw FormatError("expected header " + std::string(kCsvHeader), 0);
  std::size_t offset = line.size() + 1;
  std::vector<VawRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    std::string_view sv(line);
    const auto c1 = sv.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : sv.find(',', c1 + 1);
    if (c2 == std::string_view::npos || sv.find(',', c2 + 1) != std::string_view::npos) {
      throw FormatError("expected three fields", offset);
    }
    const double tt = parse_field(sv.substr(0, c1), offset);
    const double in = parse_field(sv.substr(c1 + 1, c2 - c1 - 1), offset + c1 + 1);
    const double va = parse_field(sv.substr(c2 + 1), offset + c2 + 1);
    if (out.empty() || tt <= out.back().two_theta.back()) out.emplace_back();
    out.back().two_theta.push_back(tt);
    out.back().intensity.push_back(in);
    out.back().vaw.push_back(va);
    offset += line.size() + 1;
  }
  return out;
}

void write_svg(std::ostream& os, const std::vector<VawRecord>& records) {
  constexpr double width = 800.0, panel = 220.0, margin = 30.0, plot_h = panel - 2 * margin;
  const double height = panel * static_cast<double>(std::max<std::size_t>(records.size(), 1));
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
     << "<!-- " << kSvgVersion << " -->\n";
  const double plot_w = width - 2 * margin;
  for (std::size_t p = 0; p < records.size(); ++p) {
    const auto& r = records[p];
    const std::size_t n = r.vaw.size();
    if (n == 0) continue;
    const double top = panel * static_cast<double>(p) + margin;
    os << "<g id=\"panel" << p << "\">\n";
    if (!r.meta.label.empty()) {
      os << "<text x=\"" << margin << "\" y=\"" << top - 8 << "\" font-size=\"12\">" << r.meta.label << "</text>\n";
    }
    const double bw = plot_w / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int g = static_cast<int>(std::lround(255.0 * (1.0 - std::clamp(r.vaw[i], 0.0, 1.0))));
      os << "<rect x=\"" << fmt12(margin + bw * static_cast<double>(i)) << "\" y=\"" << top << "\" width=\""
         << fmt12(bw) << "\" height=\"" << plot_h << "\" fill=\"rgb(" << g << ',' << g << ',' << g << ")\"/>\n";
    }
    auto [mn, mx] = std::minmax_element(r.intensity.begin(), r.intensity.end());
    const double span = *mx > *mn ? *mx - *mn : 1.0;
    os << "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.2\" points=\"";
    for (std::size_t i = 0; i < n; ++i) {
      const double x = margin + bw * (static_cast<double>(i) + 0.5);
      const double y = top + plot_h * (1.0 - (r.intensity[i] - *mn) / span);
      os << fmt12(x) << ',' << fmt12(y) << (i + 1 < n ? " " : "");
    }
    os << "\"/>\n";
    os << "<text x=\"" << margin << "\" y=\"" << top + plot_h + 16 << "\" font-size=\"11\">" << fmt12(r.two_theta.front())
       << "</text>\n<text x=\"" << width - margin << "\" y=\"" << top + plot_h + 16
       << "\" font-size=\"11\" text-anchor=\"end\">" << fmt12(r.two_theta.back()) << "</text>\n";
    os << "</g>\n";
  }
  os << "</svg>\n";
}

void emit_overlay(const std::vector<VawRecord>& records, const std::filesystem::path& csv_path,
                  const std::filesystem::path& svg_path) {
  auto write = [&](const std::filesystem::path& path, auto&& body) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    body(os);
    os.flush();
    if (!os) throw IoError("write failed for " + path.string());
  };
  if (!csv_path.empty()) write(csv_path, [&](std::ostream& os) { write_csv(os, records); });
  if (!svg_path.empty()) write(svg_path, [&](std::ostream& os) { write_svg(os, records); });
}

std::vector<Window> default_windows(const synth::GeneratorConfig& config) {
  std::vector<Window> out;
  for (const auto& peak : config.peaks) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double soc : {0.0, 1.0}) {
      for (auto branch : {synth::Branch::Charge, synth::Branch::Discharge}) {
        const double c = synth::peak_center(peak, {soc, branch, synth::Rate::Normal}, config);
        lo = std::min(lo, c);
        hi = std::max(hi, c);
      }
    }
    const double fwhm = std::max(peak.fwhm_at(synth::Rate::Normal), peak.fwhm_at(synth::Rate::Slow));
    out.push_back({peak.phase_label, lo - 2.0 * fwhm, hi + 2.0 * fwhm});
  }
  return out;
}

const WindowStats& SaliencyReport::operator[](const std::string& name) const {
  for (const auto& w : windows) {
    if (w.name == name) return w;
  }
  throw WindowError("no window named " + name);
}

SaliencyReport peak_saliency_report(std::span<const double> vaw, std::span<const double> two_theta,
                                    const std::vector<Window>& windows) {
  if (vaw.size() != two_theta.size()) throw LengthError("vaw and axis lengths differ");
  if (vaw.empty()) throw LengthError("empty vaw");
  std::vector<char> in_any(vaw.size(), 0);
  SaliencyReport rep;
  for (const auto& w : windows) {
    if (!(w.lo <= w.hi)) throw WindowError("window " + w.name + " has lo > hi");
    WindowStats s;
    s.name = w.name;
    double sum = 0.0;
    for (std::size_t i = 0; i < vaw.size(); ++i) {
      if (two_theta[i] < w.lo || two_theta[i] > w.hi) continue;
      in_any[i] = 1;
      ++s.bins;
      sum += vaw[i];
      s.max = std::max(s.max, vaw[i]);
    }
    if (s.bins == 0) throw WindowError("window " + w.name + " misses the grid");
    s.mean = sum / static_cast<double>(s.bins);
    rep.windows.push_back(s);
  }
  WindowStats bg;
  bg.name = kBackground;
  double sum = 0.0;
  for (std::size_t i = 0; i < vaw.size(); ++i) {
    if (in_any[i]) continue;
    ++bg.bins;
    sum += vaw[i];
    bg.max = std::max(bg.max, vaw[i]);
  }
  if (bg.bins == 0) throw WindowError("windows leave no background bins");
  bg.mean = sum / static_cast<double>(bg.bins);
  rep.background_mean = bg.mean;
  rep.windows.push_back(bg);
  for (auto& s : rep.windows) {
    if (bg.mean > 0.0) {
      s.ratio = s.mean / bg.mean;
    } else if (s.mean > 0.0) {
      s.ratio = kRatioCap;
      rep.background_zero = true;
    } else {
      s.ratio = 1.0;
    }
  }
  return rep;
}

std::pair<std::vector<double>, std::size_t> mean_vaw(model::Model& model,
                                                     const std::vector<preproc::ProcessedSample>& samples,
                                                     std::size_t chunk) {
  std::vector<double> acc;
  std::size_t used = 0;
  for_each_map(model, samples, chunk, [&](std::size_t, const AttentionMap& map) {
    auto v = reduce_vaw(map);
    if (v.degenerate) return;
    if (acc.empty()) acc.assign(v.values.size(), 0.0);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v.values[i];
    ++used;
  });
  if (used > 0) {
    for (auto& a : acc) a /= static_cast<double>(used);
  }
  return {acc, used};
}

nlohmann::json report_json(const SaliencyReport& report) {
  nlohmann::json windows = nlohmann::json::array();
  for (const auto& w : report.windows) {
    windows.push_back({{"name", w.name}, {"bins", w.bins}, {"mean", w.mean}, {"max", w.max}, {"ratio", w.ratio}});
  }
  return {{"windows", windows}, {"background_mean", report.background_mean}, {"background_zero", report.background_zero}};
}

}  // namespace xrdattn::vaw
