#include "xrdattn/dataset_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "xrdattn/errors.hpp"

namespace xrdattn::synth {

namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;

nlohmann::json protocol_json(const CellProtocol& p) {
  return {{"v_min", p.v_min},
          {"v_max", p.v_max},
          {"rate", c_rate(p.rate)},
          {"n_samples", p.n_samples},
          {"noise_scale", p.noise_scale},
          {"seed", p.seed}};
}

CellProtocol protocol_from_json(const nlohmann::json& j) {
  CellProtocol p;
  p.v_min = j.at("v_min").get<double>();
  p.v_max = j.at("v_max").get<double>();
  p.rate = rate_from_c(j.at("rate").get<double>());
  p.n_samples = j.at("n_samples").get<std::size_t>();
  p.noise_scale = j.at("noise_scale").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  return p;
}

// Splits one CSV line into fields and parses them as doubles.
void parse_fields(std::string_view line, std::size_t line_offset, std::vector<double>& out) {
  out.clear();
  std::size_t pos = 0;
  while (pos <= line.size()) {
    std::size_t end = line.find(',', pos);
    if (end == std::string_view::npos) end = line.size();
    double v = 0.0;
    const char* first = line.data() + pos;
    const char* last = line.data() + end;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
      throw FormatError("bad numeric field '" + std::string(first, last) + "'", line_offset + pos);
    }
    out.push_back(v);
    pos = end + 1;
  }
}

}  // namespace

bool Dataset::has_rate(Rate r) const {
  for (const auto& p : protocols) {
    if (p.rate == r) return true;
  }
  return false;
}

std::string csv_file_name(Rate rate) { return "rate_" + rate_label(rate) + ".csv"; }

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_records_csv(std::ostream& os, const std::vector<SampleRecord>& records) {
  const std::size_t n = records.empty() ? 0 : records.front().intensity.size();
  std::string line = "t,voltage,mode,rate,soc";
  for (std::size_t i = 0; i < n; ++i) line += ",i" + std::to_string(i);
  os << line << '\n';
  for (const auto& r : records) {
    if (r.intensity.size() != n) throw LengthError("records have differing intensity lengths");
    line.clear();
    line += format_double(r.t);
    line += ',';
    line += format_double(r.voltage);
    line += ',';
    line += std::to_string(static_cast<int>(r.mode));
    line += ',';
    line += std::to_string(static_cast<int>(r.rate));
    line += ',';
    line += format_double(r.soc);
    for (double v : r.intensity) {
      line += ',';
      line += format_double(v);
    }
    os << line << '\n';
  }
}

std::vector<SampleRecord> read_records_csv(std::istream& is, std::shared_ptr<const std::vector<double>> grid) {
  const std::size_t n = grid->size();
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(is, line)) throw FormatError("missing CSV header", 0);
  std::string expected = "t,voltage,mode,rate,soc";
  for (std::size_t i = 0; i < n; ++i) expected += ",i" + std::to_string(i);
  if (line != expected) throw FormatError("unexpected CSV header", 0);
  offset += line.size() + 1;

  std::vector<SampleRecord> records;
  std::vector<double> fields;
  while (std::getline(is, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    parse_fields(line, offset, fields);
    if (fields.size() != 5 + n) {
      throw FormatError("expected " + std::to_string(5 + n) + " fields, got " + std::to_string(fields.size()),
                        offset);
    }
    SampleRecord r;
    r.two_theta = grid;
    r.t = fields[0];
    r.voltage = fields[1];
    const double mode = fields[2];
    const double rate = fields[3];
    if (mode != 0.0 && mode != 1.0 && mode != 2.0 && mode != 3.0) throw FormatError("mode must be 0-3", offset);
    if (rate != 0.0 && rate != 1.0) throw FormatError("rate must be 0 or 1", offset);
    r.mode = static_cast<Mode>(static_cast<int>(mode));
    r.rate = static_cast<Rate>(static_cast<int>(rate));
    r.soc = fields[4];
    r.intensity.assign(fields.begin() + 5, fields.end());
    records.push_back(std::move(r));
    offset += line.size() + 1;
  }
  return records;
}

void write_dataset(const fs::path& dir, const Dataset& dataset) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  nlohmann::json manifest;
  manifest["format"] = "xrdattn-dataset";
  manifest["version"] = kFormatVersion;
  nlohmann::json gen = dataset.generator;
  manifest["grid"] = gen["grid"];
  manifest["peaks"] = gen["peaks"];
  manifest["generator"] = gen;
  manifest["seed"] = dataset.seed;
  manifest["protocols"] = nlohmann::json::array();
  manifest["files"] = nlohmann::json::array();

  std::size_t begin = 0;
  for (const auto& p : dataset.protocols) {
    manifest["protocols"].push_back(protocol_json(p));
    const std::string name = csv_file_name(p.rate);
    if (begin + p.n_samples > dataset.records.size()) throw LengthError("dataset holds fewer records than its protocols");
    std::vector<SampleRecord> slice(dataset.records.begin() + static_cast<std::ptrdiff_t>(begin),
                                    dataset.records.begin() + static_cast<std::ptrdiff_t>(begin + p.n_samples));
    begin += p.n_samples;
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) throw IoError("cannot open " + (dir / name).string() + " for writing");
    write_records_csv(os, slice);
    if (!os) throw IoError("write failed for " + (dir / name).string());
    manifest["files"].push_back({{"path", name}, {"rate", c_rate(p.rate)}, {"rows", slice.size()}});
  }
  std::ofstream ms(dir / "manifest.json", std::ios::binary);
  if (!ms) throw IoError("cannot open " + (dir / "manifest.json").string() + " for writing");
  ms << manifest.dump(2) << '\n';
  if (!ms) throw IoError("write failed for manifest.json");
}

Dataset read_dataset(const fs::path& dir) {
  std::ifstream ms(dir / "manifest.json", std::ios::binary);
  if (!ms) throw IoError("cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(ms);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("manifest.json: ") + e.what(), e.byte);
  }
  if (manifest.value("format", std::string()) != "xrdattn-dataset") {
    throw FormatError("manifest.json is not an xrdattn dataset", 0);
  }
  if (manifest.value("version", 0) != kFormatVersion) throw VersionError("unsupported dataset version");

  Dataset ds;
  ds.generator = manifest.at("generator").get<GeneratorConfig>();
  ds.seed = manifest.value("seed", std::uint64_t{0});
  for (const auto& p : manifest.at("protocols")) ds.protocols.push_back(protocol_from_json(p));
  auto grid = std::make_shared<const std::vector<double>>(ds.generator.grid.points());
  for (const auto& f : manifest.at("files")) {
    const fs::path path = dir / f.at("path").get<std::string>();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    auto recs = read_records_csv(is, grid);
    if (recs.size() != f.at("rows").get<std::size_t>()) {
      throw FormatError(path.filename().string() + ": row count disagrees with manifest", 0);
    }
    const Rate expected = rate_from_c(f.at("rate").get<double>());
    for (const auto& r : recs) {
      if (r.rate != expected) throw FormatError(path.filename().string() + ": rate column disagrees with manifest", 0);
    }
    ds.records.insert(ds.records.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
  }
  return ds;
}

}  // namespace xrdattn::synth
