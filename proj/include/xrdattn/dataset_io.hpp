#pragma once

// On-disk dataset layout:
//   DIR/manifest.json   grid, peaks, generator settings, protocols, seed, files
//   DIR/rate_1.0C.csv   t,voltage,mode,rate,soc,i0..i{n-1}
//   DIR/rate_0.2C.csv
// mode is written as 0-3, rate as 0 (0.2 C) / 1 (1.0 C); floats use the
// shortest representation that reads back to the identical double.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "xrdattn/synthcell.hpp"

namespace xrdattn::synth {

struct Dataset {
  GeneratorConfig generator;
  std::vector<CellProtocol> protocols;
  std::uint64_t seed = 0;
  /// Records of every file, concatenated in manifest order.
  std::vector<SampleRecord> records;

  bool has_rate(Rate r) const;
};

std::string csv_file_name(Rate rate);

/// Shortest round-trip decimal for a double.
std::string format_double(double v);

void write_records_csv(std::ostream& os, const std::vector<SampleRecord>& records);
/// Parses a CSV written by write_records_csv; `grid` becomes every record's
/// two_theta. Throws FormatError with the byte offset of the first problem.
std::vector<SampleRecord> read_records_csv(std::istream& is, std::shared_ptr<const std::vector<double>> grid);

/// Writes the manifest plus one CSV per protocol. Throws IoError on failure.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace xrdattn::synth
