#include "xrdattn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <span>

#include <nlohmann/json.hpp>

#include "xrdattn/errors.hpp"

namespace xrdattn::train {

namespace {

constexpr char kMagic[4] = {'X', 'A', 'W', '1'};
constexpr std::size_t kPrefix = 8;  // magic + header length

struct Slot {
  std::string name;
  std::span<double> data;
  ad::Shape shape;
};

// Every persisted buffer of a model, parameters first, then batch-norm statistics.
std::vector<Slot> slots(model::Model& m) {
  std::vector<Slot> out;
  for (auto& p : m.parameters()) {
    ad::Tensor t = p.tensor;
    out.push_back({p.name, t.node()->value, t.shape()});
  }
  auto& bn = m.bn_state();
  if (m.config().bn_layer_index > 0) {
    const std::string prefix = "bn" + std::to_string(m.config().bn_layer_index);
    out.push_back({prefix + ".running_mean", bn.running_mean, {bn.running_mean.size()}});
    out.push_back({prefix + ".running_var", bn.running_var, {bn.running_var.size()}});
  }
  return out;
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

const char* standardize_name(preproc::StandardizeMode m) {
  return m == preproc::StandardizeMode::PerPattern ? "per_pattern" : "global";
}

const char* scheme_name(preproc::ModeScheme s) {
  return s == preproc::ModeScheme::FourClass ? "four_class" : "two_class";
}

}  // namespace

preproc::PreprocessOptions CheckpointMeta::preprocess_options() const {
  preproc::PreprocessOptions o;
  o.window = v_window;
  o.standardize = standardize;
  o.global_range = global_range;
  o.mode_scheme = mode_scheme;
  return o;
}

void save_checkpoint(const model::Model& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
  model::Model m = model.clone();
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["model_config"] = m.config();
  header["v_window"] = {meta.v_window.lo, meta.v_window.hi};
  header["normalization"] = {{"standardize", standardize_name(meta.standardize)},
                             {"global_range", nullptr},
                             {"mode_scheme", scheme_name(meta.mode_scheme)}};
  if (meta.global_range) header["normalization"]["global_range"] = {meta.global_range->first, meta.global_range->second};
  header["split_seed"] = meta.split_seed;
  header["train_seed"] = meta.train_seed;

  std::string payload;
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& s : slots(m)) {
    manifest.push_back({{"name", s.name}, {"shape", s.shape}, {"offset", payload.size()}});
    for (double v : s.data) put_u64(payload, std::bit_cast<std::uint64_t>(v));
  }
  header["tensors"] = manifest;
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((len >> (8 * i)) & 0xff));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  os.flush();
  if (!os) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());

  if (bytes.size() < 4) throw FormatError("file too short for magic", bytes.size());
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw VersionError("not an XAW1 checkpoint");
  if (bytes.size() < kPrefix) throw FormatError("file too short for header length", bytes.size());
  const std::uint32_t len = raw[4] | (raw[5] << 8) | (raw[6] << 16) | (static_cast<std::uint32_t>(raw[7]) << 24);
  if (bytes.size() < kPrefix + len) throw FormatError("header extends past end of file", bytes.size());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + kPrefix, bytes.begin() + static_cast<std::ptrdiff_t>(kPrefix + len));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what(), kPrefix + (e.byte > 0 ? e.byte - 1 : 0));
  }

  Checkpoint ck;
  std::vector<std::pair<std::string, nlohmann::json>> entries;
  try {
    if (header.at("format_version").get<int>() != kCheckpointVersion) {
      throw VersionError("unsupported checkpoint version " + header.at("format_version").dump());
    }
    auto cfg = header.at("model_config").get<model::ModelConfig>();
    cfg.validate();
    ck.model = model::Model::build(cfg, 0);
    const auto& w = header.at("v_window");
    ck.meta.v_window = {w.at(0).get<double>(), w.at(1).get<double>()};
    const auto& norm = header.at("normalization");
    ck.meta.standardize = norm.at("standardize").get<std::string>() == "global" ? preproc::StandardizeMode::Global
                                                                               : preproc::StandardizeMode::PerPattern;
    if (!norm.at("global_range").is_null()) {
      ck.meta.global_range = {norm["global_range"].at(0).get<double>(), norm["global_range"].at(1).get<double>()};
    }
    ck.meta.mode_scheme = norm.at("mode_scheme").get<std::string>() == "two_class" ? preproc::ModeScheme::TwoClass
                                                                                 : preproc::ModeScheme::FourClass;
    ck.meta.split_seed = header.at("split_seed").get<std::uint64_t>();
    ck.meta.train_seed = header.value("train_seed", std::uint64_t{0});
    for (const auto& t : header.at("tensors")) entries.emplace_back(t.at("name").get<std::string>(), t);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what(), kPrefix);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid model config in checkpoint: ") + e.what(), kPrefix);
  }

  std::map<std::string, nlohmann::json> by_name(entries.begin(), entries.end());
  const std::size_t base = kPrefix + len;
  auto targets = slots(ck.model);
  if (by_name.size() != targets.size()) throw FormatError("checkpoint tensor count does not match its config", kPrefix);
  for (auto& s : targets) {
    auto it = by_name.find(s.name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks tensor " + s.name, kPrefix);
    const auto shape = it->second.at("shape").get<ad::Shape>();
    if (shape != s.shape) throw FormatError("tensor " + s.name + " has shape " + ad::shape_str(shape), kPrefix);
    const std::size_t offset = base + it->second.at("offset").get<std::size_t>();
    const std::size_t count = s.data.size();
    if (offset + 8 * count > bytes.size()) throw FormatError("tensor " + s.name + " is truncated", bytes.size());
    for (std::size_t i = 0; i < count; ++i) s.data[i] = std::bit_cast<double>(get_u64(raw + offset + 8 * i));
  }
  return ck;
}

void require_case(const Checkpoint& ckpt, int case_id) {
  if (ckpt.model.config().case_id != case_id) {
    throw ArityError("checkpoint holds a case-" + std::to_string(ckpt.model.config().case_id) +
                     " model, case " + std::to_string(case_id) + " was requested");
  }
}

}  // namespace xrdattn::train
