#pragma once

// Checkpoint file: "XAW1", u32 little-endian header length, JSON header,
// then little-endian float64 tensor payloads in manifest order.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>

#include "xrdattn/model.hpp"
#include "xrdattn/preproc.hpp"

namespace xrdattn::train {

inline constexpr int kCheckpointVersion = 1;

/// Everything besides the weights needed to reuse a model on new data.
struct CheckpointMeta {
  preproc::VoltageWindow v_window;
  preproc::StandardizeMode standardize = preproc::StandardizeMode::PerPattern;
  std::optional<std::pair<double, double>> global_range;
  preproc::ModeScheme mode_scheme = preproc::ModeScheme::FourClass;
  std::uint64_t split_seed = 7;
  std::uint64_t train_seed = 7;

  preproc::PreprocessOptions preprocess_options() const;
};

struct Checkpoint {
  model::Model model;
  CheckpointMeta meta;
};

/// IoError when the file cannot be written.
void save_checkpoint(const model::Model& model, const CheckpointMeta& meta, const std::filesystem::path& path);

/// IoError when unreadable, VersionError on a foreign magic or format version,
/// FormatError with a byte offset on truncation or a malformed header.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// ArityError unless the checkpoint was trained for `case_id`.
void require_case(const Checkpoint& ckpt, int case_id);

}  // namespace xrdattn::train
