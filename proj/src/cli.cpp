#include "xrdattn/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "xrdattn/checkpoint.hpp"
#include "xrdattn/dataset_io.hpp"
#include "xrdattn/errors.hpp"
#include "xrdattn/gradcheck.hpp"
#include "xrdattn/preproc.hpp"
#include "xrdattn/synthcell.hpp"
#include "xrdattn/train.hpp"
#include "xrdattn/vaw.hpp"

namespace xrdattn::cli {

namespace fs = std::filesystem;

namespace {

/// Bad flag values or inputs that do not fit the requested command.
class UsageError : public Error {
  using Error::Error;
};

struct SynthArgs {
  std::string out;
  std::size_t n = 4000;
  std::vector<double> rates;
  std::uint64_t seed = 42;
  double noise = 0.01;
  double v_min = 2.6;
  double v_max = 4.2;
  std::string generator;
};

struct TrainArgs {
  int case_id = 0;
  std::string data;
  std::string out;
  std::string metrics;
  std::size_t epochs = 200;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 7;
  std::optional<std::uint64_t> split_seed;
  double v_lo = 3.6;
  double v_hi = 4.2;
  std::vector<double> loss_weights{1.0, 1.0, 1.0};
  std::string voltage_loss = "acosh";
  std::string mode_scheme = "four";
  std::string standardize = "per_pattern";
  std::size_t head_hidden = 0;
  bool scale_scores = false;
  std::optional<std::size_t> patience;
  bool quiet = false;
  std::string dump_processed;
};

struct EvalArgs {
  std::string model;
  std::string data;
  std::string split = "validation";
  std::optional<int> case_id;
};

struct VawArgs {
  std::string model;
  std::string data;
  std::vector<std::size_t> samples;
  std::string csv;
  std::string svg;
  bool report = false;
  bool mean = false;
  bool global_scale = false;
};

struct GradArgs {
  std::uint64_t seed = 1;
};

// Records the requested case trains on: 1.0 C alone for cases 1-2, both rates for case 3.
std::vector<synth::SampleRecord> select_records(const synth::Dataset& ds, int case_id, bool require_all) {
  if (!ds.has_rate(synth::Rate::Normal)) throw UsageError("dataset has no 1.0C records");
  if (case_id == 3 && require_all && !ds.has_rate(synth::Rate::Slow)) {
    throw UsageError("case 3 needs both 1.0C and 0.2C data; 0.2C is missing");
  }
  std::vector<synth::SampleRecord> out;
  for (const auto& r : ds.records) {
    if (case_id < 3 && r.rate != synth::Rate::Normal) continue;
    out.push_back(r);
  }
  return out;
}

std::vector<preproc::ProcessedSample> load_samples(const std::string& dir, int case_id, bool require_all,
                                                   const preproc::PreprocessOptions& options,
                                                   synth::GeneratorConfig* generator = nullptr) {
  auto ds = synth::read_dataset(dir);
  if (generator) *generator = ds.generator;
  auto samples = preproc::process(select_records(ds, case_id, require_all), options);
  if (samples.size() < 2) throw UsageError("fewer than two samples fall inside the voltage window");
  return samples;
}

std::pair<std::vector<preproc::ProcessedSample>, std::vector<preproc::ProcessedSample>> split(
    const std::vector<preproc::ProcessedSample>& samples, std::uint64_t seed) {
  return preproc::split_half(samples, seed);
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << j.dump(2) << '\n';
  if (!os) throw IoError("write failed for " + path.string());
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  synth::GeneratorConfig gen;
  if (!a.generator.empty()) {
    std::ifstream is(a.generator, std::ios::binary);
    if (!is) throw IoError("cannot open " + a.generator);
    try {
      gen = nlohmann::json::parse(is).get<synth::GeneratorConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("bad generator config: ") + e.what());
    }
  }
  gen.validate();
  synth::Dataset ds;
  ds.generator = gen;
  ds.seed = a.seed;
  std::vector<double> rates = a.rates.empty() ? std::vector<double>{1.0} : a.rates;
  for (double c : rates) {
    synth::CellProtocol p;
    p.rate = synth::rate_from_c(c);
    if (ds.has_rate(p.rate)) throw UsageError("rate " + synth::rate_label(p.rate) + " given twice");
    p.n_samples = a.n;
    p.seed = a.seed;
    p.noise_scale = a.noise;
    p.v_min = a.v_min;
    p.v_max = a.v_max;
    p.validate();
    auto recs = synth::generate_dataset(p, gen);
    auto counts = synth::mode_counts(recs);
    out << synth::rate_label(p.rate) << ": " << recs.size() << " records;";
    for (std::size_t m = 0; m < synth::kModeCount; ++m) {
      out << ' ' << synth::mode_label(static_cast<synth::Mode>(m)) << '=' << counts[m];
    }
    out << '\n';
    ds.protocols.push_back(p);
    ds.records.insert(ds.records.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
  }
  synth::write_dataset(a.out, ds);
  out << "wrote " << a.out << '\n';
  return kOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  model::ModelConfig mc;
  mc.case_id = a.case_id;
  mc.loss_weights = a.loss_weights;
  mc.head_hidden = a.head_hidden;
  mc.scale_scores = a.scale_scores;
  mc.voltage_loss = a.voltage_loss == "log_cosh" ? model::VoltageLoss::LogCosh : model::VoltageLoss::AcoshSquare;

  train::CheckpointMeta meta;
  meta.v_window = {a.v_lo, a.v_hi};
  if (!(a.v_lo < a.v_hi)) throw UsageError("--v-lo must be below --v-hi");
  meta.standardize = a.standardize == "global" ? preproc::StandardizeMode::Global : preproc::StandardizeMode::PerPattern;
  meta.mode_scheme = a.mode_scheme == "two" ? preproc::ModeScheme::TwoClass : preproc::ModeScheme::FourClass;
  mc.mode_classes = preproc::mode_class_count(meta.mode_scheme);
  meta.split_seed = a.split_seed.value_or(a.seed);
  meta.train_seed = a.seed;
  try {
    mc.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }

  train::TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.adam.learning_rate = a.lr;
  tc.seed = a.seed;
  tc.early_stop_patience = a.patience;
  try {
    tc.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }

  auto ds = synth::read_dataset(a.data);
  auto records = select_records(ds, a.case_id, true);
  if (meta.standardize == preproc::StandardizeMode::Global) meta.global_range = preproc::global_intensity_range(records);
  auto samples = preproc::process(records, meta.preprocess_options());
  if (samples.size() < 2) throw UsageError("fewer than two samples fall inside the voltage window");
  auto [train_set, val_set] = split(samples, meta.split_seed);
  if (!a.dump_processed.empty()) {
    std::ofstream os(a.dump_processed, std::ios::binary);
    if (!os) throw IoError("cannot open " + a.dump_processed + " for writing");
    preproc::dump_processed_csv(os, samples);
    if (!os) throw IoError("write failed for " + a.dump_processed);
  }

  auto model = model::Model::build(mc, a.seed);
  auto on_epoch = [&](const train::EpochRecord& e) {
    if (a.quiet) return;
    err << "epoch " << e.epoch << "/" << a.epochs << "  train_loss " << e.train_loss << "  val_loss "
        << e.validation.total_loss << "  val_mae " << e.validation.voltage_mae_norm;
    if (e.validation.mode_accuracy) err << "  mode " << *e.validation.mode_accuracy;
    if (e.validation.rate_accuracy) err << "  rate " << *e.validation.rate_accuracy;
    err << '\n';
  };
  auto result = train::train(std::move(model), train_set, val_set, tc, meta.v_window, on_epoch);

  train::save_checkpoint(result.model, meta, a.out);
  auto metrics = train::metrics_json(result, tc);
  metrics["data"] = {{"split_seed", meta.split_seed},
                     {"v_window", {meta.v_window.lo, meta.v_window.hi}},
                     {"train_samples", train_set.size()},
                     {"validation_samples", val_set.size()}};
  const fs::path metrics_path = a.metrics.empty() ? fs::path(a.out).parent_path() / "metrics.json" : fs::path(a.metrics);
  write_json_file(metrics_path, metrics);
  nlohmann::json summary = {{"best_epoch", result.best_epoch}, {"validation", result.validation}};
  out << summary.dump(2) << '\n';
  return kOk;
}

train::Checkpoint load_for(const std::string& path, std::optional<int> case_id) {
  auto ck = train::load_checkpoint(path);
  if (case_id) train::require_case(ck, *case_id);
  return ck;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  auto ck = load_for(a.model, a.case_id);
  const int case_id = ck.model.config().case_id;
  auto samples = load_samples(a.data, case_id, false, ck.meta.preprocess_options());
  if (ck.model.config().has_mode_head() && samples.front().mode_onehot.size() != ck.model.config().mode_classes) {
    throw ArityError("mode classes of the data and the checkpoint differ");
  }
  std::vector<preproc::ProcessedSample> set;
  if (a.split == "all") {
    set = samples;
  } else {
    auto [tr, va] = split(samples, ck.meta.split_seed);
    set = a.split == "train" ? tr : va;
  }
  auto m = train::evaluate(ck.model, set, ck.meta.v_window);
  nlohmann::json j = m;
  j["case"] = case_id;
  j["split"] = a.split;
  out << j.dump(2) << '\n';
  return kOk;
}

int cmd_vaw(const VawArgs& a, std::ostream& out) {
  auto ck = load_for(a.model, std::nullopt);
  synth::GeneratorConfig gen;
  auto samples = load_samples(a.data, ck.model.config().case_id, false, ck.meta.preprocess_options(), &gen);
  const auto axis = vaw::resampled_axis(gen.grid, ck.model.config().input_len);
  const auto windows = vaw::default_windows(gen);

  std::vector<vaw::VawRecord> records;
  nlohmann::json reports = nlohmann::json::array();
  if (a.mean) {
    auto [tr, va] = split(samples, ck.meta.split_seed);
    auto [mv, used] = vaw::mean_vaw(ck.model, va);
    if (used == 0) throw DegenerateInput("every validation attention map is degenerate");
    std::vector<double> mean_x(axis.size(), 0.0);
    for (const auto& s : va) {
      for (std::size_t i = 0; i < mean_x.size(); ++i) mean_x[i] += s.x[i] / static_cast<double>(va.size());
    }
    vaw::SampleMeta meta;
    meta.label = "mean VAW over " + std::to_string(used) + " validation samples (extension)";
    records.push_back(vaw::project(mv, mean_x, axis, meta));
  }
  std::vector<std::size_t> picks = a.samples;
  if (picks.empty() && !a.mean) picks.push_back(0);
  std::vector<std::vector<double>> maxima;
  for (auto idx : picks) {
    if (idx >= samples.size()) {
      throw UsageError("--sample " + std::to_string(idx) + " out of range (" + std::to_string(samples.size()) +
                       " samples)");
    }
    maxima.push_back(vaw::row_maxima(vaw::attention_map(ck.model, samples[idx].x)));
  }
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& m : maxima) {
    lo = std::min(lo, *std::min_element(m.begin(), m.end()));
    hi = std::max(hi, *std::max_element(m.begin(), m.end()));
  }
  for (std::size_t p = 0; p < picks.size(); ++p) {
    const auto& s = samples[picks[p]];
    auto v = a.global_scale ? vaw::normalize_maxima(maxima[p], lo, hi) : vaw::normalize_maxima(maxima[p]);
    vaw::SampleMeta meta;
    meta.voltage = s.voltage_raw;
    meta.mode = s.mode_class;
    meta.rate = s.rate_class;
    meta.index = picks[p];
    std::ostringstream label;
    label << "sample " << picks[p] << ": " << std::setprecision(4) << s.voltage_raw << " V, mode " << s.mode_class
          << ", rate class " << s.rate_class << (v.degenerate ? " (degenerate map)" : "");
    meta.label = label.str();
    records.push_back(vaw::project(v.values, s.x, axis, meta));
  }
  vaw::emit_overlay(records, a.csv, a.svg);
  if (a.report) {
    for (const auto& r : records) {
      auto rep = vaw::report_json(vaw::peak_saliency_report(r.vaw, r.two_theta, windows));
      rep["label"] = r.meta.label;
      reports.push_back(rep);
    }
    out << reports.dump(2) << '\n';
  }
  return kOk;
}

int cmd_gradcheck(const GradArgs& a, std::ostream& out) {
  checks::GradCheckOptions o;
  o.seed = a.seed;
  auto results = checks::run_gradcheck_suite(o);
  double worst = 0.0;
  for (const auto& r : results) {
    out << std::left << std::setw(28) << r.name << ' ' << std::scientific << std::setprecision(3) << r.max_rel_error
        << (r.passed ? "  ok" : "  FAIL") << '\n';
    worst = std::max(worst, r.max_rel_error);
  }
  out << "max relative error: " << std::scientific << std::setprecision(3) << worst << " (tolerance "
      << o.tolerance << ")\n";
  return checks::all_passed(results) ? kOk : kCheckFailed;
}

// Flags taken from the JSON config: top-level keys apply when the command has
// such an option, keys under the command's own section always apply. Flags on
// the command line win.
void inject_config(const std::string& path, CLI::App* sub, std::vector<std::string>& args) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(std::string("config ") + path + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  auto given = [&](const std::string& flag) {
    return std::any_of(args.begin(), args.end(),
                       [&](const std::string& s) { return s == flag || s.rfind(flag + "=", 0) == 0; });
  };
  auto apply = [&](const nlohmann::json& obj, bool strict) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (it.value().is_object()) continue;
      std::string key = it.key();
      std::replace(key.begin(), key.end(), '_', '-');
      const std::string flag = "--" + key;
      if (sub->get_option_no_throw(flag) == nullptr) {
        if (strict) throw UsageError("config key '" + it.key() + "' is not an option of " + sub->get_name());
        continue;
      }
      if (given(flag)) continue;
      auto text = [](const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
      if (it.value().is_boolean()) {
        if (it.value().get<bool>()) args.push_back(flag);
      } else if (it.value().is_array()) {
        args.push_back(flag);
        for (const auto& v : it.value()) args.push_back(text(v));
      } else if (!it.value().is_null()) {
        args.push_back(flag);
        args.push_back(text(it.value()));
      }
    }
  };
  apply(j, false);
  if (j.contains(sub->get_name())) apply(j[sub->get_name()], true);
}

}  // namespace

int run(const std::vector<std::string>& input, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attention-based CNN for synthetic in-situ XRD battery data", "xrdattn"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON file with flag values (flags given here win)");

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic charge/discharge dataset");
  synth_cmd->add_option("--out", sa.out, "Output directory")->required();
  synth_cmd->add_option("--n", sa.n, "Samples per rate")->capture_default_str();
  synth_cmd->add_option("--rate", sa.rates, "C-rate: 1.0 or 0.2 (repeatable, default 1.0)");
  synth_cmd->add_option("--seed", sa.seed, "Random seed")->capture_default_str();
  synth_cmd->add_option("--noise", sa.noise, "Relative noise scale")->capture_default_str();
  synth_cmd->add_option("--v-min", sa.v_min, "Lower cutoff voltage")->capture_default_str();
  synth_cmd->add_option("--v-max", sa.v_max, "Upper cutoff voltage")->capture_default_str();
  synth_cmd->add_option("--generator", sa.generator, "JSON generator config (grid, peaks, background)");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint plus metrics.json");
  train_cmd->add_option("--case", ta.case_id, "1: voltage, 2: +mode, 3: +rate")->required()->check(CLI::Range(1, 3));
  train_cmd->add_option("--data", ta.data, "Dataset directory")->required();
  train_cmd->add_option("--out", ta.out, "Checkpoint path")->required();
  train_cmd->add_option("--metrics", ta.metrics, "metrics.json path (default: next to the checkpoint)");
  train_cmd->add_option("--epochs", ta.epochs)->capture_default_str();
  train_cmd->add_option("--batch", ta.batch)->capture_default_str();
  train_cmd->add_option("--lr", ta.lr)->capture_default_str();
  train_cmd->add_option("--seed", ta.seed, "Initialization and shuffling seed")->capture_default_str();
  train_cmd->add_option("--split-seed", ta.split_seed, "Train/validation split seed (default: --seed)");
  train_cmd->add_option("--v-lo", ta.v_lo, "Voltage window lower bound")->capture_default_str();
  train_cmd->add_option("--v-hi", ta.v_hi, "Voltage window upper bound")->capture_default_str();
  train_cmd->add_option("--loss-weights", ta.loss_weights, "Voltage, mode and rate loss weights")->expected(3);
  train_cmd->add_option("--voltage-loss", ta.voltage_loss)->check(CLI::IsMember({"acosh", "log_cosh"}))
      ->capture_default_str();
  train_cmd->add_option("--mode-scheme", ta.mode_scheme, "four or two mode classes")
      ->check(CLI::IsMember({"four", "two"}))->capture_default_str();
  train_cmd->add_option("--standardize", ta.standardize)->check(CLI::IsMember({"per_pattern", "global"}))
      ->capture_default_str();
  train_cmd->add_option("--head-hidden", ta.head_hidden, "Hidden width of each head (0: none)")->capture_default_str();
  train_cmd->add_flag("--scale-scores", ta.scale_scores, "Divide attention scores by sqrt(channels)");
  train_cmd->add_option("--patience", ta.patience, "Early-stop patience in epochs (default: off)");
  train_cmd->add_flag("--quiet", ta.quiet, "No per-epoch progress on stderr");
  train_cmd->add_option("--dump-processed", ta.dump_processed, "Write the processed samples as CSV");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Print metrics of a checkpoint as JSON");
  eval_cmd->add_option("--model", ea.model, "Checkpoint")->required();
  eval_cmd->add_option("--data", ea.data, "Dataset directory")->required();
  eval_cmd->add_option("--split", ea.split)->check(CLI::IsMember({"validation", "train", "all"}))
      ->capture_default_str();
  eval_cmd->add_option("--case", ea.case_id, "Expected case; exit 5 if the checkpoint differs");

  VawArgs va;
  auto* vaw_cmd = app.add_subcommand("vaw", "Emit Visualized Attention Weight overlays");
  vaw_cmd->add_option("--model", va.model, "Checkpoint")->required();
  vaw_cmd->add_option("--data", va.data, "Dataset directory")->required();
  vaw_cmd->add_option("--sample", va.samples, "Index into the processed dataset (repeatable)");
  vaw_cmd->add_option("--csv", va.csv, "CSV output path");
  vaw_cmd->add_option("--svg", va.svg, "SVG output path");
  vaw_cmd->add_flag("--report", va.report, "Print peak saliency ratios as JSON");
  vaw_cmd->add_flag("--mean", va.mean, "Add a panel with the mean VAW over the validation split");
  vaw_cmd->add_flag("--global-scale", va.global_scale, "One min-max scale across the selected samples");

  GradArgs ga;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every op and a miniature model");
  grad_cmd->add_option("--seed", ga.seed)->capture_default_str();

  std::vector<std::string> args = input;
  try {
    auto cfg_it = std::find_if(args.begin(), args.end(),
                               [](const std::string& s) { return s == "--config" || s.rfind("--config=", 0) == 0; });
    if (cfg_it != args.end()) {
      std::string path;
      if (*cfg_it == "--config") {
        if (cfg_it + 1 == args.end()) throw UsageError("--config needs a path");
        path = *(cfg_it + 1);
        args.erase(cfg_it, cfg_it + 2);
      } else {
        path = cfg_it->substr(9);
        args.erase(cfg_it);
      }
      auto cmd = std::find_if(args.begin(), args.end(), [](const std::string& s) { return !s.starts_with("-"); });
      if (cmd == args.end()) throw UsageError("no command given");
      CLI::App* sub = nullptr;
      try {
        sub = app.get_subcommand(*cmd);
      } catch (const CLI::OptionNotFound&) {
        throw UsageError("unknown command '" + *cmd + "'");
      }
      inject_config(path, sub, args);
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);

    if (*synth_cmd) return cmd_synth(sa, out);
    if (*train_cmd) return cmd_train(ta, out, err);
    if (*eval_cmd) return cmd_eval(ea, out);
    if (*vaw_cmd) return cmd_vaw(va, out);
    if (*grad_cmd) return cmd_gradcheck(ga, out);
    return kUsage;
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NonFiniteError& e) {
    err << "error: " << e.what() << '\n';
    return kNumeric;
  } catch (const ArityError& e) {
    err << "error: " << e.what() << '\n';
    return kCompat;
  } catch (const VersionError& e) {
    err << "error: " << e.what() << '\n';
    return kCompat;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kCheckFailed;
  }
}

}  // namespace xrdattn::cli
