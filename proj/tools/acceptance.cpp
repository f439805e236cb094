// End-to-end acceptance run: one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "xrdattn/checkpoint.hpp"
#include "xrdattn/cli.hpp"
#include "xrdattn/dataset_io.hpp"
#include "xrdattn/gradcheck.hpp"
#include "xrdattn/model.hpp"
#include "xrdattn/preproc.hpp"
#include "xrdattn/synthcell.hpp"
#include "xrdattn/train.hpp"
#include "xrdattn/vaw.hpp"

namespace fs = std::filesystem;
using namespace xrdattn;

namespace {

struct Settings {
  fs::path work = "acceptance_work";
  std::size_t case1_epochs = 30;
  std::size_t case3_epochs = 20;
  std::size_t overfit_epochs = 500;
  std::uint64_t seed = 7;
  std::set<int> only;
};

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void log(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

class Runner {
 public:
  explicit Runner(Settings s) : s_(std::move(s)) { fs::create_directories(s_.work); }

  fs::path data_dir() {
    const fs::path dir = s_.work / "data";
    if (!data_ready_) {
      log("generating 4000 records per rate");
      call({"synth", "--out", dir.string(), "--n", "4000", "--rate", "1.0", "--rate", "0.2", "--seed", "42"});
      data_ready_ = true;
    }
    return dir;
  }

  struct TrainRun {
    fs::path checkpoint;
    fs::path metrics;
    double seconds = 0.0;
  };

  // Trains through the command-line entry point; results are cached by tag.
  TrainRun train(int case_id, std::uint64_t seed, const std::string& tag) {
    if (auto it = runs_.find(tag); it != runs_.end()) return it->second;
    const std::size_t epochs = case_id == 3 ? s_.case3_epochs : s_.case1_epochs;
    TrainRun r{s_.work / (tag + ".xaw"), s_.work / (tag + ".json"), 0.0};
    const auto data = data_dir();
    log("training " + tag + ": case " + std::to_string(case_id) + ", seed " + std::to_string(seed) + ", " +
        std::to_string(epochs) + " epochs");
    const auto t0 = Clock::now();
    call({"train", "--case", std::to_string(case_id), "--data", data.string(), "--out", r.checkpoint.string(),
          "--metrics", r.metrics.string(), "--epochs", std::to_string(epochs), "--seed", std::to_string(seed)});
    r.seconds = seconds_since(t0);
    log(tag + " took " + fmt(r.seconds) + " s");
    runs_[tag] = r;
    return r;
  }

  const Settings& settings() const { return s_; }

 private:
  void call(const std::vector<std::string>& args) {
    std::ostringstream out;
    const int code = cli::run(args, out, std::cerr);
    if (code != cli::kOk) throw std::runtime_error(args.front() + " exited with code " + std::to_string(code));
  }

  Settings s_;
  bool data_ready_ = false;
  std::map<std::string, TrainRun> runs_;
};

model::ModelConfig case_config(int case_id) {
  model::ModelConfig c;
  c.case_id = case_id;
  return c;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

Verdict criterion1(Runner&) {
  const auto t0 = Clock::now();
  const auto results = checks::run_gradcheck_suite();
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  for (const auto& r : results) {
    if (!(r.max_rel_error <= worst)) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  }
  const bool pass = checks::all_passed(results) && worst < 1e-4 && secs < 60.0;
  return {pass, std::to_string(results.size()) + " checks, max relative error " + fmt(worst) + " (" + worst_name +
                    "), " + fmt(secs, 3) + " s"};
}

Verdict criterion2(Runner& runner) {
  const auto run = runner.train(3, runner.settings().seed, "case3_seed7");
  auto model = train::load_checkpoint(run.checkpoint).model;
  const std::size_t len = model.config().input_len;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_row = 0.0, lo = INFINITY, hi = -INFINITY;
  bool shapes_ok = true;
  constexpr std::size_t kInputs = 100, kChunk = 20;
  for (std::size_t start = 0; start < kInputs; start += kChunk) {
    std::vector<double> x(kChunk * len);
    for (auto& v : x) v = u(rng);
    auto fr = model.forward(ad::Tensor::from({kChunk, len, 1}, x), ad::BnMode::Eval);
    const auto& w = fr.attention.weights;
    if (w.shape() != ad::Shape{kChunk, 256, 256}) shapes_ok = false;
    const auto a = w.data();
    const std::size_t n = w.dim(2);
    for (std::size_t r = 0; r < kChunk * w.dim(1); ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        const double e = a[r * n + c];
        sum += e;
        lo = std::min(lo, e);
        hi = std::max(hi, e);
      }
      worst_row = std::max(worst_row, std::abs(sum - 1.0));
    }
  }
  const bool pass = shapes_ok && worst_row <= 1e-6 && lo >= 0.0 && hi <= 1.0;
  return {pass, "100 inputs, shape 256x256 " + std::string(shapes_ok ? "ok" : "WRONG") + ", max |row sum - 1| " +
                    fmt(worst_row) + ", entries in [" + fmt(lo) + ", " + fmt(hi) + "]"};
}

Verdict criterion3(Runner& runner) {
  const auto run = runner.train(1, runner.settings().seed, "case1_seed7");
  const auto j = read_json(run.metrics);
  const double mae = j.at("validation").at("voltage_mae_norm");
  const bool pass = mae <= 5.0e-2 && run.seconds <= 15 * 60.0;
  return {pass, "validation MAE " + fmt(mae) + " (normalized), " + fmt(run.seconds) + " s"};
}

Verdict criterion4(Runner& runner) {
  const auto run = runner.train(3, runner.settings().seed, "case3_seed7");
  const auto j = read_json(run.metrics);
  const auto& v = j.at("validation");
  const double mae = v.at("voltage_mae_norm"), mode = v.at("mode_accuracy"), rate = v.at("rate_accuracy");
  const bool pass = mode >= 0.90 && rate >= 0.95 && mae <= 6.0e-2 && run.seconds <= 30 * 60.0;
  return {pass, "mode accuracy " + fmt(mode) + ", rate accuracy " + fmt(rate) + ", MAE " + fmt(mae) + ", " +
                    fmt(run.seconds) + " s"};
}

// Saliency of the mean VAW over the checkpoint's own validation split.
vaw::SaliencyReport validation_saliency(const fs::path& checkpoint, const synth::Dataset& ds) {
  auto ck = train::load_checkpoint(checkpoint);
  const int case_id = ck.model.config().case_id;
  std::vector<synth::SampleRecord> records;
  for (const auto& r : ds.records) {
    if (case_id == 3 || r.rate == synth::Rate::Normal) records.push_back(r);
  }
  auto samples = preproc::process(records, ck.meta.preprocess_options());
  auto [tr, va] = preproc::split_half(samples, ck.meta.split_seed);
  auto [mean, used] = vaw::mean_vaw(ck.model, va);
  if (used == 0) throw std::runtime_error("every validation attention map is degenerate");
  const auto axis = vaw::resampled_axis(ds.generator.grid, ck.model.config().input_len);
  return vaw::peak_saliency_report(mean, axis, vaw::default_windows(ds.generator));
}

Verdict criterion5(Runner& runner) {
  const auto ds = synth::read_dataset(runner.data_dir());
  std::size_t good = 0;
  std::string detail;
  for (std::uint64_t seed = 7; seed < 12; ++seed) {
    const auto run = runner.train(3, seed, "case3_seed" + std::to_string(seed));
    const auto rep = validation_saliency(run.checkpoint, ds);
    const double nmc = rep["NMC(003)"].ratio, gr = rep["C(002)"].ratio;
    const bool ok = nmc >= 2.0 && gr >= 1.5;
    good += ok ? 1 : 0;
    detail += "seed " + std::to_string(seed) + " NMC " + fmt(nmc, 3) + " C " + fmt(gr, 3) + (ok ? "; " : " (miss); ");
    log("case 3 seed " + std::to_string(seed) + ": NMC(003) " + fmt(nmc) + ", C(002) " + fmt(gr));
  }
  const auto c1 = runner.train(1, runner.settings().seed, "case1_seed7");
  const double c1_nmc = validation_saliency(c1.checkpoint, ds)["NMC(003)"].ratio;
  const bool pass = good >= 4 && c1_nmc >= 2.0;
  return {pass, "case 3: " + std::to_string(good) + "/5 seeds [" + detail + "]; case 1 NMC " + fmt(c1_nmc, 3)};
}

Verdict criterion6(Runner& runner) {
  const auto a1 = runner.train(1, runner.settings().seed, "case1_seed7");
  const auto a3 = runner.train(3, runner.settings().seed, "case3_seed7");
  const auto b1 = runner.train(1, runner.settings().seed, "case1_seed7_repeat");
  const auto b3 = runner.train(3, runner.settings().seed, "case3_seed7_repeat");
  const bool same1 = slurp(a1.metrics) == slurp(b1.metrics);
  const bool same3 = slurp(a3.metrics) == slurp(b3.metrics);
  return {same1 && same3, std::string("case 1 metrics.json ") + (same1 ? "identical" : "DIFFERS") +
                              ", case 3 metrics.json " + (same3 ? "identical" : "DIFFERS")};
}

Verdict criterion7(Runner& runner) {
  std::vector<std::string> failures;
  const fs::path dir = runner.settings().work;

  // Checkpoint: fresh model with perturbed batch-norm statistics.
  auto model = model::Model::build(case_config(3), 11);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (auto& v : model.bn_state().running_mean) v = g(rng);
  for (auto& v : model.bn_state().running_var) v = 1.0 + std::abs(g(rng));
  train::CheckpointMeta meta;
  meta.split_seed = 99;
  save_checkpoint(model, meta, dir / "roundtrip.xaw");
  auto back = train::load_checkpoint(dir / "roundtrip.xaw");
  const auto p0 = model.parameters(), p1 = back.model.parameters();
  bool params_same = p0.size() == p1.size();
  for (std::size_t i = 0; params_same && i < p0.size(); ++i) {
    params_same = p0[i].name == p1[i].name && p0[i].tensor.shape() == p1[i].tensor.shape() &&
                  std::ranges::equal(p0[i].tensor.data(), p1[i].tensor.data());
  }
  params_same = params_same && model.bn_state().running_mean == back.model.bn_state().running_mean &&
                model.bn_state().running_var == back.model.bn_state().running_var &&
                back.meta.split_seed == 99;
  if (!params_same) failures.push_back("checkpoint parameters differ");

  // Dataset CSV against a direct regeneration.
  const auto ds = synth::read_dataset(runner.data_dir());
  double ds_err = 0.0;
  std::size_t expected = 0;
  for (const auto& protocol : ds.protocols) {
    const auto fresh = synth::generate_dataset(protocol, ds.generator);
    expected += fresh.size();
    for (const auto& f : fresh) {
      auto it = std::find_if(ds.records.begin(), ds.records.end(),
                             [&](const synth::SampleRecord& r) { return r.rate == f.rate && r.t == f.t; });
      if (it == ds.records.end() || it->intensity.size() != f.intensity.size()) {
        ds_err = INFINITY;
        break;
      }
      ds_err = std::max({ds_err, std::abs(it->voltage - f.voltage), std::abs(it->soc - f.soc)});
      for (std::size_t i = 0; i < f.intensity.size(); ++i) {
        ds_err = std::max(ds_err, std::abs(it->intensity[i] - f.intensity[i]));
      }
    }
  }
  if (expected != ds.records.size() || !(ds_err <= 1e-9)) failures.push_back("dataset CSV round trip");

  // VAW CSV of real maps from a built model.
  std::vector<vaw::VawRecord> records;
  const auto axis = vaw::resampled_axis(ds.generator.grid, model.config().input_len);
  preproc::PreprocessOptions opts;
  const auto samples = preproc::process(ds.records, opts);
  for (std::size_t i = 0; i < std::min<std::size_t>(3, samples.size()); ++i) {
    auto v = vaw::reduce_vaw(vaw::attention_map(model, samples[i].x));
    records.push_back(vaw::project(v.values, samples[i].x, axis));
  }
  std::stringstream ss;
  vaw::write_csv(ss, records);
  const auto parsed = vaw::read_csv(ss);
  double vaw_err = parsed.size() == records.size() && !records.empty() ? 0.0 : INFINITY;
  for (std::size_t r = 0; std::isfinite(vaw_err) && r < records.size(); ++r) {
    for (std::size_t i = 0; i < records[r].vaw.size(); ++i) {
      vaw_err = std::max({vaw_err, std::abs(parsed[r].two_theta[i] - records[r].two_theta[i]),
                          std::abs(parsed[r].intensity[i] - records[r].intensity[i]),
                          std::abs(parsed[r].vaw[i] - records[r].vaw[i])});
    }
  }
  if (!(vaw_err <= 1e-9)) failures.push_back("VAW CSV round trip");

  std::string detail = "checkpoint " + std::string(params_same ? "identical" : "DIFFERS") + ", dataset max error " +
                       fmt(ds_err) + " over " + std::to_string(ds.records.size()) + " records, VAW max error " +
                       fmt(vaw_err);
  return {failures.empty(), detail};
}

Verdict criterion8(Runner& runner) {
  // Spline resampling of sines spanning the 1400-point source grid.
  double spline_err = 0.0;
  for (double cycles : {1.0, 3.0, 5.0}) {
    std::vector<double> src(1400);
    for (std::size_t i = 0; i < src.size(); ++i) {
      src[i] = std::sin(2.0 * std::numbers::pi * cycles * static_cast<double>(i) / 1399.0);
    }
    const auto out = preproc::spline_resample(src, 256, 1400);
    for (std::size_t j = 0; j < out.size(); ++j) {
      const double exact = std::sin(2.0 * std::numbers::pi * cycles * static_cast<double>(j) / 255.0);
      spline_err = std::max(spline_err, std::abs(out[j] - exact));
    }
  }

  // Min-max idempotence on random vectors.
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  double idem_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(1400);
    for (auto& x : v) x = u(rng);
    const auto once = preproc::minmax_standardize(v);
    const auto twice = preproc::minmax_standardize(once);
    for (std::size_t i = 0; i < v.size(); ++i) idem_err = std::max(idem_err, std::abs(once[i] - twice[i]));
  }

  // Overfit 32 Case-1 samples, scored on the same samples.
  const auto ds = synth::read_dataset(runner.data_dir());
  std::vector<synth::SampleRecord> fast;
  for (const auto& r : ds.records) {
    if (r.rate == synth::Rate::Normal) fast.push_back(r);
  }
  auto samples = preproc::process(fast, {});
  auto [tr, va] = preproc::split_half(samples, runner.settings().seed);
  tr.resize(32);
  train::TrainConfig tc;
  tc.epochs = runner.settings().overfit_epochs;
  tc.batch_size = 32;
  tc.seed = runner.settings().seed;
  log("overfitting 32 samples for " + std::to_string(tc.epochs) + " epochs");
  auto result = train::train(model::Model::build(case_config(1), tc.seed), tr, tr, tc, {});
  const double overfit_mae = train::evaluate(result.model, tr, {}).voltage_mae_norm;

  const bool pass = spline_err <= 1e-4 && idem_err == 0.0 && overfit_mae < 1e-2;
  return {pass, "spline max error " + fmt(spline_err) + ", idempotence max error " + fmt(idem_err) +
                    ", overfit training MAE " + fmt(overfit_mae)};
}

}  // namespace

int main(int argc, char** argv) {
  Settings s;
  CLI::App app{"Acceptance run over the synthetic pipeline"};
  app.add_option("--work", s.work, "Scratch directory for datasets, checkpoints and metrics");
  app.add_option("--case1-epochs", s.case1_epochs, "Epoch budget of Case 1 runs")->check(CLI::PositiveNumber);
  app.add_option("--case3-epochs", s.case3_epochs, "Epoch budget of Case 3 runs")->check(CLI::PositiveNumber);
  app.add_option("--overfit-epochs", s.overfit_epochs, "Epoch budget of the overfit smoke test")
      ->check(CLI::PositiveNumber);
  app.add_option("--only", s.only, "Run only these criteria")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<int, std::function<Verdict(Runner&)>>> criteria = {
      {1, criterion1}, {8, criterion8}, {7, criterion7}, {3, criterion3},
      {4, criterion4}, {2, criterion2}, {5, criterion5}, {6, criterion6},
  };
  const std::map<int, std::string> names = {
      {1, "gradient fidelity"},   {2, "attention invariants"}, {3, "case 1 voltage"},
      {4, "case 3 accuracy"},     {5, "VAW localization"},     {6, "determinism"},
      {7, "format round trips"},  {8, "preprocessing oracles"},
  };

  Runner runner(s);
  std::map<int, Verdict> verdicts;
  for (const auto& [id, fn] : criteria) {
    if (!s.only.empty() && !s.only.contains(id)) continue;
    Verdict v;
    try {
      v = fn(runner);
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    std::cout << "criterion " << id << " (" << names.at(id) << "): " << (v.pass ? "PASS" : "FAIL") << "  "
              << v.detail << std::endl;
    verdicts[id] = v;
  }

  std::cout << "\nsummary\n";
  bool all = true;
  for (const auto& [id, v] : verdicts) {
    std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << '\n';
    all = all && v.pass;
  }
  return all ? 0 : 1;
}
