#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <unistd.h>

#include "xrdattn/checkpoint.hpp"
#include "xrdattn/errors.hpp"
#include "xrdattn/train.hpp"

namespace xrdattn::train {
namespace {

namespace fs = std::filesystem;
using model::Model;
using model::ModelConfig;
using preproc::ProcessedSample;

ModelConfig small_config(int case_id) {
  ModelConfig c;
  c.input_len = 32;
  c.filters = 6;
  c.case_id = case_id;
  return c;
}

std::vector<ProcessedSample> make_samples(std::size_t per_rate, std::uint64_t seed) {
  std::vector<synth::SampleRecord> records;
  for (auto rate : {synth::Rate::Slow, synth::Rate::Normal}) {
    synth::CellProtocol p;
    p.n_samples = per_rate;
    p.rate = rate;
    p.seed = seed;
    auto r = synth::generate_dataset(p, synth::GeneratorConfig{});
    records.insert(records.end(), r.begin(), r.end());
  }
  preproc::PreprocessOptions o;
  o.out_len = 32;
  return preproc::process(records, o);
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

class Data : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { samples_ = new std::vector<ProcessedSample>(make_samples(200, 5)); }
  static void TearDownTestSuite() { delete samples_; }
  static const std::vector<ProcessedSample>& samples() { return *samples_; }
  static std::vector<ProcessedSample>* samples_;
};
std::vector<ProcessedSample>* Data::samples_ = nullptr;

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("xrdattn_train_test_" + std::to_string(::getpid()) + "_" + name);
}

TEST(Adam, ZeroGradientLeavesParameter) {
  std::vector<double> p{1.0, -2.0, 3.0}, g(3, 0.0), m(3, 0.0), v(3, 0.0);
  const auto before = p;
  for (std::size_t t = 1; t <= 5; ++t) adam_update(p, g, m, v, t, AdamConfig{});
  EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepClosedForm) {
  const AdamConfig cfg{};
  std::vector<double> p{0.5, 0.5, 0.5, 0.5}, g{2.0, -0.3, 1e-6, -7.0}, m(4, 0.0), v(4, 0.0);
  adam_update(p, g, m, v, 1, cfg);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(p[i], 0.5 - cfg.learning_rate * g[i] / (std::abs(g[i]) + cfg.eps), 1e-15);
  }
}

TEST(Adam, ConstantGradientStepApproachesLearningRate) {
  const AdamConfig cfg{};
  std::vector<double> p{0.0}, g{0.37}, m(1, 0.0), v(1, 0.0);
  double step = 0;
  for (std::size_t t = 1; t <= 5000; ++t) {
    const double before = p[0];
    adam_update(p, g, m, v, t, cfg);
    step = before - p[0];
  }
  EXPECT_NEAR(step, cfg.learning_rate, 1e-10);
}

TEST(Adam, Errors) {
  std::vector<double> p(2), g(3), m(2), v(2);
  EXPECT_THROW(adam_update(p, g, m, v, 1, AdamConfig{}), ShapeError);
  std::vector<double> g2(2);
  EXPECT_THROW(adam_update(p, g2, m, v, 0, AdamConfig{}), DomainError);
}

TEST(TrainConfig, RejectsNonPositive) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.adam.learning_rate = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST_F(Data, OneStepDecreasesLossOnFixedBatch) {
  const auto idx = iota(16);
  auto x = make_input(samples(), idx);
  auto t = make_targets(samples(), idx);
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto cfg = small_config(3);
    auto m = Model::build(cfg, seed);
    auto loss0 = model::case_loss(m.forward(x, model::BnMode::Train).heads, t, cfg);
    ad::backward(loss0.total);
    AdamState st;
    adam_step(m.parameters(), st, AdamConfig{.learning_rate = 1e-4});
    m.zero_grad();
    const double after = model::case_loss(m.forward(x, model::BnMode::Train).heads, t, cfg).total.item();
    decreased += after < loss0.total.item();
  }
  EXPECT_GE(decreased, 95);
}

TEST_F(Data, ZeroLearningRateFreezesEverything) {
  std::vector<ProcessedSample> tr(samples().begin(), samples().begin() + 20);
  std::vector<ProcessedSample> va(samples().begin() + 20, samples().begin() + 40);
  auto cfg = small_config(3);
  cfg.bn_momentum = 0.0;
  auto m = Model::build(cfg, 3);
  auto before = m.clone();
  TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 64;
  tc.adam.learning_rate = 0.0;
  auto r = train(std::move(m), tr, va, tc, preproc::VoltageWindow{});
  ASSERT_EQ(r.history.size(), 4u);
  for (const auto& e : r.history) {
    EXPECT_EQ(nlohmann::json(e.validation), nlohmann::json(r.history[0].validation));
    EXPECT_NEAR(e.train_loss, r.history[0].train_loss, 1e-12);
  }
  auto pa = before.parameters(), pb = r.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(std::ranges::equal(pa[i].tensor.data(), pb[i].tensor.data())) << pa[i].name;
  }
}

TEST_F(Data, VoltageOnlyWeightsReportVoltageLoss) {
  auto cfg = small_config(3);
  cfg.loss_weights = {1, 0, 0};
  auto m = Model::build(cfg, 4);
  auto metrics = evaluate(m, samples(), preproc::VoltageWindow{});
  const auto idx = iota(samples().size());
  ad::NoGradGuard g;
  auto out = m.forward(make_input(samples(), idx), model::BnMode::Eval);
  auto l = model::case_loss(out.heads, make_targets(samples(), idx), cfg);
  EXPECT_EQ(l.total.item(), l.voltage);
  EXPECT_NEAR(metrics.total_loss, l.voltage, 1e-12);
}

TEST_F(Data, PerfectPredictionsScoreExactly) {
  auto cfg = small_config(3);
  auto m = Model::build(cfg, 6);
  auto fake = samples();
  {
    ad::NoGradGuard g;
    auto out = m.forward(make_input(fake, iota(fake.size())), model::BnMode::Eval);
    for (std::size_t i = 0; i < fake.size(); ++i) {
      fake[i].voltage_norm = out.heads.voltage.at(i);
      auto mode = out.heads.mode_logits.data().subspan(i * 4, 4);
      auto rate = out.heads.rate_logits.data().subspan(i * 2, 2);
      fake[i].mode_class = static_cast<std::size_t>(std::ranges::max_element(mode) - mode.begin());
      fake[i].rate_class = static_cast<std::size_t>(std::ranges::max_element(rate) - rate.begin());
      fake[i].mode_onehot.assign(4, 0.0);
      fake[i].mode_onehot[fake[i].mode_class] = 1.0;
      fake[i].rate_onehot.assign(2, 0.0);
      fake[i].rate_onehot[fake[i].rate_class] = 1.0;
    }
  }
  auto metrics = evaluate(m, fake, preproc::VoltageWindow{});
  EXPECT_LT(metrics.voltage_mae_norm, 1e-12);
  EXPECT_EQ(*metrics.mode_accuracy, 1.0);
  EXPECT_EQ(*metrics.rate_accuracy, 1.0);
}

TEST_F(Data, ConstantPredictorGivesMeanAbsoluteDeviation) {
  auto cfg = small_config(1);
  auto m = Model::build(cfg, 7);
  double mean = 0;
  for (const auto& s : samples()) mean += s.voltage_norm / static_cast<double>(samples().size());
  for (auto& p : m.parameters()) {
    if (p.name == "head.voltage.w") std::ranges::fill(p.tensor.data(), 0.0);
    if (p.name == "head.voltage.b") p.tensor.data()[0] = mean;
  }
  double mad = 0;
  for (const auto& s : samples()) mad += std::abs(s.voltage_norm - mean) / static_cast<double>(samples().size());
  const preproc::VoltageWindow w;
  auto metrics = evaluate(m, samples(), w);
  EXPECT_NEAR(metrics.voltage_mae_norm, mad, 1e-12);
  EXPECT_NEAR(metrics.voltage_mae_volts, mad * (w.hi - w.lo), 1e-12);
  EXPECT_FALSE(metrics.mode_accuracy);
  EXPECT_FALSE(metrics.rate_accuracy);
  EXPECT_TRUE(nlohmann::json(metrics).at("mode_accuracy").is_null());
}

TEST_F(Data, EvaluationIgnoresOrder) {
  auto m = Model::build(small_config(3), 8);
  auto shuffled = samples();
  std::mt19937_64 rng(1);
  std::ranges::shuffle(shuffled, rng);
  auto a = evaluate(m, samples(), preproc::VoltageWindow{});
  auto b = evaluate(m, shuffled, preproc::VoltageWindow{}, 17);
  EXPECT_NEAR(a.voltage_mae_norm, b.voltage_mae_norm, 1e-12);
  EXPECT_NEAR(a.total_loss, b.total_loss, 1e-12);
  EXPECT_EQ(*a.mode_accuracy, *b.mode_accuracy);
  EXPECT_EQ(*a.rate_accuracy, *b.rate_accuracy);
}

TEST_F(Data, SameSeedSameMetricsAndLearning) {
  auto [tr, va] = preproc::split_half(samples(), 7);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 16;
  auto run = [&] { return train(Model::build(small_config(3), 7), tr, va, tc, preproc::VoltageWindow{}); };
  auto a = run(), b = run();
  EXPECT_EQ(metrics_json(a, tc).dump(), metrics_json(b, tc).dump());
  EXPECT_LT(a.history.back().train_loss, a.history.front().train_loss);
  const auto j = metrics_json(a, tc);
  for (const char* key : {"best_epoch", "validation", "training", "history", "model_config", "train_config"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
}

TEST_F(Data, CaseArityMismatchRejected) {
  auto two_class = samples();
  for (auto& s : two_class) s.mode_onehot.resize(2);
  TrainConfig tc;
  tc.epochs = 1;
  EXPECT_THROW(train(Model::build(small_config(3), 1), two_class, two_class, tc, preproc::VoltageWindow{}),
               ArityError);
}

TEST_F(Data, CheckpointRoundTripIsBitExact) {
  auto cfg = small_config(3);
  cfg.head_hidden = 5;
  auto m = Model::build(cfg, 9);
  m.forward(make_input(samples(), iota(8)), model::BnMode::Train);  // non-default running stats
  CheckpointMeta meta;
  meta.global_range = {1.5, 2.5e4};
  meta.split_seed = 11;
  const auto path = temp_path("rt.xaw");
  save_checkpoint(m, meta, path);
  auto ck = load_checkpoint(path);
  fs::remove(path);
  EXPECT_EQ(nlohmann::json(ck.model.config()), nlohmann::json(cfg));
  EXPECT_EQ(ck.meta.split_seed, 11u);
  EXPECT_EQ(ck.meta.global_range, meta.global_range);
  EXPECT_EQ(ck.model.bn_state().running_mean, m.bn_state().running_mean);
  EXPECT_EQ(ck.model.bn_state().running_var, m.bn_state().running_var);
  auto pa = m.parameters(), pb = ck.model.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(std::ranges::equal(pa[i].tensor.data(), pb[i].tensor.data()));
  auto x = make_input(samples(), iota(4));
  auto a = m.forward(x, model::BnMode::Eval), b = ck.model.forward(x, model::BnMode::Eval);
  EXPECT_TRUE(std::ranges::equal(a.heads.voltage.data(), b.heads.voltage.data()));
  EXPECT_TRUE(std::ranges::equal(a.heads.mode_logits.data(), b.heads.mode_logits.data()));
  EXPECT_TRUE(std::ranges::equal(a.attention.weights.data(), b.attention.weights.data()));
}

class CheckpointFile : public ::testing::Test {
 protected:
  void SetUp() override {
    path_ = temp_path("bad.xaw");
    save_checkpoint(Model::build(small_config(1), 1), CheckpointMeta{}, path_);
    std::ifstream is(path_, std::ios::binary);
    bytes_.assign(std::istreambuf_iterator<char>(is), {});
  }
  void TearDown() override { fs::remove(path_); }
  void rewrite(const std::string& bytes) {
    std::ofstream os(path_, std::ios::binary | std::ios::trunc);
    os << bytes;
  }
  fs::path path_;
  std::string bytes_;
};

TEST_F(CheckpointFile, HeaderLayout) {
  ASSERT_GT(bytes_.size(), 8u);
  EXPECT_EQ(bytes_.substr(0, 4), "XAW1");
  std::uint32_t len = 0;
  for (int i = 3; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes_[4 + i]);
  auto header = nlohmann::json::parse(bytes_.substr(8, len));
  EXPECT_EQ(header.at("format_version"), kCheckpointVersion);
  EXPECT_TRUE(header.contains("model_config"));
  EXPECT_TRUE(header.contains("v_window"));
  std::size_t total = 0;
  for (const auto& t : header.at("tensors")) {
    EXPECT_EQ(t.at("offset").get<std::size_t>(), total);
    total += 8 * ad::shape_numel(t.at("shape").get<ad::Shape>());
  }
  EXPECT_EQ(8 + len + total, bytes_.size());
}

TEST_F(CheckpointFile, TruncationIsFormatError) {
  for (std::size_t keep : {bytes_.size() - 1, bytes_.size() / 2, std::size_t{12}, std::size_t{6}}) {
    rewrite(bytes_.substr(0, keep));
    EXPECT_THROW(load_checkpoint(path_), FormatError) << keep;
  }
}

TEST_F(CheckpointFile, ForeignMagicIsVersionError) {
  auto b = bytes_;
  b[3] = '2';
  rewrite(b);
  EXPECT_THROW(load_checkpoint(path_), VersionError);
}

TEST_F(CheckpointFile, CorruptHeaderIsFormatError) {
  auto b = bytes_;
  b[9] = '#';
  rewrite(b);
  EXPECT_THROW(load_checkpoint(path_), FormatError);
}

TEST_F(CheckpointFile, MissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint(path_.string() + ".absent"), IoError);
}

TEST_F(CheckpointFile, CaseMismatchIsArityError) {
  auto ck = load_checkpoint(path_);
  EXPECT_NO_THROW(require_case(ck, 1));
  EXPECT_THROW(require_case(ck, 3), ArityError);
}

}  // namespace
}  // namespace xrdattn::train
