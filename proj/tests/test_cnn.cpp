#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "memo/checkpoint.hpp"
#include "memo/cnn.hpp"
#include "memo/errors.hpp"
#include "reference_cnn.hpp"
#include "test_support.hpp"

using namespace memo;

namespace {

CnnArch small_arch(std::size_t channels = 2, std::size_t size = 16) {
  CnnArch a;
  a.in_channels = channels;
  a.input_size = size;
  a.conv_features = 3;
  a.kernel = 4;
  a.fc_features = 8;
  a.num_classes = 3;
  return a;
}

template <typename Real>
std::vector<Real> random_input(const CnnArch& a, std::mt19937_64& rng) {
  std::vector<Real> v(a.input_count());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& x : v) x = static_cast<Real>(u(rng));
  return v;
}

}  // namespace

TEST(Cnn, ZeroInputGivesZeroLogits) {
  const auto a = small_arch();
  Cnn<double> model(a, 3);
  const std::vector<double> zero(a.input_count(), 0.0);
  for (double v : model.logits(zero)) EXPECT_EQ(v, 0.0);
}

TEST(Cnn, ForwardMatchesReference) {
  std::mt19937_64 rng(21);
  CnnArch a = small_arch(2, 64);
  a.conv_features = 4;
  a.kernel = 6;
  Cnn<double> model(a, 11);
  const auto input = random_input<double>(a, rng);
  const auto got = model.logits(input);
  const auto want = memo_test::ref_forward(memo_test::RefNet(model), input).logits;
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t k = 0; k < got.size(); ++k) {
    EXPECT_TRUE(memo_test::close_enough(got[k], want[k], 1e-6, 1e-12)) << got[k] << " vs " << want[k];
  }
}

TEST(Cnn, FloatForwardTracksDouble) {
  std::mt19937_64 rng(5);
  const auto a = small_arch(3, 32);
  Cnn<float> f(a, 8);
  Cnn<double> d(a, 8);
  const auto in_d = random_input<double>(a, rng);
  const std::vector<float> in_f(in_d.begin(), in_d.end());
  const auto lf = f.logits(in_f);
  const auto ld = d.logits(in_d);
  for (std::size_t k = 0; k < lf.size(); ++k) EXPECT_NEAR(lf[k], ld[k], 1e-4);
}

TEST(Cnn, EvalIsDeterministic) {
  std::mt19937_64 rng(1);
  const auto a = small_arch();
  Cnn<float> model(a, 2);
  const auto x = random_input<float>(a, rng);
  EXPECT_EQ(model.logits(x), model.logits(x));
}

TEST(Cnn, DropoutMasksUseInvertedScaling) {
  Cnn<double> model(small_arch(), 4);
  const auto m = model.sample_masks(77);
  std::size_t kept = 0;
  for (double v : m.conv1) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    kept += v != 0.0;
  }
  EXPECT_GT(kept, m.conv1.size() / 4);
  EXPECT_LT(kept, 3 * m.conv1.size() / 4);
  EXPECT_EQ(model.sample_masks(77).fc1, m.fc1);
}

TEST(Cnn, UniformLogitsLossIsLogN) {
  for (std::size_t n : {2u, 3u, 7u}) {
    const std::vector<double> logits(n, 0.25);
    EXPECT_NEAR(cross_entropy<double>(logits, 1), std::log(static_cast<double>(n)), 1e-12);
  }
  const std::vector<double> big{1000.0, 0.0};
  EXPECT_NEAR(cross_entropy<double>(big, 1), 1000.0, 1e-9);
}

TEST(Cnn, ArgmaxTiesPickLowest) {
  const std::vector<float> v{1.0f, 3.0f, 3.0f};
  EXPECT_EQ(argmax<float>(v), 1u);
}

TEST(Cnn, Fc2BiasGradientClosedForm) {
  std::mt19937_64 rng(6);
  const auto a = small_arch();
  Cnn<double> model(a, 9);
  std::vector<std::vector<double>> inputs;
  for (int s = 0; s < 4; ++s) inputs.push_back(random_input<double>(a, rng));
  Batch<double> batch(inputs.begin(), inputs.end());
  const std::vector<std::size_t> labels{0, 2, 1, 2};
  const auto lg = loss_and_backward<double>(model, batch, labels, {});
  std::vector<double> want(a.num_classes, 0.0);
  double loss = 0.0;
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    const auto logits = model.logits(inputs[s]);
    const auto p = softmax<double>(logits);
    loss += -std::log(p[labels[s]]);
    for (std::size_t c = 0; c < a.num_classes; ++c) want[c] += (p[c] - (c == labels[s])) / 4.0;
  }
  EXPECT_NEAR(lg.loss, loss / 4.0, 1e-12);
  const auto off = model.tensor_offset(ParamTensor::fc2_bias);
  for (std::size_t c = 0; c < a.num_classes; ++c) EXPECT_NEAR(lg.grad[off + c], want[c], 1e-12);
}

TEST(Cnn, GradientsMatchFiniteDifferences) {
  int checked = 0;
  for (std::uint64_t seed = 100; checked < 3; ++seed) {
    const auto out = memo_test::gradient_check_instance(seed);
    if (out.resample) continue;
    EXPECT_TRUE(out.ok) << out.failure;
    EXPECT_GT(out.params_checked, 0u);
    ++checked;
  }
}

TEST(Cnn, InputGradientMatchesReference) {
  std::mt19937_64 rng(31);
  const auto a = small_arch();
  Cnn<double> model(a, 12);
  const auto x = random_input<double>(a, rng);
  Cnn<double>::Cache c;
  model.forward(x, nullptr, c);
  std::vector<double> dlogits(a.num_classes, 0.0);
  dlogits[1] = 1.0;
  std::vector<double> grad(a.input_count());
  model.backward(c, dlogits, {}, grad);
  const memo_test::RefNet net(model);
  const auto want = memo_test::ref_input_grad(net, memo_test::ref_forward(net, x), 1, false);
  for (std::size_t k = 0; k < grad.size(); ++k) ASSERT_NEAR(grad[k], want[k], 1e-9);
}

TEST(Cnn, ZeroLearningRateLeavesParameters) {
  std::mt19937_64 rng(2);
  const auto a = small_arch();
  Cnn<float> model(a, 1);
  const std::vector<float> before(model.params().begin(), model.params().end());
  std::vector<float> grads(before.size());
  for (auto& g : grads) g = static_cast<float>(std::normal_distribution<double>()(rng));
  AdamW opt(0.0, 0.1);
  for (int i = 0; i < 5; ++i) opt.step<float>(model.params(), grads);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), model.params().begin()));
}

TEST(Cnn, WeightDecayOnlyShrinks) {
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g(3, 0.0);
  AdamW opt(0.01, 0.1);
  opt.step<double>(p, g);
  EXPECT_DOUBLE_EQ(p[0], 1.0 * (1 - 0.001));
  EXPECT_DOUBLE_EQ(p[1], -2.0 * (1 - 0.001));
}

TEST(Cnn, AdamFirstStepMovesByLearningRate) {
  std::vector<double> p{0.0, 0.0};
  const std::vector<double> g{3.0, -0.2};
  AdamW opt(0.01, 0.0);
  opt.step<double>(p, g);
  EXPECT_NEAR(p[0], -0.01, 1e-8);
  EXPECT_NEAR(p[1], 0.01, 1e-7);
}

TEST(Cnn, OverfitsToySet) {
  std::mt19937_64 rng(3);
  CnnArch a = small_arch(2, 16);
  a.dropout = 0.0;
  a.fc_features = 32;
  Cnn<float> model(a, 5);
  std::vector<std::vector<float>> inputs;
  std::vector<TrainExample<float>> data;
  for (int s = 0; s < 32; ++s) inputs.push_back(random_input<float>(a, rng));
  for (int s = 0; s < 32; ++s) data.push_back({inputs[s], static_cast<std::size_t>(s % 3)});
  CnnConfig cfg;
  cfg.dropout = 0.0;
  cfg.learning_rate = 3e-3;
  cfg.weight_decay = 0.0;
  cfg.seed = 5;
  TrainOptions opts;
  opts.epochs = 200;
  opts.keep_snapshots = false;
  const auto snaps = train<float>(model, data, cfg, opts);
  ASSERT_EQ(snaps.size(), 200u);
  Batch<float> batch(inputs.begin(), inputs.end());
  std::vector<std::size_t> labels;
  for (const auto& d : data) labels.push_back(d.label);
  const auto lg = loss_and_backward<float>(model, batch, labels, {});
  EXPECT_LT(lg.loss, 0.01);
  std::size_t correct = 0;
  for (const auto& d : data) correct += argmax<float>(model.logits(d.input)) == d.label;
  EXPECT_EQ(correct, data.size());
}

TEST(Cnn, TrainingIsReproducibleAndThreadInvariant) {
  std::mt19937_64 rng(4);
  const auto a = small_arch();
  std::vector<std::vector<float>> inputs;
  std::vector<TrainExample<float>> data;
  for (int s = 0; s < 40; ++s) inputs.push_back(random_input<float>(a, rng));
  for (int s = 0; s < 40; ++s) data.push_back({inputs[s], static_cast<std::size_t>(s % 3)});
  CnnConfig cfg;
  cfg.seed = 17;
  auto run = [&](unsigned threads) {
    Cnn<float> model(a, cfg.seed);
    TrainOptions opts;
    opts.threads = threads;
    opts.epochs = 2;
    return train<float>(model, data, cfg, opts);
  };
  const auto one = run(1);
  const auto again = run(1);
  const auto four = run(4);
  ASSERT_EQ(one.size(), 2u);
  EXPECT_EQ(one[1].params, again[1].params);
  EXPECT_EQ(one[1].params, four[1].params);
  EXPECT_NE(one[0].params, one[1].params);
}

TEST(Cnn, EmptyDatasetRejected) {
  Cnn<float> model(small_arch(), 1);
  EXPECT_THROW(train<float>(model, {}, CnnConfig{}), ArgumentError);
}

TEST(Cnn, ShapeErrors) {
  const auto a = small_arch();
  Cnn<float> model(a, 1);
  const std::vector<float> wrong(a.input_count() - 1, 0.0f);
  EXPECT_THROW(model.logits(wrong), ArgumentError);
  std::vector<float> x(a.input_count(), 0.0f);
  Batch<float> batch{x};
  const std::vector<std::size_t> labels{5};
  EXPECT_THROW(loss_and_backward<float>(model, batch, labels, {}), ArgumentError);
}

TEST(Cnn, NonFiniteInputNamesLayer) {
  const auto a = small_arch();
  Cnn<float> model(a, 1);
  std::vector<float> x(a.input_count(), 0.0f);
  x[3] = std::numeric_limits<float>::infinity();
  try {
    model.logits(x);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("input"), std::string::npos);
  }
}

TEST(Cnn, ParamCountDegenerateCase) {
  CnnArch a;
  a.in_channels = 1;
  a.conv_features = 1;
  a.kernel = 1;
  a.num_classes = 1;
  EXPECT_EQ(a.param_count(), 16517u);
  EXPECT_EQ(Cnn<float>(a, 0).param_count(), 16517u);
}

TEST(Cnn, ParamCountEqualsTensorSum) {
  for (const auto& cfg : config_grid(36, 4)) {
    Cnn<float> model(CnnArch::from_config(cfg), 0);
    std::size_t sum = 0;
    for (std::size_t t = 0; t < kParamTensorCount; ++t) sum += model.tensor(static_cast<ParamTensor>(t)).size();
    EXPECT_EQ(sum, param_count(cfg));
    EXPECT_EQ(sum, model.param_count());
  }
}

TEST(Cnn, ConfigGrid) {
  const auto grid = config_grid(32, 3);
  ASSERT_EQ(grid.size(), 8u);
  std::set<std::string> ids;
  for (const auto& c : grid) {
    ids.insert(c.id());
    EXPECT_EQ(c.batch_size, 16u);
    EXPECT_EQ(c.dropout, 0.5);
    EXPECT_EQ(c.fc_features, 64u);
    EXPECT_EQ(c.in_channels, 32u);
  }
  EXPECT_EQ(ids.size(), 8u);
  EXPECT_EQ(grid, config_grid(32, 3));
  EXPECT_EQ(grid[0].id(), "max-f10-k6");
  EXPECT_EQ(grid[4].id(), "mean-f10-k6");
}

TEST(Cnn, InvalidArchitecture) {
  CnnArch a = small_arch();
  a.input_size = 6;
  EXPECT_THROW(Cnn<float>(a, 0), ConfigError);
  a = small_arch();
  a.conv_features = 0;
  EXPECT_THROW(a.param_count(), ConfigError);
}

// --- checkpoints -------------------------------------------------------------

TEST(Checkpoint, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "memo_ckpt";
  std::filesystem::create_directories(dir);
  CnnConfig cfg = config_grid(4, 3, 9)[3];
  Checkpoint ck{cfg, 2, {}};
  const Cnn<float> model(CnnArch::from_config(cfg), 9);
  ck.params.assign(model.params().begin(), model.params().end());
  write_checkpoint(ck, dir / "a.mtck");
  const auto back = read_checkpoint(dir / "a.mtck");
  EXPECT_EQ(back.config, cfg);
  EXPECT_EQ(back.epoch, 2u);
  EXPECT_EQ(back.params, ck.params);
  const auto rebuilt = model_from_checkpoint(back);
  EXPECT_TRUE(std::equal(rebuilt.params().begin(), rebuilt.params().end(), model.params().begin()));
}

TEST(Checkpoint, CorruptionDetected) {
  const auto dir = std::filesystem::temp_directory_path() / "memo_ckpt";
  std::filesystem::create_directories(dir);
  CnnConfig cfg = config_grid(2, 3)[0];
  const Cnn<float> model(CnnArch::from_config(cfg), 1);
  Checkpoint ck{cfg, 1, std::vector<float>(model.params().begin(), model.params().end())};
  write_checkpoint(ck, dir / "b.mtck");
  std::filesystem::resize_file(dir / "b.mtck", std::filesystem::file_size(dir / "b.mtck") - 4);
  EXPECT_THROW(read_checkpoint(dir / "b.mtck"), LengthError);
  EXPECT_THROW(read_checkpoint(dir / "missing.mtck"), StorageError);
  ck.params.pop_back();
  EXPECT_THROW(model_from_checkpoint(ck), Error);
}

TEST(Checkpoint, ConfigJson) {
  const auto cfg = config_grid(8, 4, 3)[5];
  EXPECT_EQ(config_from_json(config_to_json(cfg)), cfg);
  EXPECT_THROW(config_from_json(R"({"kernal": 6})"), ConfigError);
}
