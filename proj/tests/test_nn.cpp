#include <cmath>
#include <cstring>
#include <limits>

#include <gtest/gtest.h>

#include "wmark/nn.hpp"

namespace wmark {
namespace {

using ModelD = Mlp<double>;

// Plain-loop reference for the mean NLL, written without Eigen expressions.
double reference_loss(const ModelD& m, const Eigen::MatrixXd& inputs, const std::vector<int>& labels) {
  double total = 0.0;
  for (Eigen::Index c = 0; c < inputs.cols(); ++c) {
    std::vector<double> a(static_cast<std::size_t>(inputs.rows()));
    for (Eigen::Index r = 0; r < inputs.rows(); ++r) a[static_cast<std::size_t>(r)] = inputs(r, c) - 0.5;
    for (std::size_t li = 0; li < m.num_layers(); ++li) {
      const auto& l = m.layers()[li];
      std::vector<double> z(static_cast<std::size_t>(l.weights.rows()));
      for (Eigen::Index o = 0; o < l.weights.rows(); ++o) {
        double s = l.bias(o);
        for (Eigen::Index i = 0; i < l.weights.cols(); ++i) s += l.weights(o, i) * a[static_cast<std::size_t>(i)];
        z[static_cast<std::size_t>(o)] = (li + 1 < m.num_layers()) ? std::max(0.0, s) : s;
      }
      a = std::move(z);
    }
    double mx = a[0];
    for (double v : a) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : a) sum += std::exp(v - mx);
    total += -(a[static_cast<std::size_t>(labels[static_cast<std::size_t>(c)])] - mx - std::log(sum));
  }
  return total / static_cast<double>(inputs.cols());
}

TEST(Gradient, MatchesCentralDifferences) {
  Rng rng(11);
  ModelD m = ModelD::random({6, 5, 4, 3}, rng);
  for (auto& l : m.layers()) {
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = rng.uniform(-0.2, 0.2);
  }
  Eigen::MatrixXd x(6, 7);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform();
  const std::vector<int> y = {0, 1, 2, 1, 0, 2, 2};

  const auto g = nll_loss_gradient(m, x, y);
  EXPECT_NEAR(g.loss, reference_loss(m, x, y), 1e-12);

  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t li = 0; li < m.num_layers(); ++li) {
    auto check = [&](double& param, double analytic) {
      const double saved = param;
      param = saved + h;
      const double up = reference_loss(m, x, y);
      param = saved - h;
      const double down = reference_loss(m, x, y);
      param = saved;
      const double numeric = (up - down) / (2 * h);
      const double rel = std::abs(numeric - analytic) / std::max(1e-8, std::abs(numeric) + std::abs(analytic));
      worst = std::max(worst, rel);
    };
    auto& l = m.layers()[li];
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) check(l.weights(r, c), g.grads[li].weights(r, c));
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) check(l.bias(r), g.grads[li].bias(r));
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Softmax, SumsToOneOn10000ForwardPasses) {
  Rng rng(12);
  Model m = Model::random({64, 128, 128, 10}, rng);
  Eigen::MatrixXf x(64, 10000);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(rng.uniform());
  const Eigen::MatrixXf p = m.probabilities(x);
  double worst = 0.0;
  for (Eigen::Index c = 0; c < p.cols(); ++c) {
    worst = std::max(worst, std::abs(static_cast<double>(p.col(c).sum()) - 1.0));
    ASSERT_GE(p.col(c).minCoeff(), 0.0f);
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(Softmax, StableForLargeLogits) {
  Eigen::VectorXf z(3);
  z << 1000.0f, 999.0f, -1000.0f;
  const auto p = Model::softmax(z);
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p.sum(), 1.0f, 1e-6f);
}

TEST(Classify, ZeroWeightsGiveLabelZero) {
  const Model m = Model::zeros({8, 4, 5});
  Rng rng(13);
  for (int i = 0; i < 20; ++i) {
    std::vector<float> x(8);
    for (auto& v : x) v = static_cast<float>(rng.uniform());
    EXPECT_EQ(m.classify(x), 0);
  }
}

TEST(Classify, TiesGoToLowestIndex) {
  Eigen::VectorXf s(4);
  s << 1.0f, 3.0f, 3.0f, 2.0f;
  EXPECT_EQ(Model::argmax(s), 1);
}

TEST(Classify, DeterministicAndDimensionChecked) {
  Rng rng(14);
  const Model m = Model::random({8, 6, 3}, rng);
  std::vector<float> x(8, 0.3f);
  EXPECT_EQ(m.classify(x), m.classify(x));
  std::vector<float> bad(7, 0.3f);
  EXPECT_THROW(m.classify(bad), DimensionError);
}

TEST(Model, ArchitectureValidation) {
  EXPECT_THROW(Model::zeros({8}), Error);
  EXPECT_THROW(Model::zeros({8, 1}), Error);
  EXPECT_THROW(Model::zeros({8, 0, 3}), Error);
}

LabeledSet blobs(int n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXf x(2, n);
  std::vector<int> y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int c = i % 2;
    x(0, i) = static_cast<float>(std::clamp(0.25 + 0.5 * c + 0.05 * rng.normal(), 0.0, 1.0));
    x(1, i) = static_cast<float>(std::clamp(0.5 + 0.1 * rng.normal(), 0.0, 1.0));
    y[static_cast<std::size_t>(i)] = c;
  }
  return {std::move(x), std::move(y)};
}

TEST(Train, OneEpochImprovesSeparableBlobs) {
  const LabeledSet data = blobs(200, 15);
  // Output biases favour class 1 so the untrained model is at 50%.
  Model init = Model::zeros({2, 2});
  init.layers()[0].bias(1) = 1.0f;
  const double before = accuracy(init, data);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 10;
  cfg.learning_rate = 0.5;
  const Model after = train(data, LabeledSet{}, cfg, init);
  EXPECT_DOUBLE_EQ(before, 0.5);
  EXPECT_GT(accuracy(after, data), before);
}

TEST(Train, ZeroEpochsReturnsModelUnchanged) {
  Rng rng(16);
  const Model m = Model::random({2, 4, 2}, rng);
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_TRUE(train(blobs(20, 1), LabeledSet{}, cfg, m).bitwise_equal(m));
}

TEST(Train, DeterministicGivenSeed) {
  const LabeledSet data = blobs(100, 17);
  LabeledSet trig = blobs(4, 18);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 5;
  const Model init = fresh_model({2, 8, 2}, 1);
  const Model a = train(data, trig, cfg, init);
  const Model b = train(data, trig, cfg, init);
  EXPECT_TRUE(a.bitwise_equal(b));
  cfg.seed = 6;
  EXPECT_FALSE(train(data, trig, cfg, init).bitwise_equal(a));
}

TEST(Train, Errors) {
  const LabeledSet data = blobs(20, 19);
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train(data, LabeledSet{}, cfg, Model::zeros({3, 2})), DimensionError);
  EXPECT_THROW(train(LabeledSet{}, LabeledSet{}, cfg, Model::zeros({2, 2})), Error);
  TrainConfig no_k = cfg;
  no_k.k_trigger_per_batch = 0;
  EXPECT_THROW(train(data, blobs(2, 3), no_k, Model::zeros({2, 2})), Error);
  TrainConfig big_k = cfg;
  big_k.k_trigger_per_batch = big_k.batch_size + 1;
  EXPECT_THROW(big_k.validate(), Error);
  TrainConfig huge = cfg;
  huge.learning_rate = 1e30;
  huge.batch_size = 5;
  Model m = Model::zeros({2, 2});
  m.layers()[0].weights.setConstant(1e30f);
  m.layers()[0].weights(1, 0) = std::numeric_limits<float>::infinity();
  EXPECT_THROW(train(data, LabeledSet{}, huge, m), TrainingError);
}

TEST(Train, LearningRateScheduleAndFinalRate) {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.lr_halving_period_epochs = 20;
  EXPECT_DOUBLE_EQ(cfg.learning_rate_at(0), 0.1);
  EXPECT_DOUBLE_EQ(cfg.learning_rate_at(19), 0.1);
  EXPECT_NEAR(cfg.learning_rate_at(20), 0.01, 1e-15);
  EXPECT_NEAR(cfg.learning_rate_at(59), 0.001, 1e-15);
  cfg.epochs = 2;
  cfg.lr_halving_period_epochs = 1;
  const Model m = train(blobs(20, 2), LabeledSet{}, cfg, Model::zeros({2, 2}));
  EXPECT_NEAR(m.final_learning_rate(), 0.01, 1e-15);
}

TEST(Train, OutputLayerOnlyFreezesBody) {
  const LabeledSet data = blobs(60, 20);
  const Model init = fresh_model({2, 8, 8, 2}, 3);
  TrainConfig cfg;
  cfg.epochs = 2;
  const Model out = train(data, LabeledSet{}, cfg, init, LayerScope::OutputLayerOnly);
  for (std::size_t i = 0; i + 1 < init.num_layers(); ++i) EXPECT_TRUE(out.layers()[i].bitwise_equal(init.layers()[i]));
  EXPECT_FALSE(out.output_layer().bitwise_equal(init.output_layer()));
}

TEST(Accuracy, SingleCorrectExampleAndDuplication) {
  Rng rng(21);
  const Model m = Model::random({2, 4, 2}, rng);
  const LabeledSet s = blobs(30, 22);
  Eigen::MatrixXf one = s.inputs.col(0);
  const LabeledSet single(one, {m.classify(s.input(0))});
  EXPECT_DOUBLE_EQ(accuracy(m, single), 1.0);
  EXPECT_DOUBLE_EQ(accuracy(m, LabeledSet::concat(s, s)), accuracy(m, s));
  EXPECT_THROW(accuracy(m, LabeledSet{}), Error);
}

TEST(LabeledSet, Validation) {
  EXPECT_THROW(LabeledSet(Eigen::MatrixXf::Zero(2, 3), {0, 1}), Error);
  Eigen::MatrixXf out_of_box = Eigen::MatrixXf::Constant(2, 1, 1.5f);
  EXPECT_THROW(LabeledSet(out_of_box, {0}), Error);
}

TEST(ReplaceOutputLayer, BodyUnchangedHeadReplaced) {
  const Model m = fresh_model({4, 6, 3}, 9);
  Rng r1(1), r2(1);
  auto [a, head_a] = replace_output_layer(m, 3, r1);
  auto [b, head_b] = replace_output_layer(m, 3, r2);
  EXPECT_TRUE(a.layers()[0].bitwise_equal(m.layers()[0]));
  EXPECT_FALSE(a.output_layer().bitwise_equal(m.output_layer()));
  EXPECT_TRUE(head_a.bitwise_equal(m.output_layer()));
  EXPECT_TRUE(a.bitwise_equal(b));
  EXPECT_TRUE(attach_head(a, head_a).bitwise_equal(m));

  Rng r3(2);
  auto [c, head_c] = replace_output_layer(m, 5, r3);
  EXPECT_EQ(c.num_classes(), 5);
  Eigen::MatrixXf x = Eigen::MatrixXf::Constant(4, 3, 0.2f);
  EXPECT_EQ(attach_head(c, head_c).logits(x), m.logits(x));
  EXPECT_THROW(replace_output_layer(m, 1, r3), DimensionError);
  EXPECT_THROW(attach_head(fresh_model({4, 7, 3}, 1), head_c), DimensionError);
}

TEST(Serialization, LittleEndianRoundTrip) {
  const Model m = fresh_model({5, 4, 3}, 4);
  const Bytes raw = weights_to_le_bytes(m);
  EXPECT_EQ(raw.size(), 4u * (5 * 4 + 4 + 4 * 3 + 3));
  const float w00 = m.layers()[0].weights(0, 0);
  std::uint32_t bits = 0;
  std::memcpy(&bits, &w00, 4);
  EXPECT_EQ(raw[0], bits & 0xff);
  EXPECT_EQ(raw[3], bits >> 24);
  const Model back = model_from_le_bytes({5, 4, 3}, raw, m.final_learning_rate());
  EXPECT_TRUE(back.bitwise_equal(m));
  Bytes shorter(raw.begin(), raw.end() - 1);
  EXPECT_THROW(model_from_le_bytes({5, 4, 3}, shorter, 0.1), ParseError);
  Bytes nan = raw;
  nan[0] = 0x00; nan[1] = 0x00; nan[2] = 0xc0; nan[3] = 0x7f;
  EXPECT_THROW(model_from_le_bytes({5, 4, 3}, nan, 0.1), ParseError);
}

}  // namespace
}  // namespace wmark
