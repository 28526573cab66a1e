#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "napkit/probe.hpp"
#include "napkit/rng.hpp"
#include "napkit/synthetic.hpp"
#include "test_util.hpp"

namespace napkit {
namespace {

// Gaussian blobs with `per_class` rows per class; the first `val_per_class` rows of each class are validation.
ProbeDataset blobs(std::size_t classes, std::size_t dim, std::size_t per_class, std::size_t val_per_class,
                   double separation, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> centers(classes * dim);
  for (auto& c : centers) c = separation * rng.normal();
  ProbeDataset pd;
  pd.num_classes = classes;
  pd.features.resize(static_cast<Eigen::Index>(classes * per_class), static_cast<Eigen::Index>(dim));
  std::size_t row = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t i = 0; i < per_class; ++i, ++row) {
      for (std::size_t d = 0; d < dim; ++d) {
        pd.features(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(d)) =
            static_cast<float>(centers[k * dim + d] + rng.normal());
      }
      pd.labels.push_back(k);
      pd.split.push_back(i < val_per_class ? Split::val : Split::train);
      pd.example_ids.push_back(row);
    }
  }
  return pd;
}

std::vector<std::size_t> labels_of(std::initializer_list<std::size_t> l) { return l; }

TEST(Sampling, ValidationCounts) {
  EXPECT_EQ(validation_count(128), 13u);
  EXPECT_EQ(128u - validation_count(128), 115u);
  EXPECT_EQ(validation_count(1), 0u);
  EXPECT_EQ(validation_count(0), 0u);
  EXPECT_EQ(validation_count(2), 1u);
  EXPECT_EQ(validation_count(14), 1u);
  EXPECT_EQ(validation_count(15), 2u);
  EXPECT_EQ(validation_count(640), 64u);
}

TEST(Sampling, FeatureDimension) {
  EXPECT_EQ(probe_feature_dim(LayerSpec{0, "block5", {14, 14, 512}}, 8), 25088u);
  EXPECT_EQ(probe_feature_dim(LayerSpec{0, "pool", {8, 8, 16}}, 8), 1024u);
  EXPECT_EQ(probe_feature_dim(LayerSpec{0, "fc", {4096}}, 8), 4096u);
  EXPECT_EQ(probe_feature_dim(LayerSpec{0, "input", {224, 224, 3}}, 8), 8u * 8 * 3);
}

TEST(Sampling, AssembleSplitsAndDownsamples) {
  SyntheticOptions opt;
  opt.group_sizes.assign(126, 0);
  opt.group_sizes[0] = 200;
  opt.group_sizes[1] = 1;
  opt.group_sizes[2] = 10;
  opt.layers = {{"conv", {16, 16, 2}, 1.0, 1.0}};
  const auto syn = make_synthetic(opt);
  const auto a = build_groups(syn.manifest);
  const LayerSpec layer = syn.data.layers()[0];
  const auto pd = assemble_probe_dataset(syn.data, layer, a, ProbeSampling{}, 5, 3);
  EXPECT_EQ(pd.num_classes, 126u);
  EXPECT_EQ(pd.size(), 128u + 1 + 10);
  EXPECT_EQ(pd.dim(), 8u * 8 * 2);
  EXPECT_EQ(pd.skipped_classes.size(), 123u);
  std::array<std::size_t, 3> val{}, train{};
  for (std::size_t i = 0; i < pd.size(); ++i) (pd.split[i] == Split::val ? val : train)[pd.labels[i]]++;
  EXPECT_EQ(train[0], 115u);
  EXPECT_EQ(val[0], 13u);
  EXPECT_EQ(train[1], 1u);
  EXPECT_EQ(val[1], 0u);
  EXPECT_EQ(val[2], 1u);

  // Features are the subsampled activations of the recorded example.
  std::vector<float> raw(layer.example_size()), reduced(pd.dim());
  syn.data.cursor(layer).read(pd.example_ids[7], std::span<float>(raw));
  downsample_example<float>(raw, {16, 16, 2}, DownsampleMethod::subsample, 8, std::span<float>(reduced));
  for (std::size_t d = 0; d < pd.dim(); ++d) EXPECT_EQ(pd.features(7, static_cast<Eigen::Index>(d)), reduced[d]);

  const auto again = assemble_probe_dataset(syn.data, layer, a, ProbeSampling{}, 5, 1);
  EXPECT_EQ(again.example_ids, pd.example_ids);
  EXPECT_EQ(again.features, pd.features);
  EXPECT_NE(assemble_probe_dataset(syn.data, layer, a, ProbeSampling{}, 6, 1).example_ids, pd.example_ids);
}

TEST(Forward, UniformAtZero) {
  const ProbeModel m(10, 126);
  const Eigen::VectorXd x = Eigen::VectorXd::Random(10);
  const auto p = forward(m, x);
  for (Eigen::Index k = 0; k < p.size(); ++k) EXPECT_NEAR(p(k), 1.0 / 126.0, 1e-15);
  EXPECT_NEAR(1.0 / 126.0, 0.0079365, 1e-7);
}

TEST(Forward, ShiftInvariantAndNormalized) {
  auto m = init_probe(6, 9, 1);
  Rng rng(2);
  Eigen::VectorXd x(6);
  for (auto& v : x) v = 10.0 * rng.normal();
  const auto p = forward(m, x);
  EXPECT_NEAR(p.sum(), 1.0, 1e-6);
  m.b.array() += 123.0;
  const auto q = forward(m, x);
  for (Eigen::Index k = 0; k < p.size(); ++k) EXPECT_NEAR(p(k), q(k), 1e-9);
  m.b(4) += 1e4;  // huge logits stay finite
  const auto r = forward(m, x);
  EXPECT_TRUE(r.allFinite());
  EXPECT_NEAR(r(4), 1.0, 1e-12);
}

TEST(Forward, ArgmaxPrefersSmallestIndex) {
  Eigen::RowVectorXd row(5);
  row << 1.0, 3.0, 0.0, 3.0, 3.0;
  EXPECT_EQ(argmax(row), 1u);
  ProbeModel m(3, 126);
  m.b(0) = 50.0;
  ProbeDataset pd;
  pd.num_classes = 126;
  pd.features = Eigen::MatrixXf::Random(4, 3);
  pd.labels = {0, 0, 0, 0};
  pd.split.assign(4, Split::train);
  EXPECT_EQ(evaluate(m, pd, Split::train), 1.0);
  // A zero model ties everywhere and therefore always predicts class 0.
  pd.labels = {0, 1, 2, 3};
  EXPECT_EQ(evaluate(ProbeModel(3, 126), pd, Split::train), 0.25);
  EXPECT_THROW(evaluate(m, pd, Split::val), Error);
}

TEST(Loss, UniformModelGivesLog126) {
  const ProbeModel m(7, 126);
  const Eigen::MatrixXd X = Eigen::MatrixXd::Random(5, 7);
  const auto g = loss_and_grad(m, X, labels_of({0, 5, 125, 64, 3}), 0.25, 1e-5, 1e-4);
  EXPECT_NEAR(g.loss, std::log(126.0), 1e-12);
  EXPECT_NEAR(g.loss, 4.8363, 1e-4);
}

TEST(Loss, RegularizationPenaltyOnWeightsOnly) {
  ProbeModel m(3, 4);
  m.W(1, 2) = 2.0;
  m.b(0) = 7.0;
  const Eigen::MatrixXd X = Eigen::MatrixXd::Zero(2, 3);
  const double base = loss_and_grad(m, X, labels_of({0, 1}), 0.0, 0.0, 0.0).loss;
  const double reg = loss_and_grad(m, X, labels_of({0, 1}), 0.0, 1e-5, 1e-4).loss;
  EXPECT_NEAR(reg - base, 1e-5 * 2 + 1e-4 * 4, 1e-15);
}

TEST(Loss, GradientMatchesCentralDifferences) {
  Rng rng(7);
  auto m = init_probe(5, 4, 3);
  for (auto& v : m.b) v = rng.normal();
  Eigen::MatrixXd X(6, 5);
  for (auto& v : X.reshaped()) v = rng.normal();
  const auto labels = labels_of({0, 1, 2, 3, 1, 2});
  const double l1 = 1e-5, l2 = 1e-4;
  const auto g = loss_and_grad(m, X, labels, 0.0, l1, l2);
  const double h = 1e-6;
  double worst = 0.0;
  auto check = [&](double analytic, double numeric) {
    worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8}));
  };
  for (Eigen::Index r = 0; r < m.W.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.W.cols(); ++c) {
      auto p = m, q = m;
      p.W(r, c) += h;
      q.W(r, c) -= h;
      check(g.dW(r, c),
            (loss_and_grad(p, X, labels, 0, l1, l2).loss - loss_and_grad(q, X, labels, 0, l1, l2).loss) / (2 * h));
    }
  }
  for (Eigen::Index k = 0; k < m.b.size(); ++k) {
    auto p = m, q = m;
    p.b(k) += h;
    q.b(k) -= h;
    check(g.db(k),
          (loss_and_grad(p, X, labels, 0, l1, l2).loss - loss_and_grad(q, X, labels, 0, l1, l2).loss) / (2 * h));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Loss, InvertedDropoutPreservesExpectation) {
  ProbeModel m(1, 2);
  const Eigen::MatrixXd X = Eigen::MatrixXd::Constant(20000, 1, 2.0);
  std::vector<std::size_t> labels(20000, 0);
  Rng rng(4);
  const auto g = loss_and_grad(m, X, labels, 0.25, 0.0, 0.0, &rng);
  // dW for class 0 is mean(x * (p0 - 1)) = -0.5 * E[x_dropped] = -0.5 * 2.
  EXPECT_NEAR(g.dW(0, 0), -1.0, 0.02);
  EXPECT_THROW(loss_and_grad(m, Eigen::MatrixXd(0, 1), std::span<const std::size_t>(), 0.0, 0.0, 0.0), Error);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ProbeModel m(2, 2);
  LossGrad g{0.0, Eigen::MatrixXd::Constant(2, 2, 0.3), Eigen::VectorXd::Constant(2, -5.0)};
  adam_update(m, g, ProbeConfig{});
  // Bias-corrected first step is lr * g / (|g| + eps) per entry.
  EXPECT_NEAR(m.W(0, 0), -1e-3 * 0.3 / (0.3 + 1e-7), 1e-15);
  EXPECT_NEAR(m.b(1), 1e-3 * 5.0 / (5.0 + 1e-7), 1e-15);
  EXPECT_EQ(m.step, 1u);
}

TEST(Train, ZeroEpochsReturnsInitialModel) {
  const auto pd = blobs(5, 4, 6, 1, 5.0, 1);
  ProbeConfig cfg;
  cfg.epochs = 0;
  const auto t = train_probe(pd, cfg, 9);
  EXPECT_TRUE(t.curves.train_acc.empty());
  EXPECT_TRUE(t.curves.val_acc.empty());
  EXPECT_EQ(t.model.W, init_probe(4, 5, mix_seed(9, 1)).W);
}

TEST(Train, SeparableBlobsAreLearned) {
  const auto pd = blobs(20, 16, 30, 3, 20.0, 2);
  const auto t = train_probe(pd, ProbeConfig{}, 3);
  EXPECT_EQ(t.curves.train_acc.size(), 50u);
  EXPECT_EQ(t.curves.val_acc.size(), 50u);
  EXPECT_EQ(t.curves.train_loss.size(), 50u);
  EXPECT_GE(t.curves.train_acc.back(), 0.99);
  EXPECT_GE(t.curves.val_acc.back(), 0.95);
  EXPECT_LT(t.curves.train_loss.back(), t.curves.train_loss.front());
}

TEST(Train, DeterministicGivenSeed) {
  const auto pd = blobs(6, 5, 12, 2, 3.0, 4);
  const auto a = train_probe(pd, ProbeConfig{}, 10);
  const auto b = train_probe(pd, ProbeConfig{}, 10);
  EXPECT_EQ(a.model.W, b.model.W);
  EXPECT_EQ(a.curves.train_loss, b.curves.train_loss);
  EXPECT_NE(train_probe(pd, ProbeConfig{}, 11).model.W, a.model.W);
}

TEST(Train, NoValidationSplitGivesNaNCurve) {
  const auto pd = blobs(3, 2, 4, 0, 3.0, 5);
  ProbeConfig cfg;
  cfg.epochs = 2;
  const auto t = train_probe(pd, cfg, 1);
  EXPECT_TRUE(std::isnan(t.curves.val_acc[0]));
  EXPECT_NE(curves_csv(t.curves).str().find("\n1,"), std::string::npos);
}

TEST(Train, DivergenceIsReported) {
  auto pd = blobs(3, 2, 4, 0, 3.0, 5);
  pd.features(0, 0) = std::numeric_limits<float>::infinity();
  try {
    train_probe(pd, ProbeConfig{}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Train, StrongerL2NeverGrowsWeights) {
  const auto pd = blobs(4, 6, 25, 0, 4.0, 6);
  ProbeConfig cfg;
  cfg.dropout = 0.0;
  cfg.epochs = 200;
  double prev = std::numeric_limits<double>::infinity();
  for (double l2 : {1e-4, 1e-2, 1e-1}) {
    cfg.l2 = l2;
    const double norm = train_probe(pd, cfg, 8).model.W.norm();
    EXPECT_LE(norm, prev);
    prev = norm;
  }
}

TEST(Evaluate, InvariantToRowPermutationAndLogitScale) {
  const auto pd = blobs(8, 5, 10, 3, 1.0, 7);
  auto t = train_probe(pd, ProbeConfig{}, 2);
  const double acc = evaluate(t.model, pd, Split::val);
  ProbeDataset perm = pd;
  std::vector<std::size_t> order(pd.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(1);
  rng.shuffle(std::span<std::size_t>(order));
  for (std::size_t i = 0; i < order.size(); ++i) {
    perm.features.row(static_cast<Eigen::Index>(i)) = pd.features.row(static_cast<Eigen::Index>(order[i]));
    perm.labels[i] = pd.labels[order[i]];
    perm.split[i] = pd.split[order[i]];
  }
  EXPECT_EQ(evaluate(t.model, perm, Split::val), acc);
  t.model.W *= 3.5;
  t.model.b *= 3.5;
  EXPECT_EQ(evaluate(t.model, pd, Split::val), acc);
}

TEST(Sweep, DuplicateLayerGivesIdenticalResults) {
  SyntheticOptions opt;
  opt.schema.vocabularies[0] = {"a", "b"};
  opt.schema.vocabularies[1] = {"x", "y"};
  opt.schema.vocabularies[2] = {"f", "m"};
  opt.per_group = 20;
  opt.layers = {{"fc", {8}, 2.0, 1.0}};
  const auto syn = make_synthetic(opt);
  const auto a = build_groups(syn.manifest);
  const LayerSpec l = syn.data.layers()[0];
  ProbeConfig cfg;
  cfg.epochs = 5;
  const auto sweep = layer_sweep(syn.data, {l, l}, a, ProbeSampling{}, cfg, 3, 2);
  ASSERT_EQ(sweep.size(), 2u);
  EXPECT_EQ(sweep[0].model.W, sweep[1].model.W);
  EXPECT_EQ(sweep[0].curves.val_acc, sweep[1].curves.val_acc);
  EXPECT_EQ(sweep[0].val_acc, sweep[1].val_acc);
}

TEST(ErrorTable, EighteenOf115) {
  const Schema s = fairface_schema();
  const std::size_t label = class_index({4, 4, 0}, s);  // Southeast Asian, 30-39, Male
  const std::size_t wrong = class_index({4, 5, 0}, s);  // Southeast Asian, 40-49, Male
  std::vector<std::size_t> labels(115, label), preds(115, label);
  std::fill(preds.begin(), preds.begin() + 18, wrong);
  const auto t = error_table(labels, preds, s);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].count, 18u);
  EXPECT_EQ(t[0].label_total, 115u);
  EXPECT_EQ(format_fixed(t[0].rate_pct, 2), "15.65");
  EXPECT_EQ(t[0].differing, std::vector<Variable>{Variable::age});
  const std::string csv = error_table_csv(t, s).str();
  EXPECT_NE(csv.find("Southeast Asian,30-39,Male,Southeast Asian,40-49,Male,age,15.65"), std::string::npos);
}

TEST(ErrorTable, PerfectClassifierIsEmpty) {
  const std::vector<std::size_t> l{1, 2, 3, 3};
  EXPECT_TRUE(error_table(l, l, fairface_schema()).empty());
}

TEST(ErrorTable, MatchesBruteForceOracle) {
  Schema s;
  s.vocabularies[0] = {"r0", "r1", "r2", "r3", "r4"};
  s.vocabularies[1] = {"a"};
  s.vocabularies[2] = {"g"};
  Rng rng(12);
  std::vector<std::size_t> labels(300), preds(300);
  for (std::size_t i = 0; i < 300; ++i) {
    labels[i] = rng.below(5);
    preds[i] = rng.uniform() < 0.6 ? labels[i] : rng.below(5);
  }
  const auto t = error_table(labels, preds, s, 1000);
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < 5; ++a) {
    std::size_t total = 0, correct = 0;
    for (std::size_t i = 0; i < 300; ++i) {
      total += labels[i] == a;
      correct += labels[i] == a && preds[i] == a;
    }
    double rate_sum = 0.0;
    for (std::size_t b = 0; b < 5; ++b) {
      if (a == b) continue;
      std::size_t n = 0;
      for (std::size_t i = 0; i < 300; ++i) n += labels[i] == a && preds[i] == b;
      if (n == 0) continue;
      ++pairs;
      const auto it =
          std::find_if(t.begin(), t.end(), [&](const auto& r) { return r.label == a && r.prediction == b; });
      ASSERT_NE(it, t.end());
      EXPECT_EQ(it->count, n);
      EXPECT_EQ(it->rate_pct, 100.0 * static_cast<double>(n) / static_cast<double>(total));
      rate_sum += it->rate_pct;
    }
    EXPECT_NEAR(rate_sum, 100.0 * (1.0 - static_cast<double>(correct) / static_cast<double>(total)), 1e-9);
  }
  EXPECT_EQ(t.size(), pairs);
  for (std::size_t i = 1; i < t.size(); ++i) {
    const auto& p = t[i - 1];
    const auto& q = t[i];
    const double lhs = static_cast<double>(p.count) * static_cast<double>(q.label_total);
    const double rhs = static_cast<double>(q.count) * static_cast<double>(p.label_total);
    EXPECT_TRUE(lhs > rhs ||
                (lhs == rhs && (p.count > q.count || (p.count == q.count && p.label < q.label) ||
                                (p.count == q.count && p.label == q.label && p.prediction < q.prediction))));
  }
  EXPECT_EQ(error_table(labels, preds, s, 3).size(), 3u);
}

TEST(ErrorTable, TiesByCountThenClassOrder) {
  Schema s;
  s.vocabularies[0] = {"a", "b", "c", "d"};
  s.vocabularies[1] = {"x"};
  s.vocabularies[2] = {"y"};
  // 1/2 for label 0 and 2/4 for label 1: equal rates, label 1 has the larger count.
  const std::vector<std::size_t> labels{0, 0, 1, 1, 1, 1, 2, 2};
  const std::vector<std::size_t> preds{3, 0, 2, 2, 1, 1, 0, 3};
  const auto t = error_table(labels, preds, s);
  ASSERT_EQ(t.size(), 4u);
  EXPECT_EQ((std::pair{t[0].label, t[0].prediction}), (std::pair<std::size_t, std::size_t>{1, 2}));
  EXPECT_EQ((std::pair{t[1].label, t[1].prediction}), (std::pair<std::size_t, std::size_t>{0, 3}));
  EXPECT_EQ((std::pair{t[2].label, t[2].prediction}), (std::pair<std::size_t, std::size_t>{2, 0}));
  EXPECT_EQ((std::pair{t[3].label, t[3].prediction}), (std::pair<std::size_t, std::size_t>{2, 3}));
}

TEST(ProbeModelIo, RoundTrip) {
  testing::TempDir tmp;
  const auto m = init_probe(7, 5, 3);
  save_probe_model(m, tmp.path() / "W.npy", tmp.path() / "b.npy");
  const auto back = load_probe_model(tmp.path() / "W.npy", tmp.path() / "b.npy");
  EXPECT_EQ(back.W, m.W);
  EXPECT_EQ(back.b, m.b);
}

}  // namespace
}  // namespace napkit
