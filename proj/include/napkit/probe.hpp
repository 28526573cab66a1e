#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "napkit/csv.hpp"
#include "napkit/dataset.hpp"
#include "napkit/downsample.hpp"
#include "napkit/error.hpp"
#include "napkit/groups.hpp"
#include "napkit/npy.hpp"
#include "napkit/parallel.hpp"
#include "napkit/rng.hpp"

namespace napkit {

enum class Split { train, val };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "val"; }

/// Flattened, downsampled activations with one class label per row.
struct ProbeDataset {
  std::size_t layer_id = 0;
  DownsampleMethod method = DownsampleMethod::subsample;
  std::size_t num_classes = 0;
  Eigen::MatrixXf features;  // [M, D]
  std::vector<std::size_t> labels;
  std::vector<Split> split;
  std::vector<std::size_t> example_ids;
  std::vector<std::size_t> skipped_classes;  // empty groups; still part of the label space

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i) {
      if (split[i] == s) out.push_back(i);
    }
    return out;
  }
};

// Validation rows per group: max(1, round(0.1 n)) for n >= 2, none for n < 2.
inline std::size_t validation_count(std::size_t n, double fraction = 0.1) {
  if (n < 2) return 0;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n))));
}

inline std::size_t probe_feature_dim(const LayerSpec& layer, std::size_t max_hw) {
  if (!layer.is_spatial()) return layer.example_size();
  const auto d = downsampled_dims({layer.shape[0], layer.shape[1], layer.shape[2]}, max_hw);
  return d.height * d.width * d.channels;
}

struct ProbeSampling {
  std::size_t max_per_group = 128;
  double val_fraction = 0.1;
  std::size_t max_hw = 8;
  DownsampleMethod method = DownsampleMethod::subsample;
};

/// Per group: a seeded sample of at most `max_per_group` ids split into train
/// and validation rows; features are flattened downsampled activations.
template <ActivationSource Source>
ProbeDataset assemble_probe_dataset(const Source& source, const LayerSpec& layer, const GroupAssignment& assignment,
                                    const ProbeSampling& sampling, std::uint64_t seed, std::size_t jobs = 1) {
  using T = typename Source::value_type;
  ProbeDataset pd;
  pd.layer_id = layer.layer_id;
  pd.method = sampling.method;
  pd.num_classes = assignment.group_count();
  for (std::size_t c = 0; c < assignment.groups.size(); ++c) {
    std::vector<std::size_t> ids = assignment.groups[c];
    if (ids.empty()) {
      pd.skipped_classes.push_back(c);
      continue;
    }
    Rng rng(mix_seed(seed, c));
    rng.shuffle(std::span<std::size_t>(ids));
    if (ids.size() > sampling.max_per_group) ids.resize(sampling.max_per_group);
    const std::size_t nval = validation_count(ids.size(), sampling.val_fraction);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      pd.example_ids.push_back(ids[i]);
      pd.labels.push_back(c);
      pd.split.push_back(i < nval ? Split::val : Split::train);
    }
  }
  const std::size_t D = probe_feature_dim(layer, sampling.max_hw);
  pd.features.resize(static_cast<Eigen::Index>(pd.size()), static_cast<Eigen::Index>(D));
  const std::size_t chunks = std::max<std::size_t>(1, std::min(jobs, pd.size()));
  parallel_for(chunks, chunks, [&](std::size_t chunk) {
    auto cursor = source.cursor(layer);
    std::vector<T> raw(layer.example_size());
    std::vector<T> reduced(D);
    for (std::size_t r = chunk; r < pd.size(); r += chunks) {
      cursor.read(pd.example_ids[r], std::span<T>(raw));
      if (layer.is_spatial()) {
        downsample_example<T>(raw, {layer.shape[0], layer.shape[1], layer.shape[2]}, sampling.method, sampling.max_hw,
                              std::span<T>(reduced));
      } else {
        reduced = raw;
      }
      for (std::size_t d = 0; d < D; ++d) {
        pd.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(d)) = static_cast<float>(reduced[d]);
      }
    }
  });
  return pd;
}

struct ProbeConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double dropout = 0.25;
  double l1 = 1e-5;
  double l2 = 1e-4;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

/// Softmax-regression probe with its optimizer state.
struct ProbeModel {
  Eigen::MatrixXd W;  // [D, K]
  Eigen::VectorXd b;  // [K]
  Eigen::MatrixXd mW, vW;
  Eigen::VectorXd mb, vb;
  std::size_t step = 0;

  ProbeModel() = default;
  ProbeModel(std::size_t dim, std::size_t classes)
      : W(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(classes))),
        b(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(classes))),
        mW(Eigen::MatrixXd::Zero(W.rows(), W.cols())),
        vW(Eigen::MatrixXd::Zero(W.rows(), W.cols())),
        mb(Eigen::VectorXd::Zero(b.size())),
        vb(Eigen::VectorXd::Zero(b.size())) {}

  std::size_t dim() const { return static_cast<std::size_t>(W.rows()); }
  std::size_t classes() const { return static_cast<std::size_t>(W.cols()); }
};

// Glorot-uniform kernel, zero bias.
inline ProbeModel init_probe(std::size_t dim, std::size_t classes, std::uint64_t seed) {
  ProbeModel m(dim, classes);
  Rng rng(seed);
  const double limit = std::sqrt(6.0 / static_cast<double>(dim + classes));
  for (Eigen::Index c = 0; c < m.W.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.W.rows(); ++r) m.W(r, c) = (2.0 * rng.uniform() - 1.0) * limit;
  }
  return m;
}

inline void softmax_rows(Eigen::MatrixXd& logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - mx).exp();
    logits.row(i) /= logits.row(i).sum();
  }
}

inline Eigen::VectorXd forward(const ProbeModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  Eigen::MatrixXd logits = (model.W.transpose() * x + model.b).transpose();
  softmax_rows(logits);
  return logits.row(0).transpose();
}

// Smallest index among the maxima.
inline std::size_t argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  std::size_t best = 0;
  for (Eigen::Index k = 1; k < row.size(); ++k) {
    if (row(k) > row(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(k);
  }
  return best;
}

struct LossGrad {
  double loss = 0.0;
  Eigen::MatrixXd dW;
  Eigen::VectorXd db;
};

/// Mean cross-entropy over the batch plus l1*sum|W| + l2*sum W^2 (bias is not
/// regularized). With `rng`, inverted dropout is applied to the inputs.
inline LossGrad loss_and_grad(const ProbeModel& model, const Eigen::Ref<const Eigen::MatrixXd>& X,
                              std::span<const std::size_t> labels, double dropout, double l1, double l2,
                              Rng* rng = nullptr) {
  const auto B = X.rows();
  if (B == 0) throw Error(ErrorKind::argument, "loss_and_grad needs a non-empty batch");
  if (static_cast<std::size_t>(B) != labels.size()) throw Error(ErrorKind::shape, "batch rows != labels");
  Eigen::MatrixXd Xd = X;
  if (rng && dropout > 0.0) {
    const double keep_scale = 1.0 / (1.0 - dropout);
    for (Eigen::Index i = 0; i < B; ++i) {
      for (Eigen::Index d = 0; d < Xd.cols(); ++d) Xd(i, d) = rng->bernoulli(dropout) ? 0.0 : Xd(i, d) * keep_scale;
    }
  }
  Eigen::MatrixXd P = Xd * model.W;
  P.rowwise() += model.b.transpose();
  softmax_rows(P);
  LossGrad g;
  double ce = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]);
    ce -= std::log(std::max(P(i, y), std::numeric_limits<double>::min()));
    P(i, y) -= 1.0;
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  g.loss = ce * inv_b + l1 * model.W.cwiseAbs().sum() + l2 * model.W.squaredNorm();
  g.dW = (Xd.transpose() * P) * inv_b + l1 * model.W.unaryExpr([](double w) { return double((w > 0) - (w < 0)); }) +
         2.0 * l2 * model.W;
  g.db = P.colwise().sum().transpose() * inv_b;
  return g;
}

inline void adam_update(ProbeModel& m, const LossGrad& g, const ProbeConfig& cfg) {
  ++m.step;
  const double t = static_cast<double>(m.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  m.mW = cfg.beta1 * m.mW + (1.0 - cfg.beta1) * g.dW;
  m.vW = cfg.beta2 * m.vW + (1.0 - cfg.beta2) * g.dW.cwiseProduct(g.dW);
  m.mb = cfg.beta1 * m.mb + (1.0 - cfg.beta1) * g.db;
  m.vb = cfg.beta2 * m.vb + (1.0 - cfg.beta2) * g.db.cwiseProduct(g.db);
  m.W.array() -= cfg.learning_rate * (m.mW.array() / c1) / ((m.vW.array() / c2).sqrt() + cfg.epsilon);
  m.b.array() -= cfg.learning_rate * (m.mb.array() / c1) / ((m.vb.array() / c2).sqrt() + cfg.epsilon);
}

inline std::vector<std::size_t> predict(const ProbeModel& model, const ProbeDataset& pd,
                                        std::span<const std::size_t> rows) {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  constexpr std::size_t block = 256;
  for (std::size_t start = 0; start < rows.size(); start += block) {
    const std::size_t n = std::min(block, rows.size() - start);
    Eigen::MatrixXd X(static_cast<Eigen::Index>(n), pd.features.cols());
    for (std::size_t i = 0; i < n; ++i) {
      X.row(static_cast<Eigen::Index>(i)) = pd.features.row(static_cast<Eigen::Index>(rows[start + i])).cast<double>();
    }
    Eigen::MatrixXd logits = X * model.W;
    logits.rowwise() += model.b.transpose();
    for (Eigen::Index i = 0; i < logits.rows(); ++i) out.push_back(argmax(logits.row(i)));
  }
  return out;
}

inline double evaluate(const ProbeModel& model, const ProbeDataset& pd, Split split) {
  const auto rows = pd.indices(split);
  if (rows.empty()) throw Error(ErrorKind::argument, "cannot evaluate on an empty " + to_string(split) + " split");
  const auto pred = predict(model, pd, rows);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) correct += pred[i] == pd.labels[rows[i]];
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

struct LearningCurves {
  std::vector<double> train_acc;
  std::vector<double> val_acc;  // NaN when the validation split is empty
  std::vector<double> train_loss;
};

struct TrainedProbe {
  ProbeModel model;
  LearningCurves curves;
};

/// Mini-batch Adam over shuffled epochs; accuracies are measured after every
/// epoch on the full splits without dropout.
inline TrainedProbe train_probe(const ProbeDataset& pd, const ProbeConfig& cfg, std::uint64_t seed) {
  const auto train_rows = pd.indices(Split::train);
  if (train_rows.empty()) throw Error(ErrorKind::argument, "probe training needs at least one train example");
  if (cfg.batch_size == 0) throw Error(ErrorKind::argument, "batch size must be positive");
  const bool has_val = !pd.indices(Split::val).empty();
  TrainedProbe out{init_probe(pd.dim(), pd.num_classes, mix_seed(seed, 1)), {}};
  Rng order_rng(mix_seed(seed, 2));
  Rng dropout_rng(mix_seed(seed, 3));
  std::vector<std::size_t> order = train_rows;
  std::vector<std::size_t> batch_labels;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      Eigen::MatrixXd X(static_cast<Eigen::Index>(n), pd.features.cols());
      batch_labels.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        X.row(static_cast<Eigen::Index>(i)) =
            pd.features.row(static_cast<Eigen::Index>(order[start + i])).cast<double>();
        batch_labels[i] = pd.labels[order[start + i]];
      }
      const auto g = loss_and_grad(out.model, X, batch_labels, cfg.dropout, cfg.l1, cfg.l2, &dropout_rng);
      if (!std::isfinite(g.loss) || !g.dW.allFinite() || !g.db.allFinite()) {
        throw Error(ErrorKind::numeric, "probe training diverged at epoch " + std::to_string(epoch + 1) + ", batch " +
                                            std::to_string(batches + 1));
      }
      adam_update(out.model, g, cfg);
      loss_sum += g.loss;
      ++batches;
    }
    if (!out.model.W.allFinite() || !out.model.b.allFinite()) {
      throw Error(ErrorKind::numeric, "non-finite probe parameters after epoch " + std::to_string(epoch + 1));
    }
    out.curves.train_loss.push_back(loss_sum / static_cast<double>(batches));
    out.curves.train_acc.push_back(evaluate(out.model, pd, Split::train));
    out.curves.val_acc.push_back(has_val ? evaluate(out.model, pd, Split::val)
                                         : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

struct SweepEntry {
  LayerSpec layer;
  double train_acc = 0.0;
  double val_acc = 0.0;
  LearningCurves curves;
  ProbeModel model;
  ProbeDataset data;
};

/// One probe per layer under an identical protocol and seed; layers run in parallel.
template <ActivationSource Source>
std::vector<SweepEntry> layer_sweep(const Source& source, const std::vector<LayerSpec>& layers,
                                    const GroupAssignment& assignment, const ProbeSampling& sampling,
                                    const ProbeConfig& cfg, std::uint64_t seed, std::size_t jobs = 1) {
  std::vector<SweepEntry> out(layers.size());
  const std::size_t outer = std::max<std::size_t>(1, std::min(jobs, layers.size()));
  const std::size_t inner = std::max<std::size_t>(1, jobs / outer);
  parallel_for(layers.size(), outer, [&](std::size_t i) {
    SweepEntry e;
    e.layer = layers[i];
    e.data = assemble_probe_dataset(source, layers[i], assignment, sampling, mix_seed(seed, 11), inner);
    auto trained = train_probe(e.data, cfg, mix_seed(seed, 12));
    e.model = std::move(trained.model);
    e.curves = std::move(trained.curves);
    e.train_acc = e.curves.train_acc.empty() ? evaluate(e.model, e.data, Split::train) : e.curves.train_acc.back();
    e.val_acc = e.curves.val_acc.empty() ? std::numeric_limits<double>::quiet_NaN() : e.curves.val_acc.back();
    out[i] = std::move(e);
  });
  return out;
}

struct ErrorRecord {
  std::size_t label = 0;       // true class id
  std::size_t prediction = 0;  // predicted class id
  std::size_t count = 0;
  std::size_t label_total = 0;
  double rate_pct = 0.0;
  std::vector<Variable> differing;
};

inline std::vector<Variable> differing_variables(const GroupKey& a, const GroupKey& b) {
  std::vector<Variable> out;
  for (std::size_t v = 0; v < variable_count; ++v) {
    if (a.get(static_cast<Variable>(v)) != b.get(static_cast<Variable>(v))) out.push_back(static_cast<Variable>(v));
  }
  return out;
}

/// Most frequent confusions: rate = 100 * count(label -> prediction) / count(label).
/// Ordered by rate, then count (both descending), then label and prediction class order.
inline std::vector<ErrorRecord> error_table(std::span<const std::size_t> labels,
                                            std::span<const std::size_t> predictions, const Schema& schema,
                                            std::size_t top_k = 10) {
  if (labels.size() != predictions.size()) throw Error(ErrorKind::shape, "labels and predictions differ in length");
  const std::size_t K = schema.group_count();
  std::vector<std::size_t> totals(K, 0);
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> pairs;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= K || predictions[i] >= K) throw Error(ErrorKind::index, "class id outside the schema");
    ++totals[labels[i]];
    if (labels[i] != predictions[i]) ++pairs[{labels[i], predictions[i]}];
  }
  std::vector<ErrorRecord> records;
  for (const auto& [key, count] : pairs) {
    ErrorRecord r;
    r.label = key.first;
    r.prediction = key.second;
    r.count = count;
    r.label_total = totals[key.first];
    r.rate_pct = 100.0 * static_cast<double>(count) / static_cast<double>(r.label_total);
    r.differing = differing_variables(group_key(r.label, schema), group_key(r.prediction, schema));
    records.push_back(std::move(r));
  }
  std::sort(records.begin(), records.end(), [](const ErrorRecord& a, const ErrorRecord& b) {
    // Compare exact fractions so equal rates tie regardless of rounding.
    const auto lhs = static_cast<unsigned __int128>(a.count) * b.label_total;
    const auto rhs = static_cast<unsigned __int128>(b.count) * a.label_total;
    if (lhs != rhs) return lhs > rhs;
    if (a.count != b.count) return a.count > b.count;
    if (a.label != b.label) return a.label < b.label;
    return a.prediction < b.prediction;
  });
  if (records.size() > top_k) records.resize(top_k);
  return records;
}

inline std::vector<ErrorRecord> error_table(const ProbeModel& model, const ProbeDataset& pd, const Schema& schema,
                                            Split split = Split::train, std::size_t top_k = 10) {
  const auto rows = pd.indices(split);
  if (rows.empty()) throw Error(ErrorKind::argument, "error table needs a non-empty " + to_string(split) + " split");
  const auto pred = predict(model, pd, rows);
  std::vector<std::size_t> labels;
  labels.reserve(rows.size());
  for (auto r : rows) labels.push_back(pd.labels[r]);
  return error_table(labels, pred, schema, top_k);
}

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline csv::Writer error_table_csv(const std::vector<ErrorRecord>& records, const Schema& schema) {
  csv::Writer w({"race", "age", "gender", "pred_race", "pred_age", "pred_gender", "differing", "error_rate_pct"});
  for (const auto& r : records) {
    const GroupKey l = group_key(r.label, schema), p = group_key(r.prediction, schema);
    std::string diff;
    for (auto v : r.differing) {
      if (!diff.empty()) diff += ';';
      diff += variable_names[static_cast<std::size_t>(v)];
    }
    w.row({schema.vocabulary(Variable::race)[l.race], schema.vocabulary(Variable::age)[l.age],
           schema.vocabulary(Variable::gender)[l.gender], schema.vocabulary(Variable::race)[p.race],
           schema.vocabulary(Variable::age)[p.age], schema.vocabulary(Variable::gender)[p.gender], diff,
           format_fixed(r.rate_pct, 2)});
  }
  return w;
}

inline csv::Writer curves_csv(const LearningCurves& c) {
  csv::Writer w({"epoch", "train_acc", "val_acc", "train_loss"});
  for (std::size_t e = 0; e < c.train_acc.size(); ++e) {
    w.row({std::to_string(e + 1), format_fixed(c.train_acc[e], 6),
           std::isnan(c.val_acc[e]) ? std::string() : format_fixed(c.val_acc[e], 6), format_fixed(c.train_loss[e], 6)});
  }
  return w;
}

inline void save_probe_model(const ProbeModel& m, const std::filesystem::path& weights,
                             const std::filesystem::path& bias) {
  BasicTensor<double> W({m.dim(), m.classes()});
  for (std::size_t r = 0; r < m.dim(); ++r) {
    for (std::size_t c = 0; c < m.classes(); ++c) {
      W[r * m.classes() + c] = m.W(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    }
  }
  write_array_file(W, weights);
  write_array_file(BasicTensor<double>({m.classes()}, std::vector<double>(m.b.data(), m.b.data() + m.b.size())), bias);
}

inline ProbeModel load_probe_model(const std::filesystem::path& weights, const std::filesystem::path& bias) {
  const auto W = read_array_file<double>(weights);
  const auto b = read_array_file<double>(bias);
  if (W.rank() != 2 || b.rank() != 1 || b.shape()[0] != W.shape()[1]) {
    throw Error(ErrorKind::shape, "probe weights " + shape_string(W.shape()) + " and bias " + shape_string(b.shape()) +
                                      " do not fit together");
  }
  ProbeModel m(W.shape()[0], W.shape()[1]);
  for (std::size_t r = 0; r < m.dim(); ++r) {
    for (std::size_t c = 0; c < m.classes(); ++c) {
      m.W(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = W[r * m.classes() + c];
    }
  }
  for (std::size_t c = 0; c < m.classes(); ++c) m.b(static_cast<Eigen::Index>(c)) = b[c];
  return m;
}

}  // namespace napkit
