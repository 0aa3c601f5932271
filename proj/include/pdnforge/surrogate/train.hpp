#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pdnforge/boardgen.hpp"
#include "pdnforge/circuit.hpp"
#include "pdnforge/dataset.hpp"
#include "pdnforge/error.hpp"
#include "pdnforge/rng.hpp"
#include "pdnforge/surrogate/checkpoint.hpp"
#include "pdnforge/surrogate/model.hpp"

namespace pdnforge::nn {

/// Samples as columns: placement (768 x N), stackup (17 x N), label (132 x N).
template <class T>
struct SampleSet {
  Mat<T> placement, stackup, label;
  Eigen::Index size() const { return placement.cols(); }
};

template <class T>
void put_sample(SampleSet<T>& s, Eigen::Index j, const EncodedSample& e) {
  for (std::size_t i = 0; i < kPlacementSize; ++i) s.placement(static_cast<Eigen::Index>(i), j) = static_cast<T>(e.placement[i]);
  for (std::size_t i = 0; i < kStackupVecSize; ++i) s.stackup(static_cast<Eigen::Index>(i), j) = static_cast<T>(e.stackup_vec[i]);
  if (s.label.rows() > 0)
    for (std::size_t i = 0; i < e.label.size(); ++i) s.label(static_cast<Eigen::Index>(i), j) = static_cast<T>(e.label[i]);
}

template <class T>
SampleSet<T> make_sample_set(const std::vector<DatasetRecord>& records, const std::vector<std::size_t>& idx) {
  SampleSet<T> s;
  const auto n = static_cast<Eigen::Index>(idx.size());
  s.placement.resize(kPlacementSize, n);
  s.stackup.resize(kStackupVecSize, n);
  s.label.resize(kFrequencyPoints, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& e = records.at(idx[static_cast<std::size_t>(j)]).sample;
    if (e.label.size() != static_cast<std::size_t>(kFrequencyPoints)) throw ContractError("record label length is not 132");
    put_sample(s, j, e);
  }
  return s;
}

template <class T>
SampleSet<T> make_sample_set(const std::vector<DatasetRecord>& records) {
  std::vector<std::size_t> idx(records.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return make_sample_set<T>(records, idx);
}

template <class T>
SampleSet<T> gather(const SampleSet<T>& s, const std::vector<Eigen::Index>& cols) {
  SampleSet<T> out;
  const auto n = static_cast<Eigen::Index>(cols.size());
  out.placement.resize(s.placement.rows(), n);
  out.stackup.resize(s.stackup.rows(), n);
  out.label.resize(s.label.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    out.placement.col(j) = s.placement.col(cols[static_cast<std::size_t>(j)]);
    out.stackup.col(j) = s.stackup.col(cols[static_cast<std::size_t>(j)]);
    if (s.label.rows() > 0) out.label.col(j) = s.label.col(cols[static_cast<std::size_t>(j)]);
  }
  return out;
}

template <class T>
class Adam {
 public:
  Adam(const ModelParams<T>& p, const TrainConfig& cfg)
      : cfg_(cfg), m_(zero_params<T>(p.config)), v_(zero_params<T>(p.config)) {}

  void step(ModelParams<T>& p, const ModelParams<T>& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T lr = static_cast<T>(cfg_.learning_rate / c1), eps = static_cast<T>(cfg_.adam_epsilon);
    const T rc2 = static_cast<T>(1.0 / std::sqrt(c2));
    std::vector<std::pair<T*, std::size_t>> ps, ms, vs;
    auto collect = [](auto& out) {
      return [&out](const std::string&, const std::vector<std::int64_t>&, auto* d, std::size_t n, bool t) {
        if (t) out.emplace_back(d, n);
      };
    };
    std::vector<std::pair<const T*, std::size_t>> gtmp;
    p.visit(collect(ps));
    m_.visit(collect(ms));
    v_.visit(collect(vs));
    g.visit(collect(gtmp));
    for (std::size_t a = 0; a < ps.size(); ++a) {
      T* w = ps[a].first;
      T* m = ms[a].first;
      T* v = vs[a].first;
      const T* gr = gtmp[a].first;
      for (std::size_t i = 0; i < ps[a].second; ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * gr[i];
        v[i] = b2 * v[i] + (T(1) - b2) * gr[i] * gr[i];
        w[i] -= lr * m[i] / (std::sqrt(v[i]) * rc2 + eps);
      }
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  TrainConfig cfg_;
  ModelParams<T> m_, v_;
  std::uint64_t t_ = 0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double test_loss = std::nan("");
  double seconds = 0.0;
};

template <class T>
struct TrainResult {
  ModelParams<T> params;
  std::vector<EpochRecord> history;
};

struct Evaluation {
  double rmse = 0.0;
  std::vector<double> per_sample;  // RMSE of each sample's curve
};

/// Eval-mode RMSE over a sample set, in chunks.
template <class T>
Evaluation evaluate(const ModelParams<T>& p, const SampleSet<T>& data, Eigen::Index chunk = 128) {
  Evaluation ev;
  double ss = 0.0;
  for (Eigen::Index start = 0; start < data.size(); start += chunk) {
    const Eigen::Index n = std::min(chunk, data.size() - start);
    const Mat<T> out = forward(p, Mat<T>(data.placement.middleCols(start, n)), Mat<T>(data.stackup.middleCols(start, n)),
                               Mode::eval);
    for (Eigen::Index j = 0; j < n; ++j) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double e = static_cast<double>(out(i, j)) - static_cast<double>(data.label(i, start + j));
        s += e * e;
      }
      ss += s;
      ev.per_sample.push_back(std::sqrt(s / static_cast<double>(out.rows())));
    }
  }
  ev.rmse = data.size() > 0 ? std::sqrt(ss / static_cast<double>(data.size() * data.label.rows())) : 0.0;
  return ev;
}

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint;  // rewritten after every epoch
  std::function<void(const EpochRecord&)> on_epoch;
  bool init_output_bias_to_mean = true;
};

/// Mini-batch Adam on RMSE loss. The final partial batch is kept. The output
/// bias starts at the mean training label, so the raw dB targets need no
/// rescaling.
template <class T>
TrainResult<T> train(const TrainConfig& tcfg, const ModelConfig& mcfg, const SampleSet<T>& train_set,
                     const SampleSet<T>* test_set = nullptr, const TrainOptions& opt = {}) {
  tcfg.validate();
  mcfg.validate();
  if (train_set.size() < 1) throw PreconditionError("train: empty training set");
  if (train_set.label.rows() != mcfg.outputs()) throw ContractError("train: label width does not match the model");
  using clock = std::chrono::steady_clock;

  TrainResult<T> res;
  res.params = init_params<T>(mcfg, derive_seed(tcfg.seed, 1));
  if (opt.init_output_bias_to_mean) res.params.fc_b.back() = train_set.label.rowwise().mean();
  Adam<T> adam(res.params, tcfg);
  Rng shuffle_rng(derive_seed(tcfg.seed, 2));
  Rng dropout_rng(derive_seed(tcfg.seed, 3));

  const Eigen::Index n = train_set.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const auto t0 = clock::now();
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.index(i + 1)]);
    double loss_sum = 0.0;
    int batch_index = 0;
    for (Eigen::Index start = 0; start < n; start += tcfg.batch_size, ++batch_index) {
      const Eigen::Index bs = std::min<Eigen::Index>(tcfg.batch_size, n - start);
      const std::vector<Eigen::Index> cols(order.begin() + start, order.begin() + start + bs);
      const SampleSet<T> batch = gather(train_set, cols);
      ForwardCache<T> cache;
      const Mat<T> out = forward(res.params, batch.placement, batch.stackup, Mode::train, &cache, &dropout_rng);
      Mat<T> dout;
      const double loss = static_cast<double>(loss_rmse(out, batch.label, &dout));
      if (!std::isfinite(loss))
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index) +
                             (opt.checkpoint ? "; last checkpoint kept at " + opt.checkpoint->string() : ""));
      const ModelParams<T> grad = backward(res.params, cache, dout);
      adam.step(res.params, grad);
      update_running_stats(res.params, cache);
      loss_sum += loss * static_cast<double>(bs);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    if (test_set && test_set->size() > 0) rec.test_loss = evaluate(res.params, *test_set).rmse;
    rec.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    res.history.push_back(rec);
    if (opt.checkpoint)
      save_checkpoint(*opt.checkpoint, res.params,
                      {{"epoch", epoch}, {"train_loss", rec.train_loss}, {"train_config", tcfg}});
    if (opt.on_epoch) opt.on_epoch(rec);
  }
  return res;
}

/// Eval-mode prediction for one encoded board.
template <class T>
std::vector<double> predict_db(const ModelParams<T>& p, const EncodedSample& e) {
  SampleSet<T> s;
  s.placement.resize(kPlacementSize, 1);
  s.stackup.resize(kStackupVecSize, 1);
  put_sample(s, 0, e);
  const Mat<T> out = forward(p, s.placement, s.stackup, Mode::eval);
  std::vector<double> db(static_cast<std::size_t>(out.rows()));
  for (Eigen::Index i = 0; i < out.rows(); ++i) db[static_cast<std::size_t>(i)] = static_cast<double>(out(i, 0));
  return db;
}

/// Prediction as a dB-only impedance curve on the standard grid.
template <class T>
ImpedanceCurve predict(const ModelParams<T>& p, const EncodedSample& e) {
  ImpedanceCurve c;
  c.grid = make_frequency_grid();
  c.db = predict_db(p, e);
  if (c.db.size() != c.grid.size()) throw ContractError("predict: model output width is not the frequency grid size");
  return c;
}

}  // namespace pdnforge::nn
