#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "octforce/common.hpp"
#include "octforce/dataset.hpp"
#include "octforce/nets.hpp"
#include "octforce/ops.hpp"
#include "octforce/streams.hpp"
#include "octforce/tensor.hpp"

namespace octforce::train {

using ad::Tape;
using ad::TapeScope;
using ad::Tensor;
using nets::ArchId;
using nets::LayerSpec;
using nets::Model;
using streams::NormStats;
using streams::SequenceSample;

struct TrainConfig {
  int batch_size = 100;
  double learning_rate = 1e-3;
  int epochs = 10;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool scale_labels = true;

  void validate() const {
    if (batch_size < 1) throw InvalidArgument("train config: batch size must be >= 1");
    if (!(learning_rate > 0)) throw InvalidArgument("train config: learning rate must be > 0");
    if (epochs < 1) throw InvalidArgument("train config: epochs must be >= 1");
  }
};

struct Metrics {
  double mae = 0;       // mN
  double mae_std = 0;   // mN
  double rmae = 0;      // |error| / mean |target|
  double rmae_std = 0;
  double cc = 0;        // Pearson correlation
  std::string note;     // non-empty when a value is undefined
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
  struct Slot {
    std::vector<T> m, v;
  };
  std::vector<Slot> slots;  // aligned with ModelParams order
  long long step = 0;
};

// Standard bias-corrected Adam over the accumulated gradients. A non-finite
// gradient aborts the step before any parameter is touched.
template <typename T>
void adam_step(nets::ModelParams<T>& params, AdamState<T>& state, const TrainConfig& cfg) {
  if (state.slots.empty()) {
    state.slots.resize(params.items.size());
    for (std::size_t i = 0; i < params.items.size(); ++i) {
      state.slots[i].m.assign(params.items[i].second.size(), T(0));
      state.slots[i].v.assign(params.items[i].second.size(), T(0));
    }
  }
  if (state.slots.size() != params.items.size())
    throw InvalidArgument("adam_step: state does not match parameter list");

  for (auto& [name, t] : params.items) {
    const auto& g = t.grad();
    for (const T gv : g)
      if (!std::isfinite(static_cast<double>(gv)))
        throw NumericError("adam_step: non-finite gradient in '" + name + "'");
  }

  ++state.step;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    Tensor<T>& t = params.items[i].second;
    const auto& g = t.grad();
    auto& m = state.slots[i].m;
    auto& v = state.slots[i].v;
    T* p = t.data();
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
      const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / corr1;
      const double vhat = vj / corr2;
      p[j] = static_cast<T>(static_cast<double>(p[j]) -
                            cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
  }
}

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

namespace detail {

// Builds a normalized [n, t_s, d_c] input and [n, 1] scaled-label target from
// the given sample indices. Normalization happens here so the raw samples
// stay untouched in memory.
template <typename T>
void fill_batch(const std::vector<SequenceSample>& samples, const std::vector<std::size_t>& order,
                std::size_t lo, std::size_t hi, const NormStats& norm, Tensor<T>& x,
                Tensor<T>& y) {
  const int n = static_cast<int>(hi - lo);
  const int t_s = samples[order[lo]].t_s;
  const int d_c = samples[order[lo]].d_c;
  x = Tensor<T>::zeros({n, t_s, d_c});
  y = Tensor<T>::zeros({n, 1});
  T* px = x.data();
  T* py = y.data();
  for (int b = 0; b < n; ++b) {
    const SequenceSample& s = samples[order[lo + static_cast<std::size_t>(b)]];
    T* dst = px + static_cast<std::size_t>(b) * s.window.size();
    const float* src = s.window.data();
    for (int r = 0; r < t_s; ++r) {
      for (int j = 0; j < d_c; ++j) {
        const double sd = norm.pixel_std[static_cast<std::size_t>(j)];
        const double mean = norm.pixel_mean[static_cast<std::size_t>(j)];
        const double raw = static_cast<double>(*src++);
        *dst++ = static_cast<T>(sd > 0 ? (raw - mean) / sd : raw);
      }
    }
    py[b] = static_cast<T>(norm.normalize_label(s.label));
  }
}

template <typename T>
std::vector<std::vector<T>> snapshot_values(const nets::ModelParams<T>& params) {
  std::vector<std::vector<T>> out;
  out.reserve(params.items.size());
  for (const auto& [_, t] : params.items) out.push_back(t.values());
  return out;
}

template <typename T>
void restore_values(nets::ModelParams<T>& params, const std::vector<std::vector<T>>& snap) {
  for (std::size_t i = 0; i < params.items.size(); ++i) params.items[i].second.values() = snap[i];
}

}  // namespace detail

// Mean MSE loss over a sample set, computed off the tape.
template <typename T>
double validation_loss(const Model<T>& model, const std::vector<SequenceSample>& samples,
                       int batch_size) {
  ad::NoGradScope<T> no_grad;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double total = 0;
  std::size_t count = 0;
  for (std::size_t lo = 0; lo < samples.size(); lo += static_cast<std::size_t>(batch_size)) {
    const std::size_t hi = std::min(samples.size(), lo + static_cast<std::size_t>(batch_size));
    Tensor<T> x, y;
    detail::fill_batch(samples, order, lo, hi, model.norm, x, y);
    const Tensor<T> loss = ad::mse_loss(model.forward(x), y);
    total += static_cast<double>(loss.item()) * static_cast<double>(hi - lo);
    count += hi - lo;
  }
  return total / static_cast<double>(count);
}

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
};

template <typename T>
struct TrainResult {
  Model<T> model;  // parameters restored to the best-validation epoch
  std::vector<EpochStats> history;
  int best_epoch = 0;
};

// Single optimization run: Adam on shuffled mini-batches, per-epoch
// train/validation losses, best-validation parameters kept. Fully
// deterministic in (architecture, spec, data, config.seed). Normalization
// statistics come from the training split alone; the validation split is
// only ever evaluated off the tape.
template <typename T>
TrainResult<T> train(ArchId arch, const LayerSpec& spec,
                     const std::vector<SequenceSample>& train_samples,
                     const std::vector<SequenceSample>& val_samples, const TrainConfig& cfg) {
  cfg.validate();
  if (train_samples.empty()) throw InvalidArgument("train: empty training split");
  if (val_samples.empty()) throw InvalidArgument("train: empty validation split");

  const int t_s = train_samples[0].t_s;
  const int d_c = train_samples[0].d_c;
  TrainResult<T> res;
  res.model = nets::build<T>(arch, spec, t_s, d_c, derive_seed(cfg.seed, 1));
  res.model.norm = NormStats::from_stats(data::stats(train_samples), cfg.scale_labels);

  AdamState<T> adam;
  std::vector<std::size_t> order(train_samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<T>> best_snapshot = detail::snapshot_values(res.model.params);
  res.best_epoch = 0;

  Rng shuffle_rng(derive_seed(cfg.seed, 2));
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.index(i)]);

    double epoch_loss = 0;
    std::size_t seen = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      Tensor<T> x, y;
      detail::fill_batch(train_samples, order, lo, hi, res.model.norm, x, y);

      Tape<T> tape;
      double batch_loss;
      {
        TapeScope<T> scope(tape);
        Tensor<T> loss = ad::mse_loss(res.model.forward(x), y);
        batch_loss = static_cast<double>(loss.item());
        if (!std::isfinite(batch_loss))
          throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(lo / cfg.batch_size));
        res.model.params.zero_grads();
        tape.backward(loss);
      }
      adam_step(res.model.params, adam, cfg);
      epoch_loss += batch_loss * static_cast<double>(hi - lo);
      seen += hi - lo;
    }
    epoch_loss /= static_cast<double>(seen);

    const double val = validation_loss(res.model, val_samples, cfg.batch_size);
    res.history.push_back(EpochStats{epoch, epoch_loss, val});
    if (val < best_val) {
      best_val = val;
      best_snapshot = detail::snapshot_values(res.model.params);
      res.best_epoch = epoch;
    }
  }
  detail::restore_values(res.model.params, best_snapshot);
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// Model outputs denormalized back to millinewtons.
template <typename T>
std::vector<double> predict(const Model<T>& model, const std::vector<SequenceSample>& samples,
                            int batch_size = 100) {
  ad::NoGradScope<T> no_grad;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> out;
  out.reserve(samples.size());
  for (std::size_t lo = 0; lo < samples.size(); lo += static_cast<std::size_t>(batch_size)) {
    const std::size_t hi = std::min(samples.size(), lo + static_cast<std::size_t>(batch_size));
    Tensor<T> x, y;
    detail::fill_batch(samples, order, lo, hi, model.norm, x, y);
    Tensor<T> pred = model.forward(x);
    for (std::size_t i = 0; i < hi - lo; ++i)
      out.push_back(model.norm.denormalize_label(static_cast<double>(pred.data()[i])));
  }
  return out;
}

// mae/mae_std over |e_i|; rmae_i = |e_i| / mean_j |y_j|; cc = Pearson.
// Standard deviations are the population form. Zero-variance targets leave
// cc as NaN with an explanatory note.
inline Metrics compute_metrics(const std::vector<double>& predictions,
                               const std::vector<double>& targets) {
  if (predictions.size() != targets.size() || predictions.empty())
    throw InvalidArgument("metrics: prediction/target size mismatch or empty");
  const auto n = static_cast<double>(targets.size());

  double abs_err_sum = 0, abs_target_sum = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    abs_err_sum += std::abs(predictions[i] - targets[i]);
    abs_target_sum += std::abs(targets[i]);
  }
  Metrics m;
  m.mae = abs_err_sum / n;
  double var = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double d = std::abs(predictions[i] - targets[i]) - m.mae;
    var += d * d;
  }
  m.mae_std = std::sqrt(var / n);

  const double mean_abs_target = abs_target_sum / n;
  if (mean_abs_target > 0) {
    m.rmae = m.mae / mean_abs_target;
    m.rmae_std = m.mae_std / mean_abs_target;
  } else {
    m.rmae = std::numeric_limits<double>::quiet_NaN();
    m.rmae_std = std::numeric_limits<double>::quiet_NaN();
    m.note = "rmae undefined: mean absolute target is zero";
  }

  double mean_p = 0, mean_t = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    mean_p += predictions[i];
    mean_t += targets[i];
  }
  mean_p /= n;
  mean_t /= n;
  double spp = 0, stt = 0, spt = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double dp = predictions[i] - mean_p;
    const double dt = targets[i] - mean_t;
    spp += dp * dp;
    stt += dt * dt;
    spt += dp * dt;
  }
  if (stt > 0 && spp > 0) {
    m.cc = spt / std::sqrt(spp * stt);
  } else {
    m.cc = std::numeric_limits<double>::quiet_NaN();
    m.note = m.note.empty() ? "cc undefined: zero-variance predictions or targets"
                            : m.note + "; cc undefined: zero-variance predictions or targets";
  }
  return m;
}

template <typename T>
Metrics evaluate(const Model<T>& model, const std::vector<SequenceSample>& test_samples,
                 int batch_size = 100) {
  if (test_samples.empty()) throw InvalidArgument("evaluate: empty test split");
  std::vector<double> targets;
  targets.reserve(test_samples.size());
  for (const auto& s : test_samples) targets.push_back(s.label);
  return compute_metrics(predict(model, test_samples, batch_size), targets);
}

// ---------------------------------------------------------------------------
// Model comparison
// ---------------------------------------------------------------------------

struct CompareRow {
  ArchId arch = ArchId::conv_gru_cnn;
  int n_seeds = 0;
  Metrics mean;
  Metrics stddev;  // across seeds
};

// Trains every architecture n_seeds times on the same splits and aggregates
// the test metrics per architecture. Run k of architecture a uses seed
// derive_seed(cfg.seed, a*1000 + k) so runs are independent and reproducible.
template <typename T>
std::vector<CompareRow> compare_models(const data::Splits& splits,
                                       const std::vector<ArchId>& archs, const LayerSpec& spec,
                                       const TrainConfig& cfg, int n_seeds) {
  if (n_seeds < 1) throw InvalidArgument("compare_models: n_seeds must be >= 1");
  std::vector<CompareRow> rows;
  for (std::size_t a = 0; a < archs.size(); ++a) {
    std::vector<Metrics> runs;
    for (int k = 0; k < n_seeds; ++k) {
      TrainConfig run_cfg = cfg;
      run_cfg.seed = derive_seed(cfg.seed, a * 1000 + static_cast<std::uint64_t>(k));
      auto result = train<T>(archs[a], spec, splits.train, splits.val, run_cfg);
      runs.push_back(evaluate(result.model, splits.test, cfg.batch_size));
    }
    CompareRow row;
    row.arch = archs[a];
    row.n_seeds = n_seeds;
    auto agg = [&](auto field) {
      double mean = 0;
      for (const auto& r : runs) mean += r.*field;
      mean /= static_cast<double>(runs.size());
      double var = 0;
      for (const auto& r : runs) var += (r.*field - mean) * (r.*field - mean);
      return std::pair<double, double>(mean, std::sqrt(var / static_cast<double>(runs.size())));
    };
    std::tie(row.mean.mae, row.stddev.mae) = agg(&Metrics::mae);
    std::tie(row.mean.mae_std, row.stddev.mae_std) = agg(&Metrics::mae_std);
    std::tie(row.mean.rmae, row.stddev.rmae) = agg(&Metrics::rmae);
    std::tie(row.mean.rmae_std, row.stddev.rmae_std) = agg(&Metrics::rmae_std);
    std::tie(row.mean.cc, row.stddev.cc) = agg(&Metrics::cc);
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Report writers (comma-separated, one documented header row)
// ---------------------------------------------------------------------------

inline std::string metrics_csv_header() { return "mae_mN,mae_std_mN,rmae,rmae_std,cc,note"; }

inline std::string metrics_csv_row(const Metrics& m) {
  std::ostringstream os;
  os.precision(10);
  os << m.mae << ',' << m.mae_std << ',' << m.rmae << ',' << m.rmae_std << ',' << m.cc << ','
     << m.note;
  return os.str();
}

inline void write_history_csv(const std::vector<EpochStats>& history, std::ostream& os) {
  os << "epoch,train_loss,val_loss\n";
  os.precision(10);
  for (const auto& e : history) os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << '\n';
}

inline void write_compare_csv(const std::vector<CompareRow>& rows, std::ostream& os) {
  os << "arch,n_seeds,mae_mean_mN,mae_sd_mN,rmae_mean,rmae_sd,cc_mean,cc_sd\n";
  os.precision(10);
  for (const auto& r : rows)
    os << nets::arch_name(r.arch) << ',' << r.n_seeds << ',' << r.mean.mae << ',' << r.stddev.mae
       << ',' << r.mean.rmae << ',' << r.stddev.rmae << ',' << r.mean.cc << ',' << r.stddev.cc
       << '\n';
}

}  // namespace octforce::train
