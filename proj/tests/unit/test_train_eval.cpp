#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <vector>

#include "octforce/train_eval.hpp"
#include "support/oracles.hpp"

using namespace octforce;
using ad::Tensor;
using nets::ArchId;
using nets::LayerSpec;
using streams::SequenceSample;
using train::Metrics;
using train::TrainConfig;

namespace {

// label is a smooth function of the last scan, so a tiny model can actually
// fit it instead of having to memorize noise
std::vector<SequenceSample> learnable_samples(std::size_t n, int t_s, int d_c,
                                              std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SequenceSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    SequenceSample s;
    s.t_s = t_s;
    s.d_c = d_c;
    s.first_scan = i;
    s.window.resize(static_cast<std::size_t>(t_s) * d_c);
    for (auto& v : s.window) v = static_cast<float>(rng.uniform(0, 1));
    double mean_last = 0;
    for (int j = 0; j < d_c; ++j)
      mean_last += s.window[static_cast<std::size_t>((t_s - 1) * d_c + j)];
    mean_last /= d_c;
    s.label = 200.0 * (mean_last - 0.5);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("config defaults carry the documented optimizer settings", "[train]") {
  TrainConfig cfg;
  CHECK(cfg.batch_size == 100);
  CHECK(cfg.beta1 == 0.9);
  CHECK(cfg.beta2 == 0.999);
  CHECK(cfg.epsilon == 1e-8);
}

TEST_CASE("zero gradients leave parameters unchanged and decay the moments", "[train]") {
  nets::ModelParams<double> params;
  auto p = params.add("w", Tensor<double>::from({2}, {1.5, -0.5}, true));
  train::AdamState<double> state;
  TrainConfig cfg;

  p.grad_data();  // zero gradient buffer
  train::adam_step(params, state, cfg);
  CHECK(p.values()[0] == 1.5);
  CHECK(p.values()[1] == -0.5);

  // prepare non-zero moments, then step with zero gradients
  state.slots[0].m = {0.8, 0.4};
  state.slots[0].v = {0.2, 0.1};
  train::adam_step(params, state, cfg);
  CHECK(state.slots[0].m[0] == Catch::Approx(0.9 * 0.8));
  CHECK(state.slots[0].v[0] == Catch::Approx(0.999 * 0.2));
}

TEST_CASE("the first Adam step moves by -lr * sign(g)", "[train]") {
  for (double g : {0.7, -2.5, 0.001}) {
    nets::ModelParams<double> params;
    auto p = params.add("x", Tensor<double>::from({1}, {3.0}, true));
    p.grad_data()[0] = g;
    train::AdamState<double> state;
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    train::adam_step(params, state, cfg);
    const double moved = p.values()[0] - 3.0;
    CHECK(moved == Catch::Approx(-cfg.learning_rate * (g > 0 ? 1.0 : -1.0)).epsilon(1e-5));
  }
}

TEST_CASE("Adam descends the quadratic bowl", "[train]") {
  nets::ModelParams<double> params;
  auto x = params.add("x", Tensor<double>::from({1}, {1.0}, true));
  train::AdamState<double> state;
  TrainConfig cfg;
  cfg.learning_rate = 0.05;

  double prev_loss = 1.0;
  std::vector<double> losses;
  for (int step = 0; step < 100; ++step) {
    const double v = x.values()[0];
    x.zero_grad();
    x.grad_data()[0] = 2.0 * v;
    train::adam_step(params, state, cfg);
    losses.push_back(x.values()[0] * x.values()[0]);
  }
  for (int step = 0; step < 15; ++step) {
    CHECK(losses[static_cast<std::size_t>(step)] < prev_loss);
    prev_loss = losses[static_cast<std::size_t>(step)];
  }
  CHECK(losses.back() < 0.01);
}

TEST_CASE("a non-finite gradient aborts the step and names the parameter", "[train]") {
  nets::ModelParams<double> params;
  auto a = params.add("layer.weight", Tensor<double>::from({1}, {1.0}, true));
  auto b = params.add("layer.bias", Tensor<double>::from({1}, {2.0}, true));
  a.grad_data()[0] = 0.5;
  b.grad_data()[0] = std::numeric_limits<double>::infinity();
  train::AdamState<double> state;
  TrainConfig cfg;
  CHECK_THROWS_WITH(train::adam_step(params, state, cfg),
                    Catch::Matchers::ContainsSubstring("layer.bias"));
  CHECK(a.values()[0] == 1.0);  // nothing moved
  CHECK(b.values()[0] == 2.0);
}

TEST_CASE("perfect predictions score mae 0, rmae 0, cc 1", "[train]") {
  const std::vector<double> targets{10, 30, 50, 20, 90};
  auto m = train::compute_metrics(targets, targets);
  CHECK(m.mae == 0.0);
  CHECK(m.rmae == 0.0);
  CHECK(m.cc == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("a constant 1 mN shift gives mae 1 and keeps cc at 1", "[train]") {
  const std::vector<double> targets{10, 30, 50, 20, 90};
  std::vector<double> shifted = targets;
  for (auto& v : shifted) v += 1.0;
  auto m = train::compute_metrics(shifted, targets);
  CHECK(m.mae == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(m.mae_std == Catch::Approx(0.0).margin(1e-12));
  CHECK(m.cc == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mae / rmae always recovers the mean absolute target", "[train]") {
  Rng rng(4);
  std::vector<double> targets, pred_a, pred_b;
  for (int i = 0; i < 200; ++i) {
    targets.push_back(rng.uniform(0, 400));
    pred_a.push_back(targets.back() + rng.uniform(-5, 5));
    pred_b.push_back(targets.back() * rng.uniform(0.8, 1.2));
  }
  double mean_abs = 0;
  for (double t : targets) mean_abs += std::abs(t);
  mean_abs /= static_cast<double>(targets.size());

  const auto ma = train::compute_metrics(pred_a, targets);
  const auto mb = train::compute_metrics(pred_b, targets);
  CHECK(ma.mae / ma.rmae == Catch::Approx(mean_abs).epsilon(1e-12));
  CHECK(mb.mae / mb.rmae == Catch::Approx(mean_abs).epsilon(1e-12));
  CHECK(ma.rmae_std * mean_abs == Catch::Approx(ma.mae_std).epsilon(1e-12));
}

TEST_CASE("published calibration rows imply one mean force per dataset", "[train]") {
  // five (MAE, rMAE) pairs reported for the same test set must imply the
  // same mean absolute force if the rMAE definition is mae / mean|target|
  const double pairs[5][2] = {
      {1.76, 0.0213}, {2.06, 0.0249}, {2.09, 0.0252}, {3.24, 0.0392}, {3.22, 0.0389}};
  double lo = 1e300, hi = 0;
  for (const auto& p : pairs) {
    const double implied = p[0] / p[1];
    lo = std::min(lo, implied);
    hi = std::max(hi, implied);
  }
  CHECK(hi / lo < 1.01);  // consistent within the published rounding
  CHECK(lo > 82.0);
  CHECK(hi < 83.5);

  // different stiffness grades have different force scales
  CHECK(7.46 / 0.0275 == Catch::Approx(271.27).epsilon(0.01));
  CHECK(24.26 / 0.0369 == Catch::Approx(657.45).epsilon(0.01));
}

TEST_CASE("metrics are invariant to sample order and scale as expected", "[train]") {
  Rng rng(5);
  std::vector<double> targets, preds;
  for (int i = 0; i < 100; ++i) {
    targets.push_back(rng.uniform(-50, 300));
    preds.push_back(targets.back() + rng.uniform(-10, 10));
  }
  const auto base = train::compute_metrics(preds, targets);

  std::vector<std::size_t> perm(targets.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  std::vector<double> pt, pp;
  for (auto i : perm) {
    pt.push_back(targets[i]);
    pp.push_back(preds[i]);
  }
  const auto shuffled = train::compute_metrics(pp, pt);
  CHECK(shuffled.mae == Catch::Approx(base.mae).epsilon(1e-12));
  CHECK(shuffled.rmae == Catch::Approx(base.rmae).epsilon(1e-12));
  CHECK(shuffled.cc == Catch::Approx(base.cc).epsilon(1e-12));

  std::vector<double> st = targets, sp = preds;
  for (auto& v : st) v *= 7.5;
  for (auto& v : sp) v *= 7.5;
  const auto scaled = train::compute_metrics(sp, st);
  CHECK(scaled.mae == Catch::Approx(7.5 * base.mae).epsilon(1e-12));
  CHECK(scaled.rmae == Catch::Approx(base.rmae).epsilon(1e-12));
  CHECK(scaled.cc == Catch::Approx(base.cc).epsilon(1e-12));
}

TEST_CASE("zero-variance targets mark cc as undefined", "[train]") {
  const std::vector<double> targets{5, 5, 5, 5};
  const std::vector<double> preds{4, 5, 6, 5};
  const auto m = train::compute_metrics(preds, targets);
  CHECK(std::isnan(m.cc));
  CHECK_FALSE(m.note.empty());
}

TEST_CASE("a tiny convGRU-CNN overfits 50 samples", "[train][slow]") {
  auto samples = learnable_samples(50, 6, 12, 9);
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.learning_rate = 5e-3;
  cfg.seed = 5;
  auto result = train::train<double>(ArchId::conv_gru_cnn, LayerSpec::tiny(), samples, samples, cfg);
  const double initial = result.history.front().train_loss;
  const double final_loss = result.history.back().train_loss;
  CHECK(final_loss < 0.01 * initial);
}

TEST_CASE("identical seeds give identical loss histories", "[train]") {
  auto samples = learnable_samples(60, 4, 8, 10);
  auto val = learnable_samples(20, 4, 8, 11);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 20;
  cfg.seed = 77;
  auto a = train::train<double>(ArchId::gru, LayerSpec::tiny(), samples, val, cfg);
  auto b = train::train<double>(ArchId::gru, LayerSpec::tiny(), samples, val, cfg);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].val_loss == b.history[i].val_loss);
  }
  for (std::size_t i = 0; i < a.model.params.items.size(); ++i)
    CHECK(a.model.params.items[i].second.values() == b.model.params.items[i].second.values());

  TrainConfig other = cfg;
  other.seed = 78;
  auto c = train::train<double>(ArchId::gru, LayerSpec::tiny(), samples, val, other);
  CHECK(c.history.back().train_loss != a.history.back().train_loss);
}

TEST_CASE("validation runs entirely off the tape", "[train]") {
  auto samples = learnable_samples(30, 4, 8, 12);
  auto model = nets::build<double>(ArchId::cnn1d, LayerSpec::tiny(), 4, 8, 3);
  ad::Tape<double> tape;
  {
    ad::TapeScope<double> scope(tape);
    train::validation_loss(model, samples, 10);
  }
  CHECK(tape.empty());

  // prediction goes through the same no-grad path
  {
    ad::TapeScope<double> scope(tape);
    train::predict(model, samples, 10);
  }
  CHECK(tape.empty());
}

TEST_CASE("training statistics come from the training split alone", "[train]") {
  auto train_set = learnable_samples(40, 4, 8, 13);
  auto val = learnable_samples(15, 4, 8, 14);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 20;
  auto result = train::train<double>(ArchId::cnn1d, LayerSpec::tiny(), train_set, val, cfg);
  const auto expected = data::stats(train_set);
  for (int j = 0; j < 8; ++j) {
    CHECK(result.model.norm.pixel_mean[static_cast<std::size_t>(j)] ==
          expected.pixel_mean[static_cast<std::size_t>(j)]);
    CHECK(result.model.norm.pixel_std[static_cast<std::size_t>(j)] ==
          expected.pixel_std[static_cast<std::size_t>(j)]);
  }
}

TEST_CASE("training halts with a diagnostic when the loss diverges", "[train]") {
  auto samples = learnable_samples(30, 4, 8, 15);
  for (auto& s : samples) s.label = 1e300;  // scaled labels overflow the loss
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.scale_labels = false;
  CHECK_THROWS_AS(train::train<double>(ArchId::cnn1d, LayerSpec::tiny(), samples, samples, cfg),
                  NumericError);
}

TEST_CASE("single-architecture comparison yields one documented row", "[train]") {
  auto samples = learnable_samples(80, 4, 8, 16);
  data::Splits splits = data::split(samples, data::SplitSpec{});
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 20;
  auto rows = train::compare_models<double>(splits, {ArchId::cnn1d}, LayerSpec::tiny(), cfg, 2);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].n_seeds == 2);
  CHECK(rows[0].mean.mae >= 0);

  std::ostringstream os;
  train::write_compare_csv(rows, os);
  const auto text = os.str();
  CHECK(text.rfind("arch,n_seeds,mae_mean_mN,mae_sd_mN,rmae_mean,rmae_sd,cc_mean,cc_sd\n", 0) ==
        0);
  CHECK(text.find("1d-cnn,2,") != std::string::npos);
}
