#include <doctest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"
#include "viseme/dataset.hpp"
#include "viseme/errors.hpp"
#include "viseme/model.hpp"
#include "viseme/rng.hpp"
#include "viseme/text_io.hpp"
#include "viseme/train.hpp"

using namespace viseme;
using decode::DiffusionSchedule;
using decode::ModelArch;
using decode::VisemeNet;

namespace {

ModelArch tiny_arch(Index channels = 2, Index window = 16) {
  ModelArch a;
  a.in_channels = channels;
  a.window = window;
  a.T = 10;
  return a;
}

data::Dataset random_dataset(int n_trials, Index channels, Index samples, Rng& rng) {
  std::vector<data::LabeledTrial> trials;
  for (int i = 0; i < n_trials; ++i) {
    data::LabeledTrial t;
    t.data.resize(channels, samples);
    for (Index c = 0; c < channels; ++c)
      for (Index s = 0; s < samples; ++s)
        t.data(c, s) = static_cast<float>(uniform_real(rng, -1.0, 1.0));
    t.label = static_cast<int>(rng() % 15);
    t.sentence_id = i;
    t.interval_index = 0;
    trials.push_back(std::move(t));
  }
  std::vector<std::string> names;
  for (Index c = 0; c < channels; ++c) names.push_back("CH" + std::to_string(c));
  return data::Dataset::from_trials(std::move(trials), 1000.0,
                                    1000.0 * static_cast<double>(samples) / 1000.0,
                                    std::move(names));
}

}  // namespace

TEST_CASE("single-step schedule") {
  const auto s = decode::make_schedule(1, 0.1, 0.1);
  REQUIRE(s.T == 1);
  CHECK(s.beta[0] == 0.1);
  CHECK(s.alpha_bar[0] == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("thousand-step schedule decays into (0, 0.01)") {
  const auto s = decode::make_schedule(1000, 1e-4, 0.02);
  REQUIRE(s.T == 1000);
  CHECK(s.beta.front() == doctest::Approx(1e-4));
  CHECK(s.beta.back() == doctest::Approx(0.02));
  for (int t = 1; t < 1000; ++t) {
    CHECK(s.beta[t] > s.beta[t - 1]);
    CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    CHECK(s.alpha_bar[t] > 0.0);
  }
  CHECK(s.alpha_bar.back() < 0.01);

  // Independent product oracle in long double.
  long double prod = 1.0L;
  for (int t = 0; t < 1000; ++t) prod *= 1.0L - static_cast<long double>(s.beta[t]);
  CHECK(s.alpha_bar.back() == doctest::Approx(static_cast<double>(prod)).epsilon(1e-12));
}

TEST_CASE("schedule parameter validation") {
  CHECK_THROWS_AS(decode::make_schedule(0, 0.1, 0.2), Error);
  CHECK_THROWS_AS(decode::make_schedule(10, 0.0, 0.2), Error);
  CHECK_THROWS_AS(decode::make_schedule(10, 0.1, 1.0), Error);
  CHECK_THROWS_AS(decode::make_schedule(10, 0.2, 0.1), Error);
}

TEST_CASE("forward diffusion identities") {
  const auto s = decode::make_schedule(100, 1e-4, 0.02);
  Rng rng(61);
  MatD x0(3, 20);
  for (Index i = 0; i < x0.size(); ++i) x0.data()[i] = uniform_real(rng, -2, 2);
  const MatD zeros = MatD::Zero(3, 20);

  const int t = 40;
  const double abar = s.alpha_bar_at(t);
  const MatD no_noise = decode::forward_diffuse<double>(x0, zeros, t, s);
  CHECK((no_noise - std::sqrt(abar) * x0).cwiseAbs().maxCoeff() < 1e-12);

  MatD eps(3, 20);
  for (Index i = 0; i < eps.size(); ++i) eps.data()[i] = uniform_real(rng, -2, 2);
  const MatD pure_noise = decode::forward_diffuse<double>(zeros, eps, t, s);
  CHECK((pure_noise - std::sqrt(1.0 - abar) * eps).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(decode::forward_diffuse<double>(x0, MatD::Zero(3, 19), t, s), Error);
  CHECK_THROWS_AS(decode::forward_diffuse<double>(x0, zeros, 0, s), Error);
  CHECK_THROWS_AS(decode::forward_diffuse<double>(x0, zeros, 101, s), Error);
}

TEST_CASE("diffused samples match the closed-form moments") {
  const auto s = decode::make_schedule(100, 1e-4, 0.02);
  const int t = 60;
  const double abar = s.alpha_bar_at(t);
  const double x0_val = 0.7;
  const Index n = 10000;

  Rng rng(62);
  std::normal_distribution<double> gauss(0.0, 1.0);
  MatD x0(1, n), eps(1, n);
  x0.setConstant(x0_val);
  for (Index i = 0; i < n; ++i) eps(0, i) = gauss(rng);
  const MatD xt = decode::forward_diffuse<double>(x0, eps, t, s);

  const double mean = xt.mean();
  const double var = (xt.array() - mean).square().sum() / static_cast<double>(n - 1);
  const double se_mean = std::sqrt((1.0 - abar) / static_cast<double>(n));
  const double se_var = (1.0 - abar) * std::sqrt(2.0 / static_cast<double>(n - 1));
  CHECK(std::abs(mean - std::sqrt(abar) * x0_val) < 4.0 * se_mean);
  CHECK(std::abs(var - (1.0 - abar)) < 4.0 * se_var);
}

TEST_CASE("architecture validation") {
  ModelArch a = tiny_arch();
  a.window = 20;
  CHECK_THROWS_AS(a.validate(), Error);
  a.window = 8;
  CHECK_THROWS_AS(a.validate(), Error);
  a.window = 16;
  a.in_channels = 0;
  CHECK_THROWS_AS(a.validate(), Error);
  a.in_channels = 2;
  a.beta_hi = 1.0;
  CHECK_THROWS_AS(a.validate(), Error);
}

TEST_CASE("forward pass produces the contracted shapes") {
  const ModelArch arch = tiny_arch(3, 24);
  const VisemeNet<float> net(arch);
  const VecF theta = net.init_params(7);
  CHECK(net.n_params() == theta.size());
  CHECK(net.n_params() > 1000);

  const Index batch = 2;
  Rng rng(63);
  MatF x0(3, batch * 24), xt(3, batch * 24);
  for (Index i = 0; i < x0.size(); ++i) {
    x0.data()[i] = static_cast<float>(uniform_real(rng, -1, 1));
    xt.data()[i] = static_cast<float>(uniform_real(rng, -1, 1));
  }
  const auto out = net.forward(x0, xt, {1, 5}, batch, theta, nullptr);
  CHECK(out.ddpm_out.rows() == 3);
  CHECK(out.ddpm_out.cols() == batch * 24);
  CHECK(out.recon.rows() == 3);
  CHECK(out.recon.cols() == batch * 24);
  CHECK(out.logits.rows() == 15);
  CHECK(out.logits.cols() == batch);
  CHECK(out.logits.allFinite());

  CHECK_THROWS_AS(net.forward(x0, xt, {1}, batch, theta, nullptr), Error);
  CHECK_THROWS_AS(net.forward(MatF::Zero(3, 24), xt, {1, 5}, batch, theta, nullptr), Error);
}

TEST_CASE("parameter init is seed deterministic") {
  const VisemeNet<float> net(tiny_arch());
  const VecF a = net.init_params(5);
  const VecF b = net.init_params(5);
  const VecF c = net.init_params(6);
  CHECK((a.array() == b.array()).all());
  CHECK((a.array() != c.array()).any());
}

TEST_CASE("loss on uniform logits is ln(15)") {
  const ModelArch arch = tiny_arch(2, 16);
  const VisemeNet<float> net(arch);
  const Index batch = 4;

  VisemeNet<float>::Output out;
  out.ddpm_out = MatF::Zero(2, batch * 16);
  out.recon = MatF::Zero(2, batch * 16);
  out.logits = MatF::Zero(15, batch);
  const MatF x0 = MatF::Zero(2, batch * 16);

  const auto parts = net.compute_loss(out, x0, {0, 3, 7, 14}, batch, {});
  CHECK(parts.ddpm == 0.0);
  CHECK(parts.ae == 0.0);
  CHECK(parts.cls == doctest::Approx(std::log(15.0)).epsilon(1e-6));
  CHECK(parts.total == doctest::Approx(std::log(15.0)).epsilon(1e-6));
}

TEST_CASE("loss weights scale their terms") {
  const ModelArch arch = tiny_arch(2, 16);
  const VisemeNet<float> net(arch);
  const Index batch = 2;

  VisemeNet<float>::Output out;
  const MatF x0 = MatF::Zero(2, batch * 16);
  out.ddpm_out = MatF::Constant(2, batch * 16, 1.0f);  // unit mean-square error
  out.recon = MatF::Zero(2, batch * 16);
  out.logits = MatF::Zero(15, batch);

  decode::LossWeights w;
  w.ddpm = 2.0;
  w.ae = 3.0;
  w.cls = 5.0;
  const auto parts = net.compute_loss(out, x0, {1, 2}, batch, w);
  CHECK(parts.ddpm == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(parts.ae == 0.0);
  CHECK(parts.total == doctest::Approx(2.0 * 1.0 + 5.0 * std::log(15.0)).epsilon(1e-6));
}

TEST_CASE("analytic gradients match central differences: attention block") {
  const auto r = decode::grad_check_se(8, 6, 3, 0, 11);
  CHECK(r.n_checked > 0);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("analytic gradients match central differences: spline head") {
  const auto r = decode::grad_check_kan(6, 4, 5, 0, 12);
  CHECK(r.n_checked > 0);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("analytic gradients match central differences: full model") {
  ModelArch arch = tiny_arch(3, 16);
  const auto r = decode::grad_check_model(arch, 2, 400, 13);
  CHECK(r.n_checked >= 400);
  CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("a tiny model overfits four trials") {
  Rng rng(64);
  const data::Dataset ds = random_dataset(4, 2, 64, rng);
  ModelArch arch = tiny_arch(2, 64);
  const VisemeNet<float> net(arch);
  VecF theta = net.init_params(3);

  decode::TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 4;
  cfg.optimizer = "adam";
  cfg.lr = 1e-3;
  cfg.seed = 20;
  const auto sched = decode::make_schedule(arch.T, arch.beta_lo, arch.beta_hi);
  const auto result = decode::train_model(net, theta, ds, cfg, sched);

  REQUIRE(result.epochs.size() == 200);
  const double first = result.epochs.front().loss;
  const double last = result.epochs.back().loss;
  CHECK(last < 0.5 * first);
  CHECK(result.epochs.back().train_top1 == 100.0);
}

TEST_CASE("training is bit-deterministic in the seed") {
  Rng rng(65);
  const data::Dataset ds = random_dataset(6, 2, 16, rng);
  ModelArch arch = tiny_arch(2, 16);
  const VisemeNet<float> net(arch);
  const auto sched = decode::make_schedule(arch.T, arch.beta_lo, arch.beta_hi);

  decode::TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.seed = 77;

  VecF ta = net.init_params(9);
  VecF tb = net.init_params(9);
  decode::train_model(net, ta, ds, cfg, sched);
  decode::train_model(net, tb, ds, cfg, sched);
  CHECK((ta.array() == tb.array()).all());

  VecF tc = net.init_params(9);
  cfg.seed = 78;
  decode::train_model(net, tc, ds, cfg, sched);
  CHECK((ta.array() != tc.array()).any());
}

TEST_CASE("prediction is independent of the batch size") {
  Rng rng(66);
  const data::Dataset ds = random_dataset(7, 2, 16, rng);
  ModelArch arch = tiny_arch(2, 16);
  const VisemeNet<float> net(arch);
  const VecF theta = net.init_params(4);
  const auto sched = decode::make_schedule(arch.T, arch.beta_lo, arch.beta_hi);

  const MatF a = decode::predict_logits(net, theta, ds, sched, 2);
  const MatF b = decode::predict_logits(net, theta, ds, sched, 64);
  REQUIRE(a.rows() == 15);
  REQUIRE(a.cols() == 7);
  CHECK((a.array() == b.array()).all());
}

TEST_CASE("top_k breaks ties toward the lower class id") {
  VecF logits = VecF::Zero(15);
  logits[3] = 2.0f;
  logits[7] = 2.0f;
  logits[1] = 1.0f;
  const auto top3 = decode::top_k(logits, 3);
  REQUIRE(top3.size() == 3);
  CHECK(top3[0] == 3);
  CHECK(top3[1] == 7);
  CHECK(top3[2] == 1);

  // Monotonicity: the top-1 element is in every longer prefix.
  const auto top1 = decode::top_k(logits, 1);
  const auto top5 = decode::top_k(logits, 5);
  CHECK(top1[0] == top3[0]);
  CHECK(top5[0] == top3[0]);
  CHECK(top5[1] == top3[1]);
}

TEST_CASE("checkpoints round trip exactly") {
  testutil::TmpDir tmp;
  ModelArch arch = tiny_arch(3, 24);
  const VisemeNet<float> net(arch);
  const VecF theta = net.init_params(15);

  nlohmann::json extra;
  extra["modality"] = "EEG_EMG";
  extra["window_ms"] = 128.0;
  const auto path = tmp / "model.ckpt";
  decode::save_checkpoint(path, arch, theta, extra);

  const auto ck = decode::load_checkpoint(path);
  CHECK(ck.arch.in_channels == 3);
  CHECK(ck.arch.window == 24);
  CHECK(ck.arch.T == arch.T);
  CHECK(ck.arch.beta_lo == arch.beta_lo);
  CHECK(ck.arch.beta_hi == arch.beta_hi);
  REQUIRE(ck.theta.size() == theta.size());
  CHECK((ck.theta.array() == theta.array()).all());
  CHECK(ck.extra["modality"] == "EEG_EMG");
}

TEST_CASE("corrupted checkpoints are integrity errors") {
  testutil::TmpDir tmp;
  ModelArch arch = tiny_arch();
  const VisemeNet<float> net(arch);
  const auto path = tmp / "model.ckpt";
  decode::save_checkpoint(path, arch, net.init_params(1));

  std::string buf = read_binary_str(path);
  buf.resize(buf.size() - 7);
  write_binary(path, buf);
  CHECK_THROWS_AS(decode::load_checkpoint(path), Error);

  write_binary(path, std::string("not a checkpoint at all"));
  CHECK_THROWS_AS(decode::load_checkpoint(path), Error);
}
