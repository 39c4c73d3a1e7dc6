#include "viseme/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "viseme/errors.hpp"
#include "viseme/rng.hpp"
#include "viseme/text_io.hpp"

namespace viseme::decode {
namespace {

constexpr char kMagic[4] = {'V', 'D', 'C', 'K'};

void check_dataset_against(const ModelArch& arch, const data::Dataset& ds) {
  ds.validate();
  if (ds.trials.empty()) throw validation_error("dataset holds no trials");
  if (ds.n_channels != arch.in_channels)
    throw validation_error("dataset has " + std::to_string(ds.n_channels) +
                           " channels, model expects " + std::to_string(arch.in_channels));
  if (ds.n_samples != arch.window)
    throw validation_error("dataset window is " + std::to_string(ds.n_samples) +
                           " samples, model expects " + std::to_string(arch.window));
}

// Shared by training and prediction: diffuse each trial in the batch to its
// own step with the provided noise (empty noise means zero noise).
MatF diffuse_batch(const MatF& x0, const MatF* eps, const std::vector<int>& tsteps, Index window,
                   const DiffusionSchedule& sched) {
  MatF xt(x0.rows(), x0.cols());
  for (size_t b = 0; b < tsteps.size(); ++b) {
    const double abar = sched.alpha_bar_at(tsteps[b]);
    const Index off = static_cast<Index>(b) * window;
    xt.middleCols(off, window) =
        static_cast<float>(std::sqrt(abar)) * x0.middleCols(off, window);
    if (eps)
      xt.middleCols(off, window) +=
          static_cast<float>(std::sqrt(1.0 - abar)) * eps->middleCols(off, window);
  }
  return xt;
}

struct OptimizerState {
  VecD vel;      // sgd
  VecD m, v;     // adam
  long step = 0;
};

void apply_update(VecF& theta, const VecF& grad, const TrainConfig& cfg, OptimizerState& st) {
  ++st.step;
  if (cfg.optimizer == "sgd") {
    st.vel = cfg.momentum * st.vel - cfg.lr * grad.cast<double>();
    theta += st.vel.cast<float>();
  } else {
    const VecD g = grad.cast<double>();
    st.m = cfg.adam_beta1 * st.m + (1.0 - cfg.adam_beta1) * g;
    st.v = (cfg.adam_beta2 * st.v.array() + (1.0 - cfg.adam_beta2) * g.array().square()).matrix();
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(st.step));
    theta -= (cfg.lr * (st.m.array() / bc1) / ((st.v.array() / bc2).sqrt() + cfg.adam_eps))
                 .cast<float>()
                 .matrix();
  }
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& buf, size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  return v;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw validation_error("training needs at least one epoch");
  if (batch_size < 1) throw validation_error("batch size must be positive");
  if (!(lr > 0.0)) throw validation_error("learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw validation_error("momentum must lie in [0, 1)");
  if (clip_norm < 0.0) throw validation_error("clip norm must be non-negative");
  if (optimizer != "sgd" && optimizer != "adam")
    throw validation_error("unknown optimizer \"" + optimizer + "\" (expected sgd or adam)");
  if (!(weights.ddpm >= 0.0 && weights.ae >= 0.0 && weights.cls >= 0.0))
    throw validation_error("loss weights must be non-negative");
}

MatF make_batch(const data::Dataset& ds, const std::vector<int>& idx) {
  if (idx.empty()) throw validation_error("batch index list is empty");
  MatF x(ds.n_channels, static_cast<Index>(idx.size()) * ds.n_samples);
  for (size_t b = 0; b < idx.size(); ++b) {
    const int i = idx[b];
    if (i < 0 || static_cast<size_t>(i) >= ds.trials.size())
      throw validation_error("batch index " + std::to_string(i) + " out of range");
    x.middleCols(static_cast<Index>(b) * ds.n_samples, ds.n_samples) =
        ds.trials[static_cast<size_t>(i)].data;
  }
  return x;
}

TrainResult train_model(const VisemeNet<float>& net, VecF& theta, const data::Dataset& train,
                        const TrainConfig& cfg, const DiffusionSchedule& sched,
                        const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  check_dataset_against(net.arch(), train);
  if (theta.size() != net.n_params())
    throw validation_error("parameter vector has " + std::to_string(theta.size()) +
                           " entries, model has " + std::to_string(net.n_params()));
  if (sched.T != net.arch().T)
    throw validation_error("schedule has T=" + std::to_string(sched.T) + ", model expects T=" +
                           std::to_string(net.arch().T));

  Rng rng(derive_seed(cfg.seed, "train"));
  OptimizerState st;
  st.vel = VecD::Zero(theta.size());
  st.m = VecD::Zero(theta.size());
  st.v = VecD::Zero(theta.size());

  const Index n = static_cast<Index>(train.trials.size());
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.n_params = net.n_params();
  VecF grad(theta.size());

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    long correct = 0;

    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index bsz = std::min<Index>(cfg.batch_size, n - start);
      std::vector<int> idx(order.begin() + start, order.begin() + start + bsz);

      const MatF x0 = make_batch(train, idx);
      std::vector<int> labels(idx.size());
      for (size_t b = 0; b < idx.size(); ++b)
        labels[b] = train.trials[static_cast<size_t>(idx[b])].label;

      std::vector<int> tsteps(idx.size());
      for (auto& t : tsteps) t = static_cast<int>(uniform_int(rng, 1, sched.T));
      MatF eps(x0.rows(), x0.cols());
      for (Index j = 0; j < eps.size(); ++j)
        eps.data()[j] = static_cast<float>(normal(rng, 0.0, 1.0));
      const MatF xt = diffuse_batch(x0, &eps, tsteps, train.n_samples, sched);

      nn::Trace<float> tr;
      const auto out = net.forward(x0, xt, tsteps, bsz, theta, &tr);
      grad.setZero();
      const LossParts parts =
          net.loss_and_backward(out, x0, labels, bsz, cfg.weights, theta, tr, grad);
      if (!std::isfinite(parts.total))
        throw validation_error("training diverged: non-finite loss in epoch " +
                               std::to_string(epoch));

      if (cfg.clip_norm > 0.0) {
        const double gn = grad.cast<double>().norm();
        if (gn > cfg.clip_norm) grad *= static_cast<float>(cfg.clip_norm / gn);
      }
      apply_update(theta, grad, cfg, st);

      log.loss += parts.total * bsz;
      log.loss_ddpm += parts.ddpm * bsz;
      log.loss_ae += parts.ae * bsz;
      log.loss_cls += parts.cls * bsz;
      ++log.n_batches;
      for (Index b = 0; b < bsz; ++b) {
        Index best = 0;
        out.logits.col(b).maxCoeff(&best);
        if (static_cast<int>(best) == labels[static_cast<size_t>(b)]) ++correct;
      }
    }

    log.loss /= n;
    log.loss_ddpm /= n;
    log.loss_ae /= n;
    log.loss_cls /= n;
    log.train_top1 = static_cast<double>(correct) / static_cast<double>(n);
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

MatF predict_logits(const VisemeNet<float>& net, const VecF& theta, const data::Dataset& ds,
                    const DiffusionSchedule& sched, Index batch_size) {
  check_dataset_against(net.arch(), ds);
  if (batch_size < 1) throw validation_error("batch size must be positive");
  if (theta.size() != net.n_params())
    throw validation_error("parameter vector does not match the model");

  const Index n = static_cast<Index>(ds.trials.size());
  MatF logits(net.arch().n_classes, n);
  for (Index start = 0; start < n; start += batch_size) {
    const Index bsz = std::min<Index>(batch_size, n - start);
    std::vector<int> idx(static_cast<size_t>(bsz));
    std::iota(idx.begin(), idx.end(), static_cast<int>(start));
    const MatF x0 = make_batch(ds, idx);
    const std::vector<int> tsteps(static_cast<size_t>(bsz), 1);
    const MatF xt = diffuse_batch(x0, nullptr, tsteps, ds.n_samples, sched);
    const auto out = net.forward(x0, xt, tsteps, bsz, theta, nullptr);
    logits.middleCols(start, bsz) = out.logits;
  }
  return logits;
}

std::vector<int> top_k(const VecF& logits, int k) {
  if (k < 1 || k > logits.size())
    throw validation_error("top-k needs 1 <= k <= " + std::to_string(logits.size()));
  std::vector<int> ids(static_cast<size_t>(logits.size()));
  std::iota(ids.begin(), ids.end(), 0);
  std::sort(ids.begin(), ids.end(), [&](int a, int b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  });
  ids.resize(static_cast<size_t>(k));
  return ids;
}

void save_checkpoint(const std::filesystem::path& path, const ModelArch& arch, const VecF& theta,
                     const nlohmann::json& extra) {
  arch.validate();
  if (!theta.allFinite()) throw validation_error("refusing to save non-finite parameters");
  nlohmann::ordered_json h;
  h["in_channels"] = arch.in_channels;
  h["window"] = arch.window;
  h["n_classes"] = arch.n_classes;
  h["temb_dim"] = arch.temb_dim;
  h["kernel"] = arch.kernel;
  h["T"] = arch.T;
  h["beta_lo"] = arch.beta_lo;
  h["beta_hi"] = arch.beta_hi;
  h["n_params"] = theta.size();
  h["scalar"] = "f32";
  h["extra"] = extra;
  const std::string header = h.dump();

  std::string buf;
  buf.reserve(8 + header.size() + static_cast<size_t>(theta.size()) * 4);
  buf.append(kMagic, 4);
  put_u32(buf, static_cast<std::uint32_t>(header.size()));
  buf.append(header);
  for (Index i = 0; i < theta.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &theta[i], 4);
    put_u32(buf, bits);
  }
  write_binary(path, buf);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string buf = read_binary_str(path);
  if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw integrity_error(path.string() + ": not a checkpoint file (bad magic)");
  const std::uint32_t hlen = get_u32(buf, 4);
  if (8 + static_cast<size_t>(hlen) > buf.size())
    throw integrity_error(path.string() + ": truncated checkpoint header");

  nlohmann::json h;
  try {
    h = nlohmann::json::parse(buf.substr(8, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw integrity_error(path.string() + ": bad checkpoint header: " + e.what());
  }

  Checkpoint ck;
  try {
    ck.arch.in_channels = h.at("in_channels").get<Index>();
    ck.arch.window = h.at("window").get<Index>();
    ck.arch.n_classes = h.at("n_classes").get<Index>();
    ck.arch.temb_dim = h.at("temb_dim").get<Index>();
    ck.arch.kernel = h.at("kernel").get<Index>();
    ck.arch.T = h.at("T").get<int>();
    ck.arch.beta_lo = h.at("beta_lo").get<double>();
    ck.arch.beta_hi = h.at("beta_hi").get<double>();
    if (h.at("scalar").get<std::string>() != "f32")
      throw integrity_error("unsupported checkpoint scalar type");
    ck.extra = h.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw integrity_error(path.string() + ": incomplete checkpoint header: " + e.what());
  }
  ck.arch.validate();

  const Index n_params = h.at("n_params").get<Index>();
  const size_t blob_off = 8 + static_cast<size_t>(hlen);
  if (buf.size() - blob_off != static_cast<size_t>(n_params) * 4)
    throw integrity_error(path.string() + ": parameter blob has " +
                          std::to_string(buf.size() - blob_off) + " bytes, expected " +
                          std::to_string(n_params * 4));
  ck.theta.resize(n_params);
  for (Index i = 0; i < n_params; ++i) {
    const std::uint32_t bits = get_u32(buf, blob_off + static_cast<size_t>(i) * 4);
    float v;
    std::memcpy(&v, &bits, 4);
    ck.theta[i] = v;
  }
  if (!ck.theta.allFinite())
    throw integrity_error(path.string() + ": checkpoint holds non-finite parameters");

  const VisemeNet<float> probe(ck.arch);
  if (probe.n_params() != n_params)
    throw integrity_error(path.string() + ": parameter count does not match the architecture");
  return ck;
}

namespace {

// Shared scaffolding: analytic gradient once, then central differences on a
// deterministic spread of probe indices.
template <class LossFn>
GradCheckResult run_grad_check(const nn::ParamLayout& layout, VecD& theta, Index n_probes,
                               std::uint64_t seed, double h, const LossFn& loss_with_grad,
                               const std::function<double(const VecD&)>& loss_only) {
  VecD grad = VecD::Zero(theta.size());
  loss_with_grad(theta, grad);

  std::vector<Index> probes;
  if (n_probes <= 0 || n_probes >= layout.total()) {
    probes.resize(static_cast<size_t>(layout.total()));
    std::iota(probes.begin(), probes.end(), Index{0});
  } else {
    for (const auto& spec : layout.specs()) {
      Index want = (n_probes * spec.size() + layout.total() - 1) / layout.total();
      want = std::min(want, spec.size());
      Rng rng(derive_seed(seed, "probes:" + spec.name));
      std::vector<Index> all(static_cast<size_t>(spec.size()));
      std::iota(all.begin(), all.end(), Index{0});
      std::shuffle(all.begin(), all.end(), rng);
      for (Index j = 0; j < want; ++j) probes.push_back(spec.offset + all[static_cast<size_t>(j)]);
    }
  }

  GradCheckResult res;
  res.n_checked = static_cast<Index>(probes.size());
  for (Index i : probes) {
    const double keep = theta[i];
    theta[i] = keep + h;
    const double lp = loss_only(theta);
    theta[i] = keep - h;
    const double lm = loss_only(theta);
    theta[i] = keep;
    const double fd = (lp - lm) / (2.0 * h);
    const double an = grad[i];
    const double rel = std::abs(an - fd) / std::max(std::abs(an) + std::abs(fd), 1e-8);
    res.max_rel_err = std::max(res.max_rel_err, rel);
  }
  return res;
}

}  // namespace

GradCheckResult grad_check_se(Index channels, Index len, Index batch, Index n_probes,
                              std::uint64_t seed, double h) {
  nn::ParamLayout layout;
  nn::ChannelSe<double> se(layout, "se", channels, std::max<Index>(channels / 4, 2));
  VecD theta;
  layout.init_params(theta, derive_seed(seed, "params"));

  Rng rng(derive_seed(seed, "input"));
  MatD x(channels, batch * len);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng, 0.0, 1.0);

  auto loss_grad = [&](const VecD& th, VecD& g) {
    nn::Trace<double> tr;
    const MatD y = se.forward(x, batch, th, &tr);
    se.backward(y, batch, th, tr, g);
    return 0.5 * y.squaredNorm();
  };
  auto loss_only = [&](const VecD& th) {
    const MatD y = se.forward(x, batch, th, nullptr);
    return 0.5 * y.squaredNorm();
  };
  return run_grad_check(layout, theta, n_probes, seed, h, loss_grad, loss_only);
}

GradCheckResult grad_check_kan(Index in, Index out, Index batch, Index n_probes,
                               std::uint64_t seed, double h) {
  nn::ParamLayout layout;
  nn::KanLayer<double> kan(layout, "kan", in, out);
  VecD theta;
  layout.init_params(theta, derive_seed(seed, "params"));

  // Spread the squashed inputs across the whole spline support so every basis
  // coefficient receives a measurable gradient. Raw normals can leave the edge
  // splines untouched, and a zero gradient pits finite-difference roundoff
  // against the relative-error floor.
  Rng rng(derive_seed(seed, "input"));
  const Index cols = std::max<Index>(batch, 7);
  MatD x(in, cols);
  for (Index b = 0; b < cols; ++b)
    for (Index i = 0; i < in; ++i) {
      const double u = -1.9 + 3.8 * (static_cast<double>(b) + 0.5) / static_cast<double>(cols) +
                       uniform_real(rng, -0.05, 0.05);
      x(i, b) = 2.0 * std::atanh(u / 2.0);
    }

  auto loss_grad = [&](const VecD& th, VecD& g) {
    nn::Trace<double> tr;
    const MatD y = kan.forward(x, th, &tr);
    kan.backward(y, th, tr, g);
    return 0.5 * y.squaredNorm();
  };
  auto loss_only = [&](const VecD& th) {
    const MatD y = kan.forward(x, th, nullptr);
    return 0.5 * y.squaredNorm();
  };
  return run_grad_check(layout, theta, n_probes, seed, h, loss_grad, loss_only);
}

GradCheckResult grad_check_model(const ModelArch& arch, Index batch, Index n_probes,
                                 std::uint64_t seed, double h) {
  const VisemeNet<double> net(arch);
  VecD theta = net.init_params(derive_seed(seed, "params"));

  Rng rng(derive_seed(seed, "input"));
  MatD x0(arch.in_channels, batch * arch.window);
  for (Index i = 0; i < x0.size(); ++i) x0.data()[i] = normal(rng, 0.0, 1.0);
  MatD eps(arch.in_channels, batch * arch.window);
  for (Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng, 0.0, 1.0);
  std::vector<int> tsteps(static_cast<size_t>(batch));
  for (auto& t : tsteps) t = static_cast<int>(uniform_int(rng, 1, arch.T));
  std::vector<int> labels(static_cast<size_t>(batch));
  for (auto& l : labels) l = static_cast<int>(uniform_int(rng, 0, arch.n_classes - 1));

  const DiffusionSchedule sched = make_schedule(arch.T, arch.beta_lo, arch.beta_hi);
  MatD xt(x0.rows(), x0.cols());
  for (Index b = 0; b < batch; ++b) {
    const double abar = sched.alpha_bar_at(tsteps[static_cast<size_t>(b)]);
    xt.middleCols(b * arch.window, arch.window) =
        std::sqrt(abar) * x0.middleCols(b * arch.window, arch.window) +
        std::sqrt(1.0 - abar) * eps.middleCols(b * arch.window, arch.window);
  }
  const LossWeights w;

  auto loss_grad = [&](const VecD& th, VecD& g) {
    nn::Trace<double> tr;
    const auto out = net.forward(x0, xt, tsteps, batch, th, &tr);
    return net.loss_and_backward(out, x0, labels, batch, w, th, tr, g).total;
  };
  auto loss_only = [&](const VecD& th) {
    const auto out = net.forward(x0, xt, tsteps, batch, th, nullptr);
    return net.compute_loss(out, x0, labels, batch, w).total;
  };
  return run_grad_check(net.layout(), theta, n_probes, seed, h, loss_grad, loss_only);
}

}  // namespace viseme::decode
