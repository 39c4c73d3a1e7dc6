#include "viseme/sequence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <utility>

#include "viseme/errors.hpp"
#include "viseme/rng.hpp"
#include "viseme/text_io.hpp"

namespace viseme::seq {
namespace {

void check_labels(const std::vector<int>& labels, const char* what) {
  for (int v : labels)
    if (v < 0 || v >= static_cast<int>(align::kNumVisemes))
      throw validation_error(std::string(what) + " holds label " + std::to_string(v) +
                             " outside the viseme class range");
}

}  // namespace

VisemeSequence assemble_sequence(std::vector<TrialPrediction> preds, int sentence_id) {
  std::stable_sort(preds.begin(), preds.end(),
                   [](const TrialPrediction& a, const TrialPrediction& b) {
                     return a.interval_index < b.interval_index;
                   });
  VisemeSequence s;
  s.sentence_id = sentence_id;
  s.labels.reserve(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) {
    if (i > 0 && preds[i].interval_index == preds[i - 1].interval_index)
      throw validation_error("duplicate interval index " +
                             std::to_string(preds[i].interval_index) + " in predictions");
    s.labels.push_back(preds[i].label);
  }
  check_labels(s.labels, "prediction sequence");
  return s;
}

void SentenceCatalog::validate() const {
  std::set<int> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.id).second)
      throw validation_error("catalog repeats sentence id " + std::to_string(e.id));
    if (e.sequence.empty())
      throw validation_error("catalog sentence " + std::to_string(e.id) +
                             " has an empty viseme sequence");
    check_labels(e.sequence, "catalog sequence");
  }
}

const CatalogEntry* SentenceCatalog::find(int id) const {
  for (const auto& e : entries)
    if (e.id == id) return &e;
  return nullptr;
}

bool SentenceCatalog::has_duplicate_sequences() const {
  std::set<std::vector<int>> seen;
  for (const auto& e : entries)
    if (!seen.insert(e.sequence).second) return true;
  return false;
}

nlohmann::ordered_json SentenceCatalog::to_json() const {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& e : entries)
    arr.push_back({{"id", e.id}, {"text", e.text}, {"viseme_sequence", e.sequence}});
  return arr;
}

SentenceCatalog SentenceCatalog::from_json(const nlohmann::json& j) {
  SentenceCatalog cat;
  try {
    if (!j.is_array()) throw validation_error("sentence catalog must be a JSON array");
    for (const auto& item : j) {
      CatalogEntry e;
      e.id = item.at("id").get<int>();
      e.text = item.at("text").get<std::string>();
      e.sequence = item.at("viseme_sequence").get<std::vector<int>>();
      cat.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw validation_error(std::string("malformed sentence catalog: ") + ex.what());
  }
  cat.validate();
  return cat;
}

SentenceCatalog SentenceCatalog::from_file(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_binary_str(path));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrKind::Parse, path.string() + ": " + ex.what());
  }
  return from_json(j);
}

void SentenceCatalog::save(const std::filesystem::path& path) const {
  write_binary(path, to_json().dump(2) + "\n");
}

Index edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<Index> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<Index>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<Index>(i);
    for (size_t j = 1; j <= m; ++j) {
      const Index sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

MatchResult match_closed_set(const VisemeSequence& s, const SentenceCatalog& cat) {
  if (s.labels.empty()) throw validation_error("cannot match an empty viseme sequence");
  if (cat.entries.empty()) throw validation_error("cannot match against an empty catalog");
  cat.validate();
  check_labels(s.labels, "query sequence");

  MatchResult best;
  best.distance = -1;
  size_t best_idx = 0;
  std::vector<Index> dists(cat.entries.size());
  for (size_t i = 0; i < cat.entries.size(); ++i) {
    dists[i] = edit_distance(s.labels, cat.entries[i].sequence);
    const int id = cat.entries[i].id;
    if (best.distance < 0 || dists[i] < best.distance ||
        (dists[i] == best.distance && id < best.sentence_id)) {
      best.sentence_id = id;
      best.distance = dists[i];
      best_idx = i;
    }
  }
  Index runner = -1;
  for (size_t i = 0; i < cat.entries.size(); ++i)
    if (i != best_idx && (runner < 0 || dists[i] < runner)) runner = dists[i];
  best.margin = runner < 0 ? 0 : runner - best.distance;
  return best;
}

void SequenceModelConfig::validate() const {
  if (embed_dim < 1 || hidden < 1) throw validation_error("sequence model dimensions must be positive");
  if (max_epochs < 1) throw validation_error("sequence model needs at least one epoch");
  if (settle_epochs < 1) throw validation_error("settle_epochs must be positive");
  if (!(lr > 0.0)) throw validation_error("learning rate must be positive");
  if (corruption_rate < 0.0 || corruption_rate > 1.0)
    throw validation_error("corruption rate must lie in [0, 1]");
  if (corrupt_copies < 0) throw validation_error("corrupt_copies must be non-negative");
}

namespace {

struct LstmSpecs {
  nn::TensorSpec embed, w, u, b, hw, hb;
};

LstmSpecs specs_of(const nn::ParamLayout& layout) {
  return {layout.find("embed"),  layout.find("lstm.w"), layout.find("lstm.u"),
          layout.find("lstm.b"), layout.find("head.w"), layout.find("head.b")};
}

nn::ParamLayout make_layout(const SequenceModelConfig& cfg, Index n_out) {
  nn::ParamLayout layout;
  layout.add("embed", cfg.embed_dim, align::kNumVisemes, nn::Init::HeUniform);
  layout.add("lstm.w", 4 * cfg.hidden, cfg.embed_dim, nn::Init::HeUniform);
  layout.add("lstm.u", 4 * cfg.hidden, cfg.hidden, nn::Init::HeUniform);
  layout.add("lstm.b", 4 * cfg.hidden, 1, nn::Init::Zeros);
  layout.add("head.w", n_out, cfg.hidden, nn::Init::HeUniform);
  layout.add("head.b", n_out, 1, nn::Init::Zeros);
  return layout;
}

// Per-step values kept for backpropagation through time.
struct LstmSteps {
  std::vector<VecD> i, f, g, o, c, tc, h;
};

// Gate order within the stacked 4H block: input, forget, cell, output.
VecD lstm_final_state(const SequenceModel& m, const std::vector<int>& labels, LstmSteps* st) {
  const LstmSpecs sp = specs_of(m.layout);
  const Index H = m.cfg.hidden;
  const auto E = nn::view(m.theta, sp.embed);
  const auto W = nn::view(m.theta, sp.w);
  const auto U = nn::view(m.theta, sp.u);
  const auto B = nn::view(m.theta, sp.b);

  VecD h = VecD::Zero(H), c = VecD::Zero(H);
  VecD a(4 * H);
  for (int lbl : labels) {
    a.noalias() = W * E.col(lbl);
    a.noalias() += U * h;
    a += B.col(0);
    const VecD gi = (1.0 / (1.0 + (-a.segment(0, H).array()).exp())).matrix();
    const VecD gf = (1.0 / (1.0 + (-a.segment(H, H).array()).exp())).matrix();
    const VecD gg = a.segment(2 * H, H).array().tanh().matrix();
    const VecD go = (1.0 / (1.0 + (-a.segment(3 * H, H).array()).exp())).matrix();
    c = gf.cwiseProduct(c) + gi.cwiseProduct(gg);
    const VecD tc = c.array().tanh().matrix();
    h = go.cwiseProduct(tc);
    if (st) {
      st->i.push_back(gi);
      st->f.push_back(gf);
      st->g.push_back(gg);
      st->o.push_back(go);
      st->c.push_back(c);
      st->tc.push_back(tc);
      st->h.push_back(h);
    }
  }
  return h;
}

VecD head_logits(const SequenceModel& m, const VecD& h) {
  const LstmSpecs sp = specs_of(m.layout);
  VecD logits = nn::view(m.theta, sp.hw) * h;
  logits += nn::view(m.theta, sp.hb).col(0);
  return logits;
}

VecD softmax(const VecD& logits) {
  VecD p = (logits.array() - logits.maxCoeff()).exp().matrix();
  return p / p.sum();
}

std::vector<int> corrupt(const std::vector<int>& s, double rate, Rng& rng) {
  std::vector<int> out = s;
  for (int& v : out)
    if (uniform_real(rng, 0.0, 1.0) < rate) {
      int r = static_cast<int>(uniform_int(rng, 0, static_cast<int>(align::kNumVisemes) - 2));
      if (r >= v) ++r;
      v = r;
    }
  return out;
}

}  // namespace

VecD sequence_logits(const SequenceModel& m, const std::vector<int>& labels) {
  if (labels.empty()) throw validation_error("cannot run the sequence model on an empty sequence");
  check_labels(labels, "input sequence");
  return head_logits(m, lstm_final_state(m, labels, nullptr));
}

double sequence_loss_grad(const SequenceModel& m, const std::vector<int>& labels, Index target,
                          VecD* grad) {
  if (labels.empty()) throw validation_error("cannot train on an empty sequence");
  check_labels(labels, "training sequence");
  if (target < 0 || target >= static_cast<Index>(m.class_ids.size()))
    throw validation_error("sequence target outside the catalog");

  LstmSteps st;
  const VecD hT = lstm_final_state(m, labels, &st);
  const VecD logits = head_logits(m, hT);
  const VecD p = softmax(logits);
  const double loss = -std::log(p[target]);
  if (!grad) return loss;

  const LstmSpecs sp = specs_of(m.layout);
  const Index H = m.cfg.hidden;
  const auto E = nn::view(m.theta, sp.embed);
  const auto W = nn::view(m.theta, sp.w);
  const auto U = nn::view(m.theta, sp.u);

  VecD dlogit = p;
  dlogit[target] -= 1.0;
  nn::view(*grad, sp.hw).noalias() += dlogit * hT.transpose();
  nn::view(*grad, sp.hb).col(0) += dlogit;

  VecD dh = nn::view(m.theta, sp.hw).transpose() * dlogit;
  VecD dc = VecD::Zero(H);
  VecD da(4 * H);
  for (int t = static_cast<int>(labels.size()) - 1; t >= 0; --t) {
    const VecD& gi = st.i[t];
    const VecD& gf = st.f[t];
    const VecD& gg = st.g[t];
    const VecD& go = st.o[t];
    const VecD& tc = st.tc[t];
    const VecD cprev = t > 0 ? st.c[t - 1] : VecD::Zero(H);
    const VecD hprev = t > 0 ? st.h[t - 1] : VecD::Zero(H);

    const VecD do_ = dh.cwiseProduct(tc);
    dc += dh.cwiseProduct(go).cwiseProduct((1.0 - tc.array().square()).matrix());
    const VecD di = dc.cwiseProduct(gg);
    const VecD df = dc.cwiseProduct(cprev);
    const VecD dg = dc.cwiseProduct(gi);
    const VecD dcprev = dc.cwiseProduct(gf);

    da.segment(0, H) = di.array() * gi.array() * (1.0 - gi.array());
    da.segment(H, H) = df.array() * gf.array() * (1.0 - gf.array());
    da.segment(2 * H, H) = dg.array() * (1.0 - gg.array().square());
    da.segment(3 * H, H) = do_.array() * go.array() * (1.0 - go.array());

    nn::view(*grad, sp.w).noalias() += da * E.col(labels[t]).transpose();
    nn::view(*grad, sp.u).noalias() += da * hprev.transpose();
    nn::view(*grad, sp.b).col(0) += da;
    nn::view(*grad, sp.embed).col(labels[t]).noalias() += W.transpose() * da;

    dh.noalias() = U.transpose() * da;
    dc = dcprev;
  }
  return loss;
}

SequenceModel train_sequence_model(const SentenceCatalog& cat, const SequenceModelConfig& cfg,
                                   std::vector<std::string>* warnings) {
  cfg.validate();
  cat.validate();
  if (cat.entries.empty()) throw validation_error("cannot train on an empty catalog");
  if (cat.has_duplicate_sequences() && warnings)
    warnings->push_back(
        "catalog contains duplicate viseme sequences; those sentences are not separable");

  SequenceModel m;
  m.cfg = cfg;
  for (const auto& e : cat.entries) m.class_ids.push_back(e.id);
  m.layout = make_layout(cfg, static_cast<Index>(cat.entries.size()));
  m.layout.init_params(m.theta, derive_seed(cfg.seed, "params"));
  // Open forget gates at the start so early gradients reach across time.
  nn::view(m.theta, m.layout.find("lstm.b")).col(0).segment(cfg.hidden, cfg.hidden).setOnes();

  const Index n_params = m.layout.total();
  VecD grad(n_params), mom = VecD::Zero(n_params), vel = VecD::Zero(n_params);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long step = 0;

  Rng rng(derive_seed(cfg.seed, "train"));
  const size_t n = cat.entries.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});

  auto sgd_step = [&](const std::vector<int>& labels, Index target) {
    grad.setZero();
    sequence_loss_grad(m, labels, target, &grad);
    ++step;
    mom = b1 * mom + (1.0 - b1) * grad;
    vel = b2 * vel + (1.0 - b2) * grad.cwiseProduct(grad);
    const double mc = 1.0 - std::pow(b1, static_cast<double>(step));
    const double vc = 1.0 - std::pow(b2, static_cast<double>(step));
    m.theta -= (cfg.lr / mc) * mom.cwiseQuotient(((vel / vc).cwiseSqrt().array() + eps).matrix());
  };

  int settled = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t idx : order) {
      const auto& entry = cat.entries[idx];
      sgd_step(entry.sequence, static_cast<Index>(idx));
      for (int k = 0; k < cfg.corrupt_copies; ++k)
        sgd_step(corrupt(entry.sequence, cfg.corruption_rate, rng), static_cast<Index>(idx));
    }

    size_t correct = 0;
    for (size_t idx = 0; idx < n; ++idx) {
      const VecD logits = sequence_logits(m, cat.entries[idx].sequence);
      Index arg = 0;
      logits.maxCoeff(&arg);
      if (arg == static_cast<Index>(idx)) ++correct;
    }
    settled = correct == n ? settled + 1 : 0;
    if (settled >= cfg.settle_epochs) break;
  }
  return m;
}

InferResult infer_sentence(const SequenceModel& m, const VisemeSequence& s) {
  if (s.labels.empty()) throw validation_error("cannot infer a sentence from an empty sequence");
  const VecD logits = sequence_logits(m, s.labels);
  InferResult r;
  r.posterior = softmax(logits);
  Index best = 0;
  for (Index i = 1; i < r.posterior.size(); ++i)
    if (r.posterior[i] > r.posterior[best]) best = i;
  r.sentence_id = m.class_ids[static_cast<size_t>(best)];
  return r;
}

}  // namespace viseme::seq
