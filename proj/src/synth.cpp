#include "viseme/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "viseme/errors.hpp"
#include "viseme/rng.hpp"
#include "viseme/text_io.hpp"

namespace viseme::synth {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSignatureAmp = 10.0;  // µV per sinusoid
constexpr double kMinDur = 0.05, kMaxDur = 0.2;

std::string sentence_stem(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sent_%04d", id);
  return buf;
}

Index reference_row(const SynthConfig& cfg) { return cfg.n_eeg - 1; }

std::vector<io::ChannelMeta> channel_layout(const SynthConfig& cfg) {
  std::vector<io::ChannelMeta> out;
  char buf[16];
  for (int i = 0; i < cfg.n_eeg - 1; ++i) {
    std::snprintf(buf, sizeof buf, "EEG%02d", i + 1);
    out.push_back({buf, io::ChannelRole::EEG, 1.0, static_cast<int>(out.size())});
  }
  out.push_back({"REF", io::ChannelRole::Reference, 1.0, static_cast<int>(out.size())});
  for (int i = 0; i < cfg.n_emg; ++i) {
    std::snprintf(buf, sizeof buf, "EMG%02d", i + 1);
    out.push_back({buf, io::ChannelRole::EMG, 1.0, static_cast<int>(out.size())});
  }
  return out;
}

// Three-pole pink noise shaper (Kellett), standardized afterwards so each
// channel's background is exactly zero-mean unit-variance.
VecD pink_noise(Index n, Rng& rng) {
  VecD out(n);
  double b0 = 0, b1 = 0, b2 = 0;
  for (Index i = 0; i < n; ++i) {
    const double w = normal(rng, 0.0, 1.0);
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    out[i] = b0 + b1 + b2 + w * 0.1848;
  }
  if (n > 1) {
    const double mean = out.mean();
    const double sd = std::sqrt((out.array() - mean).square().sum() / static_cast<double>(n));
    if (sd > 0) out = ((out.array() - mean) / sd).matrix();
  }
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_sentences < 0) throw config_error("n_sentences must be non-negative");
  if (min_phonemes < 0 || max_phonemes < min_phonemes)
    throw config_error("phonemes-per-sentence range is empty");
  if (fs <= 998.0) throw config_error("fs must exceed 998 Hz to keep the 499 Hz band edge legal");
  if (n_eeg < 2) throw config_error("need at least one EEG channel besides the reference");
  if (n_emg < 0) throw config_error("n_emg must be non-negative");
  if (line_noise_amp < 0) throw config_error("line_noise_amp must be non-negative");
}

std::pair<double, double> class_freqs(int viseme) {
  if (viseme < 0 || viseme >= static_cast<int>(align::kNumVisemes))
    throw validation_error("viseme class " + std::to_string(viseme) + " out of range");
  return {35.0 + 12.0 * viseme, 41.0 + 13.0 * viseme};
}

VecD class_mixing(int viseme, int component, const SynthConfig& cfg) {
  if (viseme < 0 || viseme >= static_cast<int>(align::kNumVisemes))
    throw validation_error("viseme class " + std::to_string(viseme) + " out of range");
  if (component < 0 || component > 1)
    throw validation_error("signature component must be 0 or 1");
  const Index rows = cfg.n_eeg + cfg.n_emg;
  Rng rng(derive_seed(cfg.seed,
                      "mixing:" + std::to_string(viseme) + ":" + std::to_string(component)));
  VecD m(rows);
  for (Index r = 0; r < rows; ++r) m[r] = uniform_real(rng, 0.5, 1.5);
  m[reference_row(cfg)] = 0.0;
  m.tail(cfg.n_emg) *= 3.0;
  return m;
}

SynthCorpus gen_corpus(const SynthConfig& cfg) {
  cfg.validate();
  const auto& inventory = align::arpabet_inventory();  // "sil" first
  const auto map = align::VisemeMap::standard();

  SynthCorpus corpus;
  corpus.cfg = cfg;
  for (int id = 0; id < cfg.n_sentences; ++id) {
    Rng rng(derive_seed(cfg.seed, "sentence:" + std::to_string(id)));
    const int n_content =
        static_cast<int>(uniform_int(rng, cfg.min_phonemes, cfg.max_phonemes));

    std::vector<std::string> labels;
    labels.push_back("sil");
    for (int k = 0; k < n_content; ++k)
      labels.push_back(
          inventory[static_cast<size_t>(uniform_int(rng, 1, static_cast<int>(inventory.size()) - 1))]);
    labels.push_back("sil");

    SynthSentence s;
    s.id = id;
    s.tier.name = "phones";
    s.tier.xmin = 0.0;
    double t = 0.0;
    for (const auto& lbl : labels) {
      const double dur = uniform_real(rng, kMinDur, kMaxDur);
      s.tier.intervals.push_back({t, t + dur, lbl});
      t += dur;
    }
    s.tier.xmax = t;
    s.tier.validate();

    for (const auto& vi : align::tier_to_viseme_intervals(s.tier, map))
      s.viseme_sequence.push_back(vi.viseme);

    seq::CatalogEntry entry;
    entry.id = id;
    for (size_t i = 0; i < labels.size(); ++i)
      entry.text += (i ? " " : "") + labels[i];
    entry.sequence = s.viseme_sequence;
    corpus.catalog.entries.push_back(std::move(entry));
    corpus.sentences.push_back(std::move(s));
  }
  corpus.catalog.validate();
  return corpus;
}

io::BrainVisionData render_recording(const SynthSentence& s, const SynthConfig& cfg) {
  cfg.validate();
  s.tier.validate();
  const Index rows = cfg.n_eeg + cfg.n_emg;
  const Index n = std::lround(s.tier.xmax * cfg.fs);
  if (n < 1) throw validation_error("sentence " + std::to_string(s.id) + " renders no samples");

  const auto map = align::VisemeMap::standard();
  const auto intervals = align::tier_to_viseme_intervals(s.tier, map);

  std::vector<std::array<VecD, 2>> mixing(align::kNumVisemes);
  for (int c = 0; c < static_cast<int>(align::kNumVisemes); ++c)
    mixing[c] = {class_mixing(c, 0, cfg), class_mixing(c, 1, cfg)};

  // Class signatures, phase-continuous because the phase argument is global
  // recording time.
  MatD sig = MatD::Zero(rows, n);
  for (const auto& vi : intervals) {
    if (vi.viseme == 0) continue;
    const auto [f1, f2] = class_freqs(vi.viseme);
    const Index i0 = std::clamp<Index>(std::lround(vi.xmin * cfg.fs), 0, n);
    const Index i1 = std::clamp<Index>(std::lround(vi.xmax * cfg.fs), 0, n);
    if (i1 <= i0) continue;
    VecD wave1(i1 - i0), wave2(i1 - i0);
    for (Index i = i0; i < i1; ++i) {
      const double t = static_cast<double>(i) / cfg.fs;
      wave1[i - i0] = kSignatureAmp * std::sin(2 * kPi * f1 * t);
      wave2[i - i0] = kSignatureAmp * std::sin(2 * kPi * f2 * t);
    }
    const auto& mx = mixing[static_cast<size_t>(vi.viseme)];
    sig.middleCols(i0, i1 - i0) += mx[0] * wave1.transpose();
    sig.middleCols(i0, i1 - i0) += mx[1] * wave2.transpose();
  }

  // Noise floor calibrated against the signature power over the data rows.
  // snr_db is a narrowband ratio: it compares a tone's power to the noise
  // power that competes with it inside one spectral bin of a phoneme-scale
  // (128 ms) analysis window, whose matched-filter gain is fs * 0.128 in
  // power. Referenced this way, band-power features saturate near +20 dB
  // and fall to chance near -20 dB; a broadband reference would leave the
  // tones detectable even under nominally overwhelming noise.
  const Index ref = reference_row(cfg);
  double sum_sq = 0.0;
  for (Index r = 0; r < rows; ++r)
    if (r != ref) sum_sq += sig.row(r).squaredNorm();
  const double rms = std::sqrt(sum_sq / (static_cast<double>(rows - 1) * static_cast<double>(n)));
  const double noise_scale =
      rms > 0 ? rms * std::pow(10.0, -cfg.snr_db / 20.0) * std::sqrt(cfg.fs * 0.128) : 1.0;

  Rng rng(derive_seed(cfg.seed, "noise:" + std::to_string(s.id)));
  MatD data = sig;
  for (Index r = 0; r < rows; ++r)
    data.row(r) += (noise_scale * pink_noise(n, rng)).transpose();
  if (cfg.line_noise_amp > 0) {
    VecD line(n);
    for (Index i = 0; i < n; ++i)
      line[i] = cfg.line_noise_amp * std::sin(2 * kPi * 60.0 * static_cast<double>(i) / cfg.fs);
    data.rowwise() += line.transpose();
  }

  io::BrainVisionData out;
  out.recording.channels = channel_layout(cfg);
  out.recording.fs = cfg.fs;
  out.recording.data = std::move(data);
  out.recording.validate();

  out.markers.entries.push_back({"New Segment", "", 0, 1});
  for (size_t k = 0; k < intervals.size(); ++k) {
    const auto& vi = intervals[k];
    const long i0 = std::clamp<long>(std::lround(vi.xmin * cfg.fs), 0, n);
    const long i1 = std::clamp<long>(std::lround(vi.xmax * cfg.fs), 0, n);
    if (i1 <= i0) continue;
    out.markers.entries.push_back(
        {"Stimulus", "viseme=" + std::to_string(vi.viseme), i0, i1 - i0});
  }
  return out;
}

EmitResult emit(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  const SynthCorpus corpus = gen_corpus(cfg);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "recordings", ec);
  fs::create_directories(out_dir / "alignments", ec);
  if (ec) throw io_error("cannot create corpus directories under " + out_dir.string());

  EmitResult res;
  nlohmann::ordered_json sent_manifest = nlohmann::ordered_json::array();
  for (const auto& s : corpus.sentences) {
    const std::string stem = sentence_stem(s.id);
    const auto rec = render_recording(s, cfg);
    const fs::path base = out_dir / "recordings" / stem;
    io::write_brainvision(rec.recording, rec.markers, base, io::BinaryFormat::Float32);
    const fs::path tg = out_dir / "alignments" / (stem + ".TextGrid");
    align::write_textgrid({s.tier}, tg);

    res.headers.push_back(base.string() + ".vhdr");
    res.textgrids.push_back(tg);
    sent_manifest.push_back({{"id", s.id},
                             {"recording", "recordings/" + stem + ".vhdr"},
                             {"alignment", "alignments/" + stem + ".TextGrid"},
                             {"n_intervals", s.tier.intervals.size()},
                             {"duration_s", s.tier.xmax}});
  }

  res.catalog_path = out_dir / "catalog.json";
  corpus.catalog.save(res.catalog_path);

  nlohmann::ordered_json manifest{{"format", "viseme-synth-corpus"},
                                  {"config",
                                   {{"n_sentences", cfg.n_sentences},
                                    {"min_phonemes", cfg.min_phonemes},
                                    {"max_phonemes", cfg.max_phonemes},
                                    {"fs", cfg.fs},
                                    {"n_eeg", cfg.n_eeg},
                                    {"n_emg", cfg.n_emg},
                                    {"snr_db", cfg.snr_db},
                                    {"line_noise_amp", cfg.line_noise_amp},
                                    {"seed", cfg.seed}}},
                                  {"sentences", std::move(sent_manifest)}};
  res.corpus_path = out_dir / "corpus.json";
  write_binary(res.corpus_path, manifest.dump(2) + "\n");
  return res;
}

}  // namespace viseme::synth
