// Release gate for the decoding pipeline: nine checks with pinned
// thresholds, one result line each. Oracles come from test_util.hpp so
// every number is recomputed independently of the library code under test.
// Exit status is the number of failed checks.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "viseme/brainvision.hpp"
#include "viseme/dataset.hpp"
#include "viseme/diffusion.hpp"
#include "viseme/dsp.hpp"
#include "viseme/errors.hpp"
#include "viseme/metrics.hpp"
#include "viseme/pipeline.hpp"
#include "viseme/rng.hpp"
#include "viseme/sequence.hpp"
#include "viseme/synth.hpp"
#include "viseme/text_io.hpp"
#include "viseme/textgrid.hpp"
#include "viseme/train.hpp"
#include "viseme/viseme_map.hpp"

using namespace viseme;
namespace fs = std::filesystem;

namespace {

struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw CheckFailure(what);
}

std::string str(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Filter bank: edge gains, pinned zeros, notch depth, pole stability.

std::string check_filters() {
  const double fs = 1000.0;
  const auto bp = dsp::design_butter_bandpass(5, 30.0, 499.0, fs);

  double worst_edge = 0.0;
  const double root_half = 1.0 / std::sqrt(2.0);
  for (double edge : {30.0, 499.0}) {
    const double mag = testutil::sos_magnitude(bp, edge, fs);
    worst_edge = std::max(worst_edge, std::abs(mag - root_half) / root_half);
  }
  require(worst_edge < 1e-6, str("band edge gain off 1/sqrt(2) by %.3g rel", worst_edge));
  require(testutil::sos_magnitude(bp, 0.0, fs) < 1e-15, "DC leaks through the bandpass");
  require(testutil::sos_magnitude(bp, fs / 2.0, fs) < 1e-12, "Nyquist leaks through the bandpass");

  // Stability triangle |a2| < 1, |a1| < 1 + a2 on every section in use.
  std::vector<dsp::SosFilter> filters{bp};
  double worst_notch_db = 1e9;
  for (double f0 = 60.0; f0 < 499.0; f0 += 60.0) {
    const auto notch = dsp::design_notch(f0, 35.0, fs);
    filters.push_back(notch);

    const Index n = 4000;
    VecD tone(n);
    for (Index i = 0; i < n; ++i) tone[i] = std::sin(2.0 * testutil::kPi * f0 * i / fs);
    const VecD out = dsp::filter_zero_phase(notch, tone);
    const VecD mid_in = tone.segment(n / 4, n / 2);
    const VecD mid_out = out.segment(n / 4, n / 2);
    const double drop_db = 10.0 * std::log10(testutil::goertzel_power(mid_in, f0, fs) /
                                             testutil::goertzel_power(mid_out, f0, fs));
    worst_notch_db = std::min(worst_notch_db, drop_db);
  }
  require(worst_notch_db > 40.0, str("weakest notch only drops %.1f dB", worst_notch_db));

  int n_sections = 0;
  for (const auto& f : filters)
    for (const auto& s : f.sections) {
      ++n_sections;
      require(std::abs(s.a2) < 1.0 && std::abs(s.a1) < 1.0 + s.a2,
              "section coefficients leave the stability triangle");
    }
  return str("edge err %.2g rel, weakest notch %.1f dB, %d sections stable", worst_edge,
             worst_notch_db, n_sections);
}

// ---------------------------------------------------------------------------
// 2. Parsers: randomized round trips plus malformed inputs, all failures
// surfacing as typed errors.

io::Recording random_recording(Rng& rng) {
  io::Recording rec;
  rec.fs = 250.0 * (1 + static_cast<double>(rng() % 4));
  const Index n_ch = 1 + static_cast<Index>(rng() % 6);
  const Index n_s = 2 + static_cast<Index>(rng() % 200);
  rec.data.resize(n_ch, n_s);
  for (Index c = 0; c < n_ch; ++c)
    for (Index s = 0; s < n_s; ++s) rec.data(c, s) = uniform_real(rng, -100.0, 100.0);
  bool used_ref = false;
  for (Index c = 0; c < n_ch; ++c) {
    io::ChannelMeta m;
    m.name = "Ch" + std::to_string(c + 1);
    m.index = static_cast<int>(c);
    const unsigned r = static_cast<unsigned>(rng() % 4);
    if (r == 0 && !used_ref) {
      m.role = io::ChannelRole::Reference;
      used_ref = true;
    } else {
      m.role = r == 1 ? io::ChannelRole::EMG : io::ChannelRole::EEG;
    }
    rec.channels.push_back(m);
  }
  return rec;
}

int brainvision_round_trips(int n_iters, std::uint64_t seed) {
  Rng rng(seed);
  testutil::TmpDir dir;
  for (int iter = 0; iter < n_iters; ++iter) {
    const io::Recording rec = random_recording(rng);
    io::MarkerList markers;
    const int n_mark = static_cast<int>(rng() % 4);
    for (int m = 0; m < n_mark; ++m)
      markers.entries.push_back({"Stimulus", "viseme=" + std::to_string(rng() % 15),
                                 static_cast<long>(rng() % static_cast<std::uint64_t>(
                                                             rec.n_samples())),
                                 1});
    const bool f32 = (rng() % 2) == 0;
    io::write_brainvision(rec, markers, dir / "r",
                          f32 ? io::BinaryFormat::Float32 : io::BinaryFormat::Int16, 0.05);
    const auto back = io::read_brainvision(dir / "r.vhdr");

    require(back.recording.n_channels() == rec.n_channels() &&
                back.recording.n_samples() == rec.n_samples() &&
                back.markers.entries.size() == markers.entries.size(),
            "recording round trip changed shapes");
    for (Index c = 0; c < rec.n_channels(); ++c)
      require(back.recording.channels[c].role == rec.channels[c].role,
              "recording round trip changed channel roles");
    if (f32)
      require((back.recording.data.cast<float>().array() == rec.data.cast<float>().array()).all(),
              "float32 round trip altered samples");
    else
      require((back.recording.data - rec.data).cwiseAbs().maxCoeff() <= 0.025 + 1e-12,
              "int16 round trip exceeded half a resolution step");
    for (size_t m = 0; m < markers.entries.size(); ++m)
      require(back.markers.entries[m].position == markers.entries[m].position &&
                  back.markers.entries[m].description == markers.entries[m].description,
              "marker round trip altered entries");
  }
  return n_iters;
}

int textgrid_round_trips(int n_iters, std::uint64_t seed) {
  Rng rng(seed);
  const auto& inventory = align::arpabet_inventory();
  testutil::TmpDir dir;
  for (int iter = 0; iter < n_iters; ++iter) {
    std::vector<align::PhonemeTier> tiers;
    const int n_tiers = 1 + static_cast<int>(rng() % 3);
    for (int t = 0; t < n_tiers; ++t) {
      align::PhonemeTier tier;
      tier.name = "tier" + std::to_string(t);
      tier.xmin = 0.0;
      double cursor = 0.0;
      const int n_iv = static_cast<int>(rng() % 12);
      for (int i = 0; i < n_iv; ++i) {
        align::PhonemeInterval iv;
        iv.xmin = cursor;
        cursor += uniform_real(rng, 0.01, 0.4);
        iv.xmax = cursor;
        iv.label = inventory[rng() % inventory.size()];
        tier.intervals.push_back(iv);
        if (rng() % 4 == 0) cursor += uniform_real(rng, 0.0, 0.1);  // gap
      }
      tier.xmax = cursor + 0.01;
      tiers.push_back(std::move(tier));
    }
    align::write_textgrid(tiers, dir / "t.TextGrid");
    const auto back = align::parse_textgrid(dir / "t.TextGrid");

    require(back.size() == tiers.size(), "textgrid round trip changed tier count");
    for (size_t t = 0; t < tiers.size(); ++t) {
      require(back[t].name == tiers[t].name, "textgrid round trip changed a tier name");
      require(back[t].intervals.size() == tiers[t].intervals.size(),
              "textgrid round trip changed interval counts");
      for (size_t i = 0; i < tiers[t].intervals.size(); ++i) {
        const auto& a = tiers[t].intervals[i];
        const auto& b = back[t].intervals[i];
        require(a.xmin == b.xmin && a.xmax == b.xmax,
                "textgrid round trip altered interval times");
        require(align::normalize_phoneme(a.label) == b.label,
                "textgrid round trip altered a label");
      }
    }
  }
  return n_iters;
}

// Every malformed input must raise a typed error; anything else (wrong
// exception type, silent success) fails the check.
int malformed_corpora(std::uint64_t seed) {
  int n_cases = 0;
  const auto expect_kind = [&n_cases](ErrKind kind, const std::string& label,
                                      const std::function<void()>& body) {
    ++n_cases;
    try {
      body();
    } catch (const Error& e) {
      require(e.kind() == kind, label + ": wrong error kind: " + e.what());
      return;
    } catch (const std::exception& e) {
      throw CheckFailure(label + ": untyped exception: " + e.what());
    }
    throw CheckFailure(label + ": accepted malformed input");
  };

  testutil::TmpDir dir;
  Rng rng(seed);
  const io::Recording rec = random_recording(rng);
  io::write_brainvision(rec, {}, dir / "ok", io::BinaryFormat::Float32);

  expect_kind(ErrKind::Integrity, "truncated payload", [&] {
    fs::create_directory(dir / "trunc");
    for (const char* ext : {".vhdr", ".vmrk", ".eeg", ".roles.json"})
      fs::copy_file(dir / ("ok" + std::string(ext)), dir / "trunc" / ("ok" + std::string(ext)));
    const auto full = read_binary(dir / "trunc" / "ok.eeg");
    std::ofstream((dir / "trunc" / "ok.eeg").string(), std::ios::binary | std::ios::trunc)
        .write(reinterpret_cast<const char*>(full.data()), static_cast<long>(full.size() - 3));
    io::read_brainvision(dir / "trunc" / "ok.vhdr");
  });

  expect_kind(ErrKind::Unsupported, "vectorized orientation", [&] {
    fs::create_directory(dir / "vec");
    for (const char* ext : {".vhdr", ".vmrk", ".eeg", ".roles.json"})
      fs::copy_file(dir / ("ok" + std::string(ext)), dir / "vec" / ("ok" + std::string(ext)));
    std::string hdr = read_file(dir / "vec" / "ok.vhdr");
    const std::string needle = "DataOrientation=MULTIPLEXED";
    hdr.replace(hdr.find(needle), needle.size(), "DataOrientation=VECTORIZED");
    write_file(dir / "vec" / "ok.vhdr", hdr);
    io::read_brainvision(dir / "vec" / "ok.vhdr");
  });

  expect_kind(ErrKind::Io, "missing marker file", [&] {
    fs::create_directory(dir / "nomrk");
    for (const char* ext : {".vhdr", ".eeg", ".roles.json"})
      fs::copy_file(dir / ("ok" + std::string(ext)), dir / "nomrk" / ("ok" + std::string(ext)));
    io::read_brainvision(dir / "nomrk" / "ok.vhdr");
  });

  expect_kind(ErrKind::Validation, "incomplete roles sidecar", [&] {
    fs::create_directory(dir / "roles");
    for (const char* ext : {".vhdr", ".vmrk", ".eeg"})
      fs::copy_file(dir / ("ok" + std::string(ext)), dir / "roles" / ("ok" + std::string(ext)));
    write_file(dir / "roles" / "ok.roles.json", "{\"Ch1\": \"EEG\"}\n");
    io::read_brainvision(dir / "roles" / "ok.vhdr");
  });

  expect_kind(ErrKind::Parse, "unparseable tier time", [&] {
    write_file(dir / "bad.TextGrid",
               "File type = \"ooTextFile\"\n"
               "Object class = \"TextGrid\"\n"
               "\n"
               "xmin = oops\n");
    align::parse_textgrid(dir / "bad.TextGrid");
  });

  expect_kind(ErrKind::Unsupported, "short-form textgrid", [&] {
    write_file(dir / "short.TextGrid",
               "File type = \"ooTextFile\"\n"
               "Object class = \"TextGrid\"\n"
               "\n"
               "0\n1\n<exists>\n1\n\"IntervalTier\"\n\"phones\"\n0\n1\n1\n0\n1\n\"sil\"\n");
    align::parse_textgrid(dir / "short.TextGrid");
  });

  // Byte-level fuzzing of the text headers: a read may succeed or throw a
  // typed error, but must never escalate past viseme::Error.
  const std::string hdr = read_file(dir / "ok.vhdr");
  const std::string mrk = read_file(dir / "ok.vmrk");
  align::write_textgrid({align::PhonemeTier{"phones", 0.0, 1.0, {{0.0, 1.0, "AA"}}}},
                        dir / "fuzz.TextGrid");
  const std::string tg = read_file(dir / "fuzz.TextGrid");
  for (int iter = 0; iter < 120; ++iter) {
    ++n_cases;
    const int which = iter % 3;
    std::string text = which == 0 ? hdr : which == 1 ? mrk : tg;
    const int n_hits = 1 + static_cast<int>(rng() % 6);
    for (int h = 0; h < n_hits; ++h) {
      const size_t at = rng() % text.size();
      switch (rng() % 3) {
        case 0: text[at] = static_cast<char>(rng() % 256); break;
        case 1: text.erase(at, std::min<size_t>(text.size() - at, 1 + rng() % 20)); break;
        default: text.insert(at, std::string(1 + rng() % 8, static_cast<char>('0' + rng() % 10)));
      }
      if (text.empty()) text = "x";
    }
    fs::create_directory(dir / "fz");
    for (const char* ext : {".vhdr", ".vmrk", ".eeg", ".roles.json"}) {
      fs::copy_file(dir / ("ok" + std::string(ext)), dir / "fz" / ("ok" + std::string(ext)),
                    fs::copy_options::overwrite_existing);
    }
    try {
      if (which == 0) {
        write_file(dir / "fz" / "ok.vhdr", text);
        io::read_brainvision(dir / "fz" / "ok.vhdr");
      } else if (which == 1) {
        write_file(dir / "fz" / "ok.vmrk", text);
        io::read_brainvision(dir / "fz" / "ok.vhdr");
      } else {
        write_file(dir / "fz.TextGrid", text);
        align::parse_textgrid(dir / "fz.TextGrid");
      }
    } catch (const Error&) {
      // typed failure is the accepted outcome
    } catch (const std::exception& e) {
      throw CheckFailure(str("fuzz case %d escaped the error taxonomy: %s", iter, e.what()));
    }
  }
  return n_cases;
}

std::string check_parsers() {
  const int bv = brainvision_round_trips(500, 21);
  const int tg = textgrid_round_trips(520, 22);
  const int bad = malformed_corpora(23);
  require(bv + tg >= 1000, "round-trip budget not met");
  return str("%d round trips, %d malformed/fuzzed inputs handled", bv + tg, bad);
}

// ---------------------------------------------------------------------------
// 3. Viseme map: total over the inventory, onto all 15 classes, insensitive
// to case and stress digits.

std::string check_viseme_map() {
  const auto map = align::VisemeMap::standard();
  const auto& inventory = align::arpabet_inventory();
  require(inventory.size() == 40, "inventory must hold 39 phonemes plus silence");

  std::set<int> hit;
  for (const auto& ph : inventory) {
    const int v = map.viseme_of(ph);
    require(v >= 0 && v < align::kNumVisemes, "class id out of range for " + ph);
    hit.insert(v);

    std::string lower = ph;
    for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    require(map.viseme_of(lower) == v, "lowercase spelling diverged for " + ph);
    for (const char* stress : {"0", "1", "2"})
      require(map.viseme_of(ph + stress) == v, "stress-marked spelling diverged for " + ph);
    require(map.viseme_of(lower + "1") == v, "combined case+stress diverged for " + ph);
  }
  require(static_cast<int>(hit.size()) == align::kNumVisemes,
          str("map reaches only %zu of 15 classes", hit.size()));
  return str("%zu inventory items x 5 spellings onto all 15 classes", inventory.size());
}

// ---------------------------------------------------------------------------
// 4. Diffusion: alpha_bar strictly decreasing over a schedule grid, and
// forward-diffusion moments within 4 standard errors at 10,000 draws.

std::string check_diffusion() {
  int n_schedules = 0;
  for (int T : {1, 2, 3, 10, 100, 1000}) {
    for (auto [lo, hi] : std::vector<std::pair<double, double>>{
             {1e-4, 0.02}, {1e-3, 0.1}, {0.05, 0.6}, {1e-5, 0.9}}) {
      const auto s = decode::make_schedule(T, lo, hi);
      ++n_schedules;
      double prev = 1.0;
      for (int t = 1; t <= T; ++t) {
        const double ab = s.alpha_bar_at(t);
        require(ab > 0.0 && ab < prev, str("alpha_bar not strictly decreasing at T=%d t=%d", T, t));
        prev = ab;
      }
    }
  }

  const auto sched = decode::make_schedule(100, 1e-4, 0.02);
  const int t = 60;
  const int n = 10000;
  const double x0 = 1.7;
  const double abar = sched.alpha_bar_at(t);
  Rng rng(404);
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    MatD eps(1, 1), base(1, 1);
    eps(0, 0) = normal(rng);
    base(0, 0) = x0;
    const double xt = decode::forward_diffuse(base, eps, t, sched)(0, 0);
    sum += xt;
    sumsq += xt * xt;
  }
  const double mean = sum / n;
  const double var = (sumsq - n * mean * mean) / (n - 1);
  const double want_mean = std::sqrt(abar) * x0;
  const double want_var = 1.0 - abar;
  const double se_mean = std::sqrt(want_var / n);
  const double se_var = want_var * std::sqrt(2.0 / (n - 1));
  require(std::abs(mean - want_mean) < 4.0 * se_mean,
          str("mean %.5f vs %.5f exceeds 4 SE", mean, want_mean));
  require(std::abs(var - want_var) < 4.0 * se_var,
          str("variance %.5f vs %.5f exceeds 4 SE", var, want_var));
  return str("%d schedules monotone; mean off %.2f SE, var off %.2f SE", n_schedules,
             std::abs(mean - want_mean) / se_mean, std::abs(var - want_var) / se_var);
}

// ---------------------------------------------------------------------------
// 5. Analytic gradients against central differences.

std::string check_gradients() {
  const auto se = decode::grad_check_se(8, 6, 3, 0, 11);
  require(se.max_rel_err < 1e-4, str("attention block gradient err %.3g", se.max_rel_err));
  const auto kan = decode::grad_check_kan(6, 4, 5, 0, 12);
  require(kan.max_rel_err < 1e-4, str("spline head gradient err %.3g", kan.max_rel_err));
  decode::ModelArch arch;
  arch.in_channels = 3;
  arch.window = 16;
  const auto full = decode::grad_check_model(arch, 2, 400, 13);
  require(full.max_rel_err < 1e-3, str("full model gradient err %.3g", full.max_rel_err));
  return str("rel err: attention %.2g, spline %.2g, full model %.2g (%lld params probed)",
             se.max_rel_err, kan.max_rel_err, full.max_rel_err,
             static_cast<long long>(se.n_checked + kan.n_checked + full.n_checked));
}

// ---------------------------------------------------------------------------
// 6. Full pipeline on the default corpus, one 128 ms grid per modality.

std::string check_end_to_end() {
  testutil::TmpDir tmp;
  pipeline::PipelineConfig cfg;
  cfg.raw_dir = tmp / "corpus";
  cfg.work_dir = tmp / "work";
  cfg.windows_ms = {128.0};
  pipeline::run(cfg, pipeline::Stage::All, pipeline::thread_cap_from_env());

  const auto report = nlohmann::json::parse(read_file(tmp / "work" / "report.json"));
  double both = -1.0, eeg = -1.0;
  long n_trials = 0;
  for (const auto& cell : report.at("cells")) {
    if (cell.at("window_ms").get<double>() != 128.0) continue;
    if (cell.at("modality") == "EEG_EMG") {
      both = cell.at("top1_pct").get<double>();
      n_trials = cell.at("n_trials").get<long>();
    }
    if (cell.at("modality") == "EEG_ONLY") eeg = cell.at("top1_pct").get<double>();
  }
  require(both >= 0.0 && eeg >= 0.0, "report lacks the 128 ms cells");
  require(both >= 80.0, str("combined-modality top-1 %.2f%% below 80%%", both));
  require(both >= eeg, str("combined top-1 %.2f%% under EEG-only %.2f%%", both, eeg));
  return str("held-out top-1: EEG+EMG %.2f%%, EEG %.2f%% over %ld trials", both, eeg, n_trials);
}

// ---------------------------------------------------------------------------
// 7. Sentence reconstruction on held-out sentences: exact on clean
// sequences, robust to 30% substitution noise.

std::string check_reconstruction() {
  synth::SynthConfig scfg;
  const auto corpus = synth::gen_corpus(scfg);
  std::vector<int> ids;
  for (const auto& s : corpus.sentences) ids.push_back(s.id);
  const auto split = data::split_by_sentence(ids, 50, derive_seed(scfg.seed, "split"));

  seq::SequenceModelConfig mcfg;
  mcfg.seed = derive_seed(scfg.seed, "seq");
  const auto model = seq::train_sequence_model(corpus.catalog, mcfg);

  int clean_match = 0, clean_model = 0;
  for (int id : split.test_sentences) {
    seq::VisemeSequence s{id, corpus.catalog.find(id)->sequence};
    if (seq::match_closed_set(s, corpus.catalog).sentence_id == id) ++clean_match;
    if (seq::infer_sentence(model, s).sentence_id == id) ++clean_model;
  }
  require(clean_match == 50, str("edit-distance matcher solved %d/50 clean", clean_match));
  require(clean_model == 50, str("sequence model solved %d/50 clean", clean_model));

  Rng rng(2026);
  int noisy_match = 0;
  for (int id : split.test_sentences) {
    seq::VisemeSequence s{id, corpus.catalog.find(id)->sequence};
    for (int& lbl : s.labels) {
      if (uniform_real(rng) >= 0.3) continue;
      int swap = static_cast<int>(uniform_int(rng, 0, 13));
      if (swap >= lbl) ++swap;
      lbl = swap;
    }
    if (seq::match_closed_set(s, corpus.catalog).sentence_id == id) ++noisy_match;
  }
  require(noisy_match >= 45,
          str("matcher solved %d/50 at 30%% substitution noise, need 45", noisy_match));
  return str("clean 50/50 both decoders; noisy matcher %d/50", noisy_match);
}

// ---------------------------------------------------------------------------
// 8. Metric oracles: brute-force AUC equality, top-k monotonicity, hand
// worked macro-F1, and grid renders that never wobble.

std::string check_metric_oracles() {
  Rng rng(88);
  double worst_auc_gap = 0.0;
  for (int iter = 0; iter < 500; ++iter) {
    const int n_classes = 2 + static_cast<int>(rng() % 4);
    const int n = 3 + static_cast<int>(rng() % 38);
    MatD scores(n_classes, n);
    std::vector<int> labels(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      labels[static_cast<size_t>(i)] = static_cast<int>(rng() % static_cast<unsigned>(n_classes));
      for (int c = 0; c < n_classes; ++c)
        scores(c, i) = std::round(uniform_real(rng, -2.0, 2.0) * 4.0) / 4.0;  // forces ties
    }
    double acc = 0.0;
    int present = 0;
    for (int c = 0; c < n_classes; ++c) {
      std::vector<double> pos, neg;
      for (int i = 0; i < n; ++i)
        (labels[static_cast<size_t>(i)] == c ? pos : neg).push_back(scores(c, i));
      if (pos.empty() || neg.empty()) continue;
      acc += testutil::brute_auc(pos, neg);
      ++present;
    }
    if (present == 0) continue;
    const double oracle = 100.0 * acc / present;
    const double got = eval::macro_ovr_auc(scores, labels);
    worst_auc_gap = std::max(worst_auc_gap, std::abs(got - oracle));
  }
  require(worst_auc_gap <= 1e-12, str("AUC drifted %.3g from pair counting", worst_auc_gap));

  MatF logits(15, 60);
  std::vector<int> labels(60);
  for (int i = 0; i < 60; ++i) {
    labels[static_cast<size_t>(i)] = static_cast<int>(rng() % 15);
    for (int c = 0; c < 15; ++c) logits(c, i) = static_cast<float>(normal(rng));
  }
  double prev = -1.0;
  for (int k = 1; k <= 15; ++k) {
    const double acc = eval::topk_accuracy(logits, labels, k);
    require(acc >= prev, str("top-%d accuracy fell below top-%d", k, k - 1));
    prev = acc;
  }
  require(prev == 100.0, "top-15 accuracy must be exact");

  const eval::F1Result f1 = eval::macro_f1({0, 1, 1, 1, 2}, {0, 0, 1, 1, 2}, 15);
  require(f1.f1[0] == 2.0 / 3.0 && f1.f1[1] == 0.8 && f1.f1[2] == 1.0,
          "per-class F1 differs from the hand algebra");
  require(f1.macro == (2.0 / 3.0 + 0.8 + 1.0) / 3.0, "macro F1 differs from the hand algebra");
  require(!f1.present[3], "absent class marked present");

  std::vector<eval::MetricsReport> reports;
  for (const char* mod : {"EEG_ONLY", "EEG_EMG"})
    for (double w : {256.0, 64.0, 128.0}) {
      eval::MetricsReport r;
      r.modality = mod;
      r.window_ms = w;
      r.n_trials = 50;
      r.top1_pct = 31.25 + w / 10.0;
      r.top3_pct = 55.0;
      r.f1_macro = 0.41;
      r.auc_pct = 77.7;
      r.per_class = eval::macro_f1({0, 1}, {0, 1}, 15);
      r.confusion = eval::confusion_matrix({0, 1}, {0, 1}, 15);
      reports.push_back(std::move(r));
    }
  const std::string table = eval::render_table(reports);
  const std::string csv = eval::report_csv(reports);
  const std::string json_text = eval::report_json(reports).dump(2);
  std::reverse(reports.begin(), reports.end());
  require(table == eval::render_table(reports) && csv == eval::report_csv(reports) &&
              json_text == eval::report_json(reports).dump(2),
          "report renders depend on input order");
  return str("AUC gap %.1g over 500 draws; renders byte-stable", worst_auc_gap);
}

// ---------------------------------------------------------------------------
// 9. Two identical runs, byte-identical reports.

std::string check_determinism() {
  pipeline::PipelineConfig cfg;
  cfg.synth.n_sentences = 24;
  cfg.synth.min_phonemes = 4;
  cfg.synth.max_phonemes = 8;
  cfg.synth.n_eeg = 6;
  cfg.synth.n_emg = 2;
  cfg.windows_ms = {64.0, 128.0};
  cfg.n_test_sentences = 4;
  cfg.seed = 7;

  std::string first_report, first_csv, first_recon;
  for (int run = 0; run < 2; ++run) {
    testutil::TmpDir tmp;
    pipeline::PipelineConfig c = cfg;
    c.raw_dir = tmp / "corpus";
    c.work_dir = tmp / "work";
    pipeline::run(c, pipeline::Stage::All, run == 0 ? 1 : 4);
    const std::string report = read_file(tmp / "work" / "report.json");
    const std::string csv = read_file(tmp / "work" / "report.csv");
    const std::string recon = read_file(tmp / "work" / "reconstruction.json");
    if (run == 0) {
      first_report = report;
      first_csv = csv;
      first_recon = recon;
    } else {
      require(report == first_report, "report.json differs between identical runs");
      require(csv == first_csv, "report.csv differs between identical runs");
      require(recon == first_recon, "reconstruction.json differs between identical runs");
    }
  }
  return str("report.json, report.csv, reconstruction.json byte-identical (%zu bytes)",
             first_report.size());
}

struct Criterion {
  int id;
  const char* label;
  double budget_s;
  std::function<std::string()> body;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "filter responses and stability", 5.0, check_filters},
      {2, "format round trips and error taxonomy", 30.0, check_parsers},
      {3, "viseme map totality and spelling invariance", 5.0, check_viseme_map},
      {4, "diffusion schedule and forward moments", 10.0, check_diffusion},
      {5, "analytic gradients vs central differences", 60.0, check_gradients},
      {6, "end-to-end decoding on the default corpus", 1200.0, check_end_to_end},
      {7, "sentence reconstruction, clean and noisy", 120.0, check_reconstruction},
      {8, "metric oracles and stable reports", 30.0, check_metric_oracles},
      {9, "bit-identical repeat runs", 600.0, check_determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
      detail = c.body();
      ok = true;
    } catch (const CheckFailure& e) {
      detail = e.what();
    } catch (const std::exception& e) {
      detail = std::string("unexpected exception: ") + e.what();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (ok && secs > c.budget_s) {
      ok = false;
      detail = str("finished but blew the %.0f s budget (%.1f s): %s", c.budget_s, secs,
                   detail.c_str());
    }
    if (!ok) ++failures;
    std::printf("%s  %d/9  %-46s  %7.1f s  %s\n", ok ? "PASS" : "FAIL", c.id, c.label, secs,
                detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/9 acceptance checks passed\n", 9 - failures);
  return failures;
}
