#include "viseme/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <utility>

#include "viseme/brainvision.hpp"
#include "viseme/metrics.hpp"
#include "viseme/text_io.hpp"
#include "viseme/textgrid.hpp"
#include "viseme/viseme_map.hpp"

namespace viseme::pipeline {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using ojson = nlohmann::ordered_json;

constexpr int kArtifactVersion = 1;

std::string dotted(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw config_error((where.empty() ? std::string("config") : where) + " must be a JSON object");
  for (const auto& item : j.items()) {
    const std::string& key = item.key();
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* a) { return key == a; });
    if (!known) throw config_error("unknown config key '" + dotted(where, key) + "'");
  }
}

double get_num(const json& j, const std::string& where, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw config_error(dotted(where, key) + " must be a number");
  return j.at(key).get<double>();
}

int get_int(const json& j, const std::string& where, const char* key, int fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer())
    throw config_error(dotted(where, key) + " must be an integer");
  return j.at(key).get<int>();
}

bool get_bool(const json& j, const std::string& where, const char* key, bool fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_boolean()) throw config_error(dotted(where, key) + " must be a boolean");
  return j.at(key).get<bool>();
}

std::string get_str(const json& j, const std::string& where, const char* key,
                    const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw config_error(dotted(where, key) + " must be a string");
  return j.at(key).get<std::string>();
}

std::uint64_t get_u64(const json& j, const std::string& where, const char* key,
                      std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                 v.get<long long>() < 0))
    throw config_error(dotted(where, key) + " must be a non-negative integer");
  return v.get<std::uint64_t>();
}

dsp::PreprocessParams filter_from_json(const json& j) {
  check_keys(j, "filter",
             {"lo_hz", "hi_hz", "order", "notch_base_hz", "notch_q", "notch_harmonics"});
  dsp::PreprocessParams p;
  p.lo_hz = get_num(j, "filter", "lo_hz", p.lo_hz);
  p.hi_hz = get_num(j, "filter", "hi_hz", p.hi_hz);
  p.order = get_int(j, "filter", "order", p.order);
  p.notch_base_hz = get_num(j, "filter", "notch_base_hz", p.notch_base_hz);
  p.notch_q = get_num(j, "filter", "notch_q", p.notch_q);
  p.notch_harmonics = get_bool(j, "filter", "notch_harmonics", p.notch_harmonics);
  return p;
}

synth::SynthConfig synth_from_json(const json& j, const synth::SynthConfig& base) {
  check_keys(j, "synth", {"n_sentences", "min_phonemes", "max_phonemes", "fs", "n_eeg", "n_emg",
                          "snr_db", "line_noise_amp"});
  synth::SynthConfig c = base;
  c.n_sentences = get_int(j, "synth", "n_sentences", c.n_sentences);
  c.min_phonemes = get_int(j, "synth", "min_phonemes", c.min_phonemes);
  c.max_phonemes = get_int(j, "synth", "max_phonemes", c.max_phonemes);
  c.fs = get_num(j, "synth", "fs", c.fs);
  c.n_eeg = get_int(j, "synth", "n_eeg", c.n_eeg);
  c.n_emg = get_int(j, "synth", "n_emg", c.n_emg);
  c.snr_db = get_num(j, "synth", "snr_db", c.snr_db);
  c.line_noise_amp = get_num(j, "synth", "line_noise_amp", c.line_noise_amp);
  return c;
}

data::EpochConfig epoch_from_json(const json& j, const data::EpochConfig& base) {
  check_keys(j, "epoch", {"length_mode", "znorm"});
  data::EpochConfig c = base;
  const std::string mode = get_str(j, "epoch", "length_mode",
                                   c.mode == data::EpochConfig::LengthMode::Resample ? "resample"
                                                                                     : "crop_pad");
  if (mode == "resample")
    c.mode = data::EpochConfig::LengthMode::Resample;
  else if (mode == "crop_pad")
    c.mode = data::EpochConfig::LengthMode::CropPad;
  else
    throw config_error("epoch.length_mode must be \"resample\" or \"crop_pad\"");
  c.znorm = get_bool(j, "epoch", "znorm", c.znorm);
  return c;
}

decode::ModelArch model_from_json(const json& j, const decode::ModelArch& base) {
  check_keys(j, "model", {"temb_dim", "kernel", "T", "beta_lo", "beta_hi"});
  decode::ModelArch a = base;
  a.temb_dim = get_int(j, "model", "temb_dim", static_cast<int>(a.temb_dim));
  a.kernel = get_int(j, "model", "kernel", static_cast<int>(a.kernel));
  a.T = get_int(j, "model", "T", a.T);
  a.beta_lo = get_num(j, "model", "beta_lo", a.beta_lo);
  a.beta_hi = get_num(j, "model", "beta_hi", a.beta_hi);
  return a;
}

decode::TrainConfig train_from_json(const json& j, const decode::TrainConfig& base) {
  check_keys(j, "train", {"epochs", "batch_size", "optimizer", "lr", "momentum", "adam_beta1",
                          "adam_beta2", "adam_eps", "clip_norm", "weights"});
  decode::TrainConfig c = base;
  c.epochs = get_int(j, "train", "epochs", c.epochs);
  c.batch_size = get_int(j, "train", "batch_size", static_cast<int>(c.batch_size));
  c.optimizer = get_str(j, "train", "optimizer", c.optimizer);
  c.lr = get_num(j, "train", "lr", c.lr);
  c.momentum = get_num(j, "train", "momentum", c.momentum);
  c.adam_beta1 = get_num(j, "train", "adam_beta1", c.adam_beta1);
  c.adam_beta2 = get_num(j, "train", "adam_beta2", c.adam_beta2);
  c.adam_eps = get_num(j, "train", "adam_eps", c.adam_eps);
  c.clip_norm = get_num(j, "train", "clip_norm", c.clip_norm);
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    check_keys(w, "train.weights", {"ddpm", "ae", "cls"});
    c.weights.ddpm = get_num(w, "train.weights", "ddpm", c.weights.ddpm);
    c.weights.ae = get_num(w, "train.weights", "ae", c.weights.ae);
    c.weights.cls = get_num(w, "train.weights", "cls", c.weights.cls);
  }
  return c;
}

ReconstructConfig reconstruct_from_json(const json& j, const ReconstructConfig& base) {
  check_keys(j, "reconstruct",
             {"modality", "window_ms", "embed_dim", "hidden", "max_epochs", "settle_epochs", "lr",
              "corruption_rate", "corrupt_copies"});
  ReconstructConfig c = base;
  c.modality = get_str(j, "reconstruct", "modality", c.modality);
  c.window_ms = get_num(j, "reconstruct", "window_ms", c.window_ms);
  c.model.embed_dim = get_int(j, "reconstruct", "embed_dim", static_cast<int>(c.model.embed_dim));
  c.model.hidden = get_int(j, "reconstruct", "hidden", static_cast<int>(c.model.hidden));
  c.model.max_epochs = get_int(j, "reconstruct", "max_epochs", c.model.max_epochs);
  c.model.settle_epochs = get_int(j, "reconstruct", "settle_epochs", c.model.settle_epochs);
  c.model.lr = get_num(j, "reconstruct", "lr", c.model.lr);
  c.model.corruption_rate = get_num(j, "reconstruct", "corruption_rate", c.model.corruption_rate);
  c.model.corrupt_copies = get_int(j, "reconstruct", "corrupt_copies", c.model.corrupt_copies);
  return c;
}

bool wants_emg(const std::string& modality) { return modality == "EEG_EMG"; }

std::string window_tag(double w) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", w);
  return buf;
}

struct Cell {
  std::string modality;
  double window_ms = 0.0;

  std::string key() const { return cell_key(modality, window_ms); }
};

std::vector<Cell> grid(const PipelineConfig& cfg) {
  std::vector<Cell> cells;
  for (const auto& m : cfg.modalities)
    for (double w : cfg.windows_ms) cells.push_back({m, w});
  return cells;
}

// One JSON object per line; the file is truncated each time its stage runs.
class StageLog {
 public:
  StageLog(const fs::path& dir, std::string stage)
      : stage_(std::move(stage)), out_(dir / (stage_ + ".jsonl"), std::ios::trunc) {
    if (!out_) throw io_error("cannot open stage log in " + dir.string());
    start_ = std::chrono::steady_clock::now();
  }

  void event(const std::string& what, ojson fields = ojson::object()) {
    ojson j{{"stage", stage_}, {"event", what}};
    for (auto& item : fields.items()) j[item.key()] = item.value();
    out_ << j.dump() << "\n";
    out_.flush();
  }

  void done(ojson fields = ojson::object()) {
    const double s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    fields["seconds"] = std::round(s * 1000.0) / 1000.0;
    event("done", std::move(fields));
  }

 private:
  std::string stage_;
  std::ofstream out_;
  std::chrono::steady_clock::time_point start_;
};

// Exclusive-create lock file, removed when the run ends. A leftover lock
// from a crashed run must be deleted by hand; refusing to run is safer than
// letting two writers interleave artifacts.
class WorkLock {
 public:
  explicit WorkLock(fs::path path) : path_(std::move(path)) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      if (errno == EEXIST)
        throw validation_error("work dir is locked (" + path_.string() +
                               " exists); remove the file if no other run is active");
      throw io_error("cannot create lock file " + path_.string());
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    ssize_t n = ::write(fd, pid.data(), pid.size());
    (void)n;
    ::close(fd);
  }

  WorkLock(const WorkLock&) = delete;
  WorkLock& operator=(const WorkLock&) = delete;

  ~WorkLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
};

ojson new_artifact(const std::string& name) {
  return ojson{{"artifact", name}, {"version", kArtifactVersion}};
}

void write_artifact(const fs::path& path, const ojson& j) { write_file(path, j.dump(2) + "\n"); }

json load_artifact(const fs::path& path, const std::string& artifact,
                   const std::string& producer) {
  if (!fs::exists(path)) throw missing_artifact(artifact, producer);
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrKind::Parse, path.string() + ": " + ex.what());
  }
  if (!j.is_object() || j.value("artifact", std::string()) != artifact)
    throw integrity_error(path.string() + " is not a '" + artifact + "' artifact");
  if (j.value("version", -1) != kArtifactVersion)
    throw integrity_error(path.string() + ": unsupported artifact version " +
                          j.value("version", json()).dump());
  return j;
}

const align::PhonemeTier& pick_tier(const std::vector<align::PhonemeTier>& tiers,
                                    const std::string& path) {
  if (tiers.empty()) throw Error(ErrKind::Parse, path + ": no interval tiers");
  for (const auto& t : tiers)
    if (t.name == "phones") return t;
  return tiers.front();
}

align::VisemeMap load_map(const PipelineConfig& cfg) {
  return cfg.viseme_map_path.empty() ? align::VisemeMap::standard()
                                     : align::VisemeMap::from_file(cfg.viseme_map_path);
}

struct Ctx {
  const PipelineConfig& cfg;
  WorkPaths wp;
  int threads = 1;
};

void run_synth(Ctx& ctx) {
  StageLog log(ctx.wp.logs, "synth");
  synth::SynthConfig sc = ctx.cfg.synth;
  sc.seed = derive_seed(ctx.cfg.seed, "synth");
  log.event("start", {{"n_sentences", sc.n_sentences}, {"out_dir", ctx.cfg.raw_dir.string()}});
  const auto res = synth::emit(sc, ctx.cfg.raw_dir);
  log.done({{"recordings", res.headers.size()}});
}

void run_ingest(Ctx& ctx) {
  StageLog log(ctx.wp.logs, "ingest");
  const fs::path corpus_path = ctx.cfg.raw_dir / "corpus.json";
  if (!fs::exists(corpus_path))
    throw missing_artifact("corpus manifest " + corpus_path.string(), "synth");
  json corpus;
  try {
    corpus = json::parse(read_file(corpus_path));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrKind::Parse, corpus_path.string() + ": " + ex.what());
  }
  if (corpus.value("format", std::string()) != "viseme-synth-corpus")
    throw integrity_error(corpus_path.string() + ": unrecognized corpus format");

  const fs::path catalog_path = ctx.cfg.raw_dir / "catalog.json";
  if (!fs::exists(catalog_path))
    throw missing_artifact("sentence catalog " + catalog_path.string(), "synth");
  seq::SentenceCatalog::from_file(catalog_path).validate();

  log.event("start", {{"corpus", corpus_path.string()}});

  std::vector<std::string> ref_names;
  std::vector<std::string> ref_roles;
  double fs_hz = 0.0;
  bool has_emg = false;
  std::set<int> seen_ids;
  ojson rows = ojson::array();
  for (const json& s : corpus.at("sentences")) {
    const int id = s.at("id").get<int>();
    if (!seen_ids.insert(id).second)
      throw integrity_error(corpus_path.string() + ": duplicate sentence id " +
                            std::to_string(id));
    const std::string rec_rel = s.at("recording").get<std::string>();
    const std::string tg_rel = s.at("alignment").get<std::string>();
    const auto bv = io::read_brainvision(ctx.cfg.raw_dir / rec_rel);
    const auto tiers = align::parse_textgrid(ctx.cfg.raw_dir / tg_rel);
    const auto& tier = pick_tier(tiers, (ctx.cfg.raw_dir / tg_rel).string());

    if (tier.xmax > bv.recording.duration_s() + 1.0 / bv.recording.fs)
      throw integrity_error(tg_rel + ": alignment runs past the recording (" +
                            std::to_string(tier.xmax) + " s vs " +
                            std::to_string(bv.recording.duration_s()) + " s)");

    std::vector<std::string> names;
    std::vector<std::string> roles;
    for (const auto& ch : bv.recording.channels) {
      names.push_back(ch.name);
      roles.push_back(io::role_name(ch.role));
    }
    if (ref_names.empty()) {
      ref_names = names;
      ref_roles = roles;
      fs_hz = bv.recording.fs;
      has_emg = !bv.recording.channel_indices(false, true, false).empty();
      if (bv.recording.channel_indices(true, false, false).empty())
        throw validation_error(rec_rel + ": corpus has no EEG channels");
    } else {
      if (names != ref_names || roles != ref_roles)
        throw integrity_error(rec_rel + ": channel layout differs from the first recording");
      if (bv.recording.fs != fs_hz)
        throw integrity_error(rec_rel + ": sampling rate differs from the first recording");
    }

    rows.push_back({{"id", id},
                    {"recording", rec_rel},
                    {"alignment", tg_rel},
                    {"n_samples", bv.recording.n_samples()},
                    {"n_intervals", tier.intervals.size()},
                    {"xmax", tier.xmax}});
  }
  if (rows.empty()) throw validation_error(corpus_path.string() + ": corpus has no sentences");

  for (const auto& m : ctx.cfg.modalities)
    if (wants_emg(m) && !has_emg)
      throw validation_error("modality " + m + " requested but the corpus has no EMG channels");

  ojson out = new_artifact("ingest");
  out["fs"] = fs_hz;
  out["channel_names"] = ref_names;
  out["channel_roles"] = ref_roles;
  out["has_emg"] = has_emg;
  out["sentences"] = std::move(rows);
  write_artifact(ctx.wp.ingest_manifest, out);
  log.done({{"sentences", seen_ids.size()}, {"fs", fs_hz}});
}

void run_preprocess(Ctx& ctx) {
  StageLog log(ctx.wp.logs, "preprocess");
  const json ingest = load_artifact(ctx.wp.ingest_manifest, "ingest", "ingest");
  fs::create_directories(ctx.wp.preprocessed);
  log.event("start", {{"sentences", ingest.at("sentences").size()}});

  ojson rows = ojson::array();
  size_t count = 0;
  for (const json& s : ingest.at("sentences")) {
    const std::string rec_rel = s.at("recording").get<std::string>();
    auto bv = io::read_brainvision(ctx.cfg.raw_dir / rec_rel);
    const io::Recording filtered = dsp::preprocess_recording(bv.recording, ctx.cfg.filter);
    const std::string stem = fs::path(rec_rel).stem().string();
    io::write_brainvision(filtered, bv.markers, ctx.wp.preprocessed / stem,
                          io::BinaryFormat::Float32);
    rows.push_back({{"id", s.at("id")},
                    {"recording", "preprocessed/" + stem + ".vhdr"},
                    {"alignment", s.at("alignment")}});
    if (++count % 100 == 0) log.event("progress", {{"sentences", count}});
  }

  ojson out = new_artifact("preprocess");
  out["filter"] = {{"lo_hz", ctx.cfg.filter.lo_hz},
                   {"hi_hz", ctx.cfg.filter.hi_hz},
                   {"order", ctx.cfg.filter.order},
                   {"notch_base_hz", ctx.cfg.filter.notch_base_hz},
                   {"notch_q", ctx.cfg.filter.notch_q},
                   {"notch_harmonics", ctx.cfg.filter.notch_harmonics}};
  out["fs"] = ingest.at("fs");
  out["sentences"] = std::move(rows);
  write_artifact(ctx.wp.preprocess_manifest, out);
  log.done({{"sentences", count}});
}

void run_epoch(Ctx& ctx) {
  StageLog log(ctx.wp.logs, "epoch");
  const json pre = load_artifact(ctx.wp.preprocess_manifest, "preprocess", "preprocess");
  const auto map = load_map(ctx.cfg);
  fs::create_directories(ctx.wp.datasets);

  std::vector<int> sentence_ids;
  for (const json& s : pre.at("sentences")) sentence_ids.push_back(s.at("id").get<int>());
  const auto split = data::split_by_sentence(sentence_ids, ctx.cfg.n_test_sentences,
                                             derive_seed(ctx.cfg.seed, "split"));
  const std::set<int> test_ids(split.test_sentences.begin(), split.test_sentences.end());
  log.event("start", {{"train_sentences", split.train_sentences.size()},
                      {"test_sentences", split.test_sentences.size()}});

  ojson cells = ojson::array();
  for (const Cell& cell : grid(ctx.cfg)) {
    data::EpochConfig ec = ctx.cfg.epoch;
    ec.window_ms = cell.window_ms;
    ec.include_eeg = true;
    ec.include_emg = wants_emg(cell.modality);
    ec.include_reference = false;

    std::vector<data::LabeledTrial> train_trials;
    std::vector<data::LabeledTrial> test_trials;
    std::vector<std::string> names;
    double fs_hz = 0.0;
    int skipped = 0;
    for (const json& s : pre.at("sentences")) {
      const int id = s.at("id").get<int>();
      const auto bv =
          io::read_brainvision(ctx.wp.root / s.at("recording").get<std::string>());
      const fs::path tg_path = ctx.cfg.raw_dir / s.at("alignment").get<std::string>();
      const auto tiers = align::parse_textgrid(tg_path);
      const auto intervals =
          align::tier_to_viseme_intervals(pick_tier(tiers, tg_path.string()), map);
      if (names.empty()) {
        for (int ci : bv.recording.channel_indices(ec.include_eeg, ec.include_emg, false))
          names.push_back(bv.recording.channels[static_cast<size_t>(ci)].name);
        fs_hz = bv.recording.fs;
      }
      data::EpochStats stats;
      auto trials = data::extract_epochs(bv.recording, intervals, id, ec, &stats);
      skipped += stats.skipped_short;
      auto& dest = test_ids.count(id) ? test_trials : train_trials;
      for (auto& t : trials) dest.push_back(std::move(t));
    }

    const auto train_ds =
        data::Dataset::from_trials(std::move(train_trials), fs_hz, cell.window_ms, names);
    const auto test_ds =
        data::Dataset::from_trials(std::move(test_trials), fs_hz, cell.window_ms, names);
    const std::string key = cell.key();
    data::save_dataset(train_ds, ctx.wp.datasets / (key + ".train"));
    data::save_dataset(test_ds, ctx.wp.datasets / (key + ".test"));

    cells.push_back({{"modality", cell.modality},
                     {"window_ms", cell.window_ms},
                     {"train", "datasets/" + key + ".train.vds"},
                     {"test", "datasets/" + key + ".test.vds"},
                     {"n_train", train_ds.trials.size()},
                     {"n_test", test_ds.trials.size()},
                     {"n_channels", train_ds.n_channels},
                     {"n_samples", train_ds.n_samples},
                     {"skipped_short", skipped}});
    log.event("cell", {{"cell", key},
                       {"n_train", train_ds.trials.size()},
                       {"n_test", test_ds.trials.size()}});
  }

  ojson out = new_artifact("epoch");
  out["n_classes"] = map.n_classes();
  out["split"] = {{"train", split.train_sentences}, {"test", split.test_sentences}};
  out["cells"] = std::move(cells);
  write_artifact(ctx.wp.epoch_manifest, out);
  log.done({{"cells", ctx.cfg.modalities.size() * ctx.cfg.windows_ms.size()}});
}

// Rows of the epoch/train manifests keyed by cell for lookup.
std::map<std::string, json> cells_by_key(const json& manifest) {
  std::map<std::string, json> out;
  for (const json& c : manifest.at("cells"))
    out[cell_key(c.at("modality").get<std::string>(), c.at("window_ms").get<double>())] = c;
  return out;
}

void run_train(Ctx& ctx) {
  StageLog log(ctx.wp.logs, "train");
  const json ep = load_artifact(ctx.wp.epoch_manifest, "epoch", "epoch");
  const auto ep_cells = cells_by_key(ep);
  fs::create_directories(ctx.wp.models);
  log.event("start", {{"cells", grid(ctx.cfg).size()}});

  ojson cells = ojson::array();
  for (const Cell& cell : grid(ctx.cfg)) {
    const std::string key = cell.key();
    const auto it = ep_cells.find(key);
    if (it == ep_cells.end()) throw missing_artifact("dataset for cell " + key, "epoch");
    const auto train_ds = data::load_dataset(ctx.wp.root / it->second.at("train").get<std::string>());

    decode::ModelArch arch = ctx.cfg.model;
    arch.in_channels = train_ds.n_channels;
    arch.window = train_ds.n_samples;
    arch.n_classes = ep.at("n_classes").get<int>();

    decode::TrainConfig tc = ctx.cfg.train;
    tc.seed = derive_seed(ctx.cfg.seed, "train:" + key);

    const decode::VisemeNet<float> net(arch);
    VecF theta = net.init_params(derive_seed(tc.seed, "init"));
    const auto sched = decode::make_schedule(arch.T, arch.beta_lo, arch.beta_hi);
    log.event("cell_start",
              {{"cell", key}, {"n_params", net.n_params()}, {"n_train", train_ds.trials.size()}});

    ojson epoch_rows = ojson::array();
    const auto result =
        train_model(net, theta, train_ds, tc, sched, [&](const decode::EpochLog& l) {
          log.event("epoch", {{"cell", key},
                              {"epoch", l.epoch},
                              {"loss", l.loss},
                              {"loss_ddpm", l.loss_ddpm},
                              {"loss_ae", l.loss_ae},
                              {"loss_cls", l.loss_cls},
                              {"train_top1", l.train_top1}});
          epoch_rows.push_back({{"epoch", l.epoch},
                                {"loss", l.loss},
                                {"loss_ddpm", l.loss_ddpm},
                                {"loss_ae", l.loss_ae},
                                {"loss_cls", l.loss_cls},
                                {"train_top1", l.train_top1}});
        });

    const fs::path ckpt = ctx.wp.models / (key + ".ckpt");
    decode::save_checkpoint(ckpt, arch, theta,
                            json{{"modality", cell.modality},
                                 {"window_ms", cell.window_ms},
                                 {"epochs", json::parse(epoch_rows.dump())}});
    cells.push_back({{"modality", cell.modality},
                     {"window_ms", cell.window_ms},
                     {"checkpoint", "models/" + key + ".ckpt"},
                     {"n_params", result.n_params},
                     {"epochs", std::move(epoch_rows)}});
  }

  ojson out = new_artifact("train");
  out["cells"] = std::move(cells);
  write_artifact(ctx.wp.train_manifest, out);
  log.done();
}

void run_predict(Ctx& ctx) {
  StageLog log(ctx.wp.logs, "predict");
  const json tm = load_artifact(ctx.wp.train_manifest, "train", "train");
  const json ep = load_artifact(ctx.wp.epoch_manifest, "epoch", "epoch");
  const auto tm_cells = cells_by_key(tm);
  const auto ep_cells = cells_by_key(ep);
  fs::create_directories(ctx.wp.predictions);
  log.event("start", {{"cells", grid(ctx.cfg).size()}});

  for (const Cell& cell : grid(ctx.cfg)) {
    const std::string key = cell.key();
    const auto tm_it = tm_cells.find(key);
    if (tm_it == tm_cells.end()) throw missing_artifact("model for cell " + key, "train");
    const auto ep_it = ep_cells.find(key);
    if (ep_it == ep_cells.end()) throw missing_artifact("dataset for cell " + key, "epoch");

    const auto ck =
        decode::load_checkpoint(ctx.wp.root / tm_it->second.at("checkpoint").get<std::string>());
    const auto test_ds =
        data::load_dataset(ctx.wp.root / ep_it->second.at("test").get<std::string>());
    if (test_ds.n_channels != ck.arch.in_channels || test_ds.n_samples != ck.arch.window)
      throw integrity_error("cell " + key + ": checkpoint shape (" +
                            std::to_string(ck.arch.in_channels) + "x" +
                            std::to_string(ck.arch.window) + ") does not match the test set");

    const decode::VisemeNet<float> net(ck.arch);
    const auto sched = decode::make_schedule(ck.arch.T, ck.arch.beta_lo, ck.arch.beta_hi);
    const MatF logits = decode::predict_logits(net, ck.theta, test_ds, sched);

    ojson out = new_artifact("predictions");
    out["modality"] = cell.modality;
    out["window_ms"] = cell.window_ms;
    out["n_classes"] = ck.arch.n_classes;
    ojson labels = ojson::array();
    ojson sids = ojson::array();
    ojson ivals = ojson::array();
    ojson rows = ojson::array();
    for (Index i = 0; i < logits.cols(); ++i) {
      const auto& t = test_ds.trials[static_cast<size_t>(i)];
      labels.push_back(t.label);
      sids.push_back(t.sentence_id);
      ivals.push_back(t.interval_index);
      ojson row = ojson::array();
      for (Index c = 0; c < logits.rows(); ++c) row.push_back(logits(c, i));
      rows.push_back(std::move(row));
    }
    out["labels"] = std::move(labels);
    out["sentence_ids"] = std::move(sids);
    out["interval_indices"] = std::move(ivals);
    out["logits"] = std::move(rows);
    write_artifact(ctx.wp.predictions / (key + ".json"), out);
    log.event("cell", {{"cell", key}, {"n_trials", logits.cols()}});
  }
  log.done();
}

struct PredictionSet {
  std::string modality;
  double window_ms = 0.0;
  int n_classes = 15;
  MatF logits;  // n_classes x n_trials
  std::vector<int> labels;
  std::vector<int> sentence_ids;
  std::vector<int> interval_indices;
};

PredictionSet load_predictions(const Ctx& ctx, const std::string& key) {
  const json j =
      load_artifact(ctx.wp.predictions / (key + ".json"), "predictions", "predict");
  PredictionSet p;
  p.modality = j.at("modality").get<std::string>();
  p.window_ms = j.at("window_ms").get<double>();
  p.n_classes = j.at("n_classes").get<int>();
  p.labels = j.at("labels").get<std::vector<int>>();
  p.sentence_ids = j.at("sentence_ids").get<std::vector<int>>();
  p.interval_indices = j.at("interval_indices").get<std::vector<int>>();
  const json& rows = j.at("logits");
  const Index n = static_cast<Index>(rows.size());
  if (p.labels.size() != rows.size() || p.sentence_ids.size() != rows.size() ||
      p.interval_indices.size() != rows.size())
    throw integrity_error(key + ": prediction arrays disagree in length");
  p.logits.resize(p.n_classes, n);
  for (Index i = 0; i < n; ++i) {
    const json& row = rows[static_cast<size_t>(i)];
    if (static_cast<int>(row.size()) != p.n_classes)
      throw integrity_error(key + ": logit row width does not match n_classes");
    for (Index c = 0; c < p.logits.rows(); ++c)
      p.logits(c, i) = row[static_cast<size_t>(c)].get<float>();
  }
  return p;
}

void run_eval(Ctx& ctx) {
  StageLog log(ctx.wp.logs, "eval");
  fs::create_directories(ctx.wp.eval_dir);
  log.event("start", {{"cells", grid(ctx.cfg).size()}});
  for (const Cell& cell : grid(ctx.cfg)) {
    const std::string key = cell.key();
    const PredictionSet p = load_predictions(ctx, key);
    const auto report =
        eval::evaluate(p.logits, p.labels, p.modality, p.window_ms, p.n_classes);
    ojson out = new_artifact("eval");
    out["cell"] = eval::report_json({report})[0];
    write_artifact(ctx.wp.eval_dir / (key + ".json"), out);
    log.event("cell", {{"cell", key},
                       {"top1_pct", report.top1_pct},
                       {"top3_pct", report.top3_pct},
                       {"f1_macro", report.f1_macro},
                       {"auc_pct", report.auc_pct}});
  }
  log.done();
}

void run_reconstruct(Ctx& ctx) {
  StageLog log(ctx.wp.logs, "reconstruct");
  const std::string key = cell_key(ctx.cfg.reconstruct.modality, ctx.cfg.reconstruct.window_ms);
  const PredictionSet p = load_predictions(ctx, key);
  const json ep = load_artifact(ctx.wp.epoch_manifest, "epoch", "epoch");

  const fs::path catalog_path = ctx.cfg.raw_dir / "catalog.json";
  if (!fs::exists(catalog_path))
    throw missing_artifact("sentence catalog " + catalog_path.string(), "synth");
  const auto full_catalog = seq::SentenceCatalog::from_file(catalog_path);

  const auto test_ids = ep.at("split").at("test").get<std::vector<int>>();
  const std::set<int> test_set(test_ids.begin(), test_ids.end());
  seq::SentenceCatalog catalog;
  for (const auto& e : full_catalog.entries)
    if (test_set.count(e.id)) catalog.entries.push_back(e);
  if (catalog.entries.size() != test_set.size())
    throw integrity_error("catalog is missing " +
                          std::to_string(test_set.size() - catalog.entries.size()) +
                          " held-out sentences");
  catalog.validate();

  std::map<int, std::vector<seq::TrialPrediction>> by_sentence;
  for (size_t i = 0; i < p.labels.size(); ++i) {
    const VecF col = p.logits.col(static_cast<Index>(i));
    by_sentence[p.sentence_ids[i]].push_back(
        {p.interval_indices[i], decode::top_k(col, 1)[0]});
  }

  seq::SequenceModelConfig sc = ctx.cfg.reconstruct.model;
  sc.seed = derive_seed(ctx.cfg.seed, "reconstruct");
  log.event("start", {{"cell", key}, {"catalog_size", catalog.entries.size()}});
  std::vector<std::string> warnings;
  const auto model = seq::train_sequence_model(catalog, sc, &warnings);
  for (const auto& w : warnings) log.event("warning", {{"message", w}});

  int match_ok = 0;
  int model_ok = 0;
  ojson rows = ojson::array();
  for (const auto& entry : catalog.entries) {
    const auto it = by_sentence.find(entry.id);
    std::vector<seq::TrialPrediction> preds =
        it == by_sentence.end() ? std::vector<seq::TrialPrediction>{} : it->second;
    const auto sequence = seq::assemble_sequence(std::move(preds), entry.id);
    const auto match = seq::match_closed_set(sequence, catalog);
    const auto inferred = seq::infer_sentence(model, sequence);
    match_ok += match.sentence_id == entry.id;
    model_ok += inferred.sentence_id == entry.id;
    rows.push_back({{"id", entry.id},
                    {"n_intervals", sequence.labels.size()},
                    {"predicted", sequence.labels},
                    {"edit_match",
                     {{"sentence_id", match.sentence_id},
                      {"distance", match.distance},
                      {"margin", match.margin},
                      {"correct", match.sentence_id == entry.id}}},
                    {"model_match",
                     {{"sentence_id", inferred.sentence_id},
                      {"correct", inferred.sentence_id == entry.id}}}});
  }

  const double n = static_cast<double>(catalog.entries.size());
  ojson out = new_artifact("reconstruction");
  out["modality"] = p.modality;
  out["window_ms"] = p.window_ms;
  out["n_sentences"] = catalog.entries.size();
  out["edit_match_correct"] = match_ok;
  out["model_match_correct"] = model_ok;
  out["edit_match_pct"] = n > 0 ? 100.0 * match_ok / n : 0.0;
  out["model_match_pct"] = n > 0 ? 100.0 * model_ok / n : 0.0;
  out["warnings"] = warnings;
  out["sentences"] = std::move(rows);
  write_artifact(ctx.wp.reconstruction, out);
  log.done({{"edit_match_correct", match_ok}, {"model_match_correct", model_ok}});
}

eval::MetricsReport report_from_cell_json(const json& c) {
  eval::MetricsReport r;
  r.modality = c.at("modality").get<std::string>();
  r.window_ms = c.at("window_ms").get<double>();
  r.n_trials = c.at("n_trials").get<Index>();
  r.top1_pct = c.at("top1_pct").get<double>();
  r.top3_pct = c.at("top3_pct").get<double>();
  r.f1_macro = c.at("f1_macro").get<double>();
  r.auc_pct = c.at("auc_pct").get<double>();
  const json& per = c.at("per_class");
  const Index k = static_cast<Index>(per.size());
  r.per_class.macro = r.f1_macro;
  r.per_class.precision.resize(k);
  r.per_class.recall.resize(k);
  r.per_class.f1.resize(k);
  r.per_class.support.resize(static_cast<size_t>(k));
  r.per_class.present.resize(static_cast<size_t>(k));
  for (Index i = 0; i < k; ++i) {
    const json& row = per[static_cast<size_t>(i)];
    r.per_class.precision[i] = row.at("precision").get<double>();
    r.per_class.recall[i] = row.at("recall").get<double>();
    r.per_class.f1[i] = row.at("f1").get<double>();
    r.per_class.support[static_cast<size_t>(i)] = row.at("support").get<int>();
    r.per_class.present[static_cast<size_t>(i)] = row.at("present").get<bool>();
  }
  const json& cm = c.at("confusion");
  r.confusion.resize(static_cast<Index>(cm.size()), k);
  for (Index i = 0; i < r.confusion.rows(); ++i)
    for (Index j2 = 0; j2 < k; ++j2)
      r.confusion(i, j2) = cm[static_cast<size_t>(i)][static_cast<size_t>(j2)].get<int>();
  return r;
}

void run_report(Ctx& ctx) {
  StageLog log(ctx.wp.logs, "report");
  std::vector<eval::MetricsReport> reports;
  for (const Cell& cell : grid(ctx.cfg)) {
    const json e = load_artifact(ctx.wp.eval_dir / (cell.key() + ".json"), "eval", "eval");
    reports.push_back(report_from_cell_json(e.at("cell")));
  }
  log.event("start", {{"cells", reports.size()}});

  ojson out = new_artifact("report");
  out["cells"] = eval::report_json(reports);
  write_artifact(ctx.wp.report_json, out);
  write_file(ctx.wp.report_txt, eval::render_table(reports));
  write_file(ctx.wp.report_csv, eval::report_csv(reports));
  log.done();
}

void dispatch(Ctx& ctx, Stage s) {
  try {
    switch (s) {
      case Stage::Synth: run_synth(ctx); return;
      case Stage::Ingest: run_ingest(ctx); return;
      case Stage::Preprocess: run_preprocess(ctx); return;
      case Stage::Epoch: run_epoch(ctx); return;
      case Stage::Train: run_train(ctx); return;
      case Stage::Predict: run_predict(ctx); return;
      case Stage::Eval: run_eval(ctx); return;
      case Stage::Reconstruct: run_reconstruct(ctx); return;
      case Stage::Report: run_report(ctx); return;
      case Stage::All: break;
    }
  } catch (const nlohmann::json::exception& ex) {
    throw integrity_error(stage_name(s) + ": malformed artifact: " + std::string(ex.what()));
  }
  throw config_error("cannot dispatch composite stage");
}

}  // namespace

PipelineConfig::PipelineConfig() {
  train.optimizer = "adam";
  train.lr = 3e-3;
  train.epochs = 4;
}

void PipelineConfig::validate() const {
  if (raw_dir.empty()) throw config_error("raw_dir must not be empty");
  if (work_dir.empty()) throw config_error("work_dir must not be empty");
  if (modalities.empty()) throw config_error("modalities must not be empty");
  std::set<std::string> mods;
  for (const auto& m : modalities) {
    if (m != "EEG_EMG" && m != "EEG_ONLY")
      throw config_error("unknown modality '" + m + "' (expected EEG_EMG or EEG_ONLY)");
    if (!mods.insert(m).second) throw config_error("duplicate modality '" + m + "'");
  }
  if (windows_ms.empty()) throw config_error("windows_ms must not be empty");
  std::set<double> wins;
  for (double w : windows_ms) {
    if (!(w > 0.0) || !std::isfinite(w))
      throw config_error("windows_ms entries must be positive");
    if (!wins.insert(w).second)
      throw config_error("duplicate window " + window_tag(w) + " ms");
  }
  if (n_test_sentences < 1) throw config_error("n_test_sentences must be at least 1");
  synth.validate();
  train.validate();
  reconstruct.model.validate();
  if (!mods.count(reconstruct.modality))
    throw config_error("reconstruct.modality '" + reconstruct.modality +
                       "' is not in the modalities list");
  if (!wins.count(reconstruct.window_ms))
    throw config_error("reconstruct.window_ms " + window_tag(reconstruct.window_ms) +
                       " is not in the windows_ms list");
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  check_keys(j, "", {"raw_dir", "work_dir", "seed", "windows_ms", "modalities",
                     "n_test_sentences", "viseme_map", "filter", "synth", "epoch", "model",
                     "train", "reconstruct"});
  PipelineConfig c;
  c.raw_dir = get_str(j, "", "raw_dir", c.raw_dir.string());
  c.work_dir = get_str(j, "", "work_dir", c.work_dir.string());
  c.seed = get_u64(j, "", "seed", c.seed);
  if (j.contains("windows_ms")) {
    if (!j.at("windows_ms").is_array())
      throw config_error("windows_ms must be an array of numbers");
    c.windows_ms.clear();
    for (const json& v : j.at("windows_ms")) {
      if (!v.is_number()) throw config_error("windows_ms must be an array of numbers");
      c.windows_ms.push_back(v.get<double>());
    }
  }
  if (j.contains("modalities")) {
    if (!j.at("modalities").is_array())
      throw config_error("modalities must be an array of strings");
    c.modalities.clear();
    for (const json& v : j.at("modalities")) {
      if (!v.is_string()) throw config_error("modalities must be an array of strings");
      c.modalities.push_back(v.get<std::string>());
    }
  }
  c.n_test_sentences = get_int(j, "", "n_test_sentences", c.n_test_sentences);
  c.viseme_map_path = get_str(j, "", "viseme_map", c.viseme_map_path.string());
  if (j.contains("filter")) c.filter = filter_from_json(j.at("filter"));
  if (j.contains("synth")) c.synth = synth_from_json(j.at("synth"), c.synth);
  if (j.contains("epoch")) c.epoch = epoch_from_json(j.at("epoch"), c.epoch);
  if (j.contains("model")) c.model = model_from_json(j.at("model"), c.model);
  if (j.contains("train")) c.train = train_from_json(j.at("train"), c.train);
  if (j.contains("reconstruct"))
    c.reconstruct = reconstruct_from_json(j.at("reconstruct"), c.reconstruct);
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::from_file(const std::filesystem::path& path) {
  if (!fs::exists(path)) throw io_error("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrKind::Parse, path.string() + ": " + ex.what());
  }
  return from_json(j);
}

nlohmann::ordered_json PipelineConfig::to_json() const {
  ojson j;
  j["raw_dir"] = raw_dir.string();
  j["work_dir"] = work_dir.string();
  j["seed"] = seed;
  j["windows_ms"] = windows_ms;
  j["modalities"] = modalities;
  j["n_test_sentences"] = n_test_sentences;
  j["viseme_map"] = viseme_map_path.string();
  j["filter"] = {{"lo_hz", filter.lo_hz},
                 {"hi_hz", filter.hi_hz},
                 {"order", filter.order},
                 {"notch_base_hz", filter.notch_base_hz},
                 {"notch_q", filter.notch_q},
                 {"notch_harmonics", filter.notch_harmonics}};
  j["synth"] = {{"n_sentences", synth.n_sentences},
                {"min_phonemes", synth.min_phonemes},
                {"max_phonemes", synth.max_phonemes},
                {"fs", synth.fs},
                {"n_eeg", synth.n_eeg},
                {"n_emg", synth.n_emg},
                {"snr_db", synth.snr_db},
                {"line_noise_amp", synth.line_noise_amp}};
  j["epoch"] = {{"length_mode",
                 epoch.mode == data::EpochConfig::LengthMode::Resample ? "resample" : "crop_pad"},
                {"znorm", epoch.znorm}};
  j["model"] = {{"temb_dim", model.temb_dim},
                {"kernel", model.kernel},
                {"T", model.T},
                {"beta_lo", model.beta_lo},
                {"beta_hi", model.beta_hi}};
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"optimizer", train.optimizer},
                {"lr", train.lr},
                {"momentum", train.momentum},
                {"adam_beta1", train.adam_beta1},
                {"adam_beta2", train.adam_beta2},
                {"adam_eps", train.adam_eps},
                {"clip_norm", train.clip_norm},
                {"weights",
                 {{"ddpm", train.weights.ddpm}, {"ae", train.weights.ae}, {"cls", train.weights.cls}}}};
  j["reconstruct"] = {{"modality", reconstruct.modality},
                      {"window_ms", reconstruct.window_ms},
                      {"embed_dim", reconstruct.model.embed_dim},
                      {"hidden", reconstruct.model.hidden},
                      {"max_epochs", reconstruct.model.max_epochs},
                      {"settle_epochs", reconstruct.model.settle_epochs},
                      {"lr", reconstruct.model.lr},
                      {"corruption_rate", reconstruct.model.corruption_rate},
                      {"corrupt_copies", reconstruct.model.corrupt_copies}};
  return j;
}

void apply_override(nlohmann::json& j, const std::string& key, const std::string& value) {
  if (key.empty()) throw config_error("--set needs a non-empty key");
  std::vector<std::string> parts;
  size_t start = 0;
  while (true) {
    const size_t dot = key.find('.', start);
    parts.push_back(key.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (const auto& p : parts)
    if (p.empty()) throw config_error("--set key '" + key + "' has an empty path segment");

  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = value;  // bare words are taken as strings

  json* node = &j;
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object())
      throw config_error("--set key '" + key + "' descends into a non-object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object())
    throw config_error("--set key '" + key + "' descends into a non-object");
  (*node)[parts.back()] = std::move(parsed);
}

Stage stage_from_name(const std::string& name) {
  static const std::map<std::string, Stage> table = {
      {"synth", Stage::Synth},       {"ingest", Stage::Ingest},
      {"preprocess", Stage::Preprocess}, {"epoch", Stage::Epoch},
      {"train", Stage::Train},       {"predict", Stage::Predict},
      {"eval", Stage::Eval},         {"reconstruct", Stage::Reconstruct},
      {"report", Stage::Report},     {"all", Stage::All}};
  const auto it = table.find(name);
  if (it == table.end()) throw config_error("unknown stage '" + name + "'");
  return it->second;
}

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::Synth: return "synth";
    case Stage::Ingest: return "ingest";
    case Stage::Preprocess: return "preprocess";
    case Stage::Epoch: return "epoch";
    case Stage::Train: return "train";
    case Stage::Predict: return "predict";
    case Stage::Eval: return "eval";
    case Stage::Reconstruct: return "reconstruct";
    case Stage::Report: return "report";
    case Stage::All: return "all";
  }
  return "unknown";
}

const std::vector<Stage>& stage_order() {
  static const std::vector<Stage> order = {Stage::Synth,  Stage::Ingest,  Stage::Preprocess,
                                           Stage::Epoch,  Stage::Train,   Stage::Predict,
                                           Stage::Eval,   Stage::Reconstruct, Stage::Report};
  return order;
}

std::string cell_key(const std::string& modality, double window_ms) {
  return modality + "_w" + window_tag(window_ms);
}

WorkPaths WorkPaths::at(const std::filesystem::path& work_dir) {
  WorkPaths p;
  p.root = work_dir;
  p.logs = work_dir / "logs";
  p.preprocessed = work_dir / "preprocessed";
  p.datasets = work_dir / "datasets";
  p.models = work_dir / "models";
  p.predictions = work_dir / "predictions";
  p.eval_dir = work_dir / "eval";
  p.ingest_manifest = work_dir / "ingest.json";
  p.preprocess_manifest = work_dir / "preprocess.json";
  p.epoch_manifest = work_dir / "epoch.json";
  p.train_manifest = work_dir / "train.json";
  p.reconstruction = work_dir / "reconstruction.json";
  p.report_json = work_dir / "report.json";
  p.report_txt = work_dir / "report.txt";
  p.report_csv = work_dir / "report.csv";
  p.lock = work_dir / ".lock";
  return p;
}

int thread_cap_from_env() {
  const char* raw = std::getenv("VISEME_DECODE_THREADS");
  if (raw == nullptr || *raw == '\0') return 1;
  int value = 0;
  const char* end = raw;
  while (*end != '\0') ++end;
  const auto [ptr, ec] = std::from_chars(raw, end, value);
  if (ec != std::errc() || ptr != end || value < 1 || value > 4096)
    throw config_error("VISEME_DECODE_THREADS must be a positive integer, got '" +
                       std::string(raw) + "'");
  return value;
}

void run(const PipelineConfig& cfg, Stage stage, int thread_cap) {
  cfg.validate();
  if (thread_cap < 1) throw config_error("thread cap must be positive");
  const WorkPaths wp = WorkPaths::at(cfg.work_dir);
  std::error_code ec;
  fs::create_directories(wp.logs, ec);
  if (ec) throw io_error("cannot create work dir " + wp.root.string());
  const WorkLock lock(wp.lock);
  Ctx ctx{cfg, wp, thread_cap};
  if (stage == Stage::All) {
    for (Stage s : stage_order()) dispatch(ctx, s);
  } else {
    dispatch(ctx, stage);
  }
}

}  // namespace viseme::pipeline
