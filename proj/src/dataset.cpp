#include "viseme/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include <nlohmann/json.hpp>

#include "viseme/errors.hpp"
#include "viseme/rng.hpp"
#include "viseme/text_io.hpp"

namespace viseme::data {
namespace {

constexpr char kMagic[4] = {'V', 'D', 'S', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_i32(std::string& out, std::int32_t v) { put_u32(out, static_cast<std::uint32_t>(v)); }

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  std::string file;

  void need(size_t n) const {
    if (pos + n > buf.size())
      throw integrity_error(file + ": truncated dataset file (need " + std::to_string(n) +
                            " bytes at offset " + std::to_string(pos) + ")");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    std::uint32_t n = u32();
    if (n > 4096) throw integrity_error(file + ": unreasonable string length in dataset file");
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

VecD resample_linear(const VecD& x, Index m) {
  const Index n = x.size();
  if (n < 2) throw validation_error("resample needs at least 2 input samples");
  if (m < 2) throw validation_error("resample needs at least 2 output samples");
  if (m == n) return x;
  VecD out(m);
  const double scale = static_cast<double>(n - 1) / static_cast<double>(m - 1);
  for (Index j = 0; j < m; ++j) {
    const double p = static_cast<double>(j) * scale;
    Index i0 = static_cast<Index>(p);
    if (i0 >= n - 1) i0 = n - 2;
    const double frac = p - static_cast<double>(i0);
    out[j] = (1.0 - frac) * x[i0] + frac * x[i0 + 1];
  }
  return out;
}

std::vector<LabeledTrial> extract_epochs(const io::Recording& rec,
                                         const std::vector<align::VisemeInterval>& intervals,
                                         int sentence_id, const EpochConfig& cfg,
                                         EpochStats* stats) {
  rec.validate();
  if (!(cfg.window_ms > 0.0)) throw validation_error("epoch window must be positive");
  const Index m = static_cast<Index>(std::lround(cfg.window_ms / 1000.0 * rec.fs));
  if (m < 2)
    throw validation_error("epoch window of " + std::to_string(cfg.window_ms) +
                           " ms spans fewer than 2 samples at fs=" + std::to_string(rec.fs));
  const std::vector<int> rows =
      rec.channel_indices(cfg.include_eeg, cfg.include_emg, cfg.include_reference);
  if (rows.empty()) throw validation_error("epoch channel selection is empty");

  std::vector<LabeledTrial> out;
  out.reserve(intervals.size());
  for (size_t k = 0; k < intervals.size(); ++k) {
    const auto& iv = intervals[k];
    long start = std::lround(iv.xmin * rec.fs);
    long stop = std::lround(iv.xmax * rec.fs);
    if (stop <= 0 || start >= static_cast<long>(rec.n_samples()))
      throw validation_error("interval " + std::to_string(k) + " [" + std::to_string(iv.xmin) +
                             ", " + std::to_string(iv.xmax) + ") lies outside the recording");
    start = std::max<long>(start, 0);
    stop = std::min<long>(stop, static_cast<long>(rec.n_samples()));
    const Index len = static_cast<Index>(stop - start);
    if (len < 2) {
      if (stats) ++stats->skipped_short;
      continue;
    }

    LabeledTrial trial;
    trial.label = iv.viseme;
    trial.sentence_id = sentence_id;
    trial.interval_index = static_cast<int>(k);
    trial.xmin = iv.xmin;
    trial.xmax = iv.xmax;
    trial.data.resize(static_cast<Index>(rows.size()), m);

    for (size_t r = 0; r < rows.size(); ++r) {
      const VecD seg = rec.data.row(rows[r]).segment(start, len).transpose();
      VecD win;
      if (cfg.mode == EpochConfig::LengthMode::Resample) {
        win = resample_linear(seg, m);
      } else {
        win = VecD::Zero(m);
        if (len >= m) {
          win = seg.segment((len - m) / 2, m);
        } else {
          win.segment((m - len) / 2, len) = seg;
        }
      }
      if (cfg.znorm) {
        const double mean = win.mean();
        const double sd = std::sqrt((win.array() - mean).square().mean());
        win = (win.array() - mean) / std::max(sd, 1e-12);
      }
      trial.data.row(static_cast<Index>(r)) = win.cast<float>().transpose();
    }
    out.push_back(std::move(trial));
    if (stats) ++stats->n_trials;
  }
  return out;
}

Dataset Dataset::from_trials(std::vector<LabeledTrial> trials, double fs, double window_ms,
                             std::vector<std::string> channel_names) {
  Dataset ds;
  ds.trials = std::move(trials);
  ds.fs = fs;
  ds.window_ms = window_ms;
  ds.channel_names = std::move(channel_names);
  if (!ds.trials.empty()) {
    ds.n_channels = ds.trials.front().data.rows();
    ds.n_samples = ds.trials.front().data.cols();
  } else {
    ds.n_channels = static_cast<Index>(ds.channel_names.size());
    ds.n_samples = 0;
  }
  ds.validate();
  return ds;
}

void Dataset::validate() const {
  if (!(fs > 0.0)) throw validation_error("dataset sampling rate must be positive");
  if (static_cast<Index>(channel_names.size()) != n_channels)
    throw validation_error("dataset channel names do not match channel count");
  for (size_t i = 0; i < trials.size(); ++i) {
    const auto& t = trials[i];
    if (t.data.rows() != n_channels || t.data.cols() != n_samples)
      throw validation_error("trial " + std::to_string(i) + " has shape " +
                             std::to_string(t.data.rows()) + "x" + std::to_string(t.data.cols()) +
                             ", expected " + std::to_string(n_channels) + "x" +
                             std::to_string(n_samples));
    if (t.label < 0 || t.label >= align::kNumVisemes)
      throw validation_error("trial " + std::to_string(i) + " has label " +
                             std::to_string(t.label) + " outside 0.." +
                             std::to_string(align::kNumVisemes - 1));
    if (!t.data.allFinite())
      throw validation_error("trial " + std::to_string(i) + " contains non-finite samples");
  }
}

std::vector<int> Dataset::label_histogram() const {
  std::vector<int> hist(align::kNumVisemes, 0);
  for (const auto& t : trials) ++hist[static_cast<size_t>(t.label)];
  return hist;
}

Split split_by_sentence(const std::vector<int>& sentence_ids, int n_test, std::uint64_t seed) {
  std::set<int> uniq(sentence_ids.begin(), sentence_ids.end());
  std::vector<int> ids(uniq.begin(), uniq.end());
  if (n_test < 0 || static_cast<size_t>(n_test) >= ids.size())
    throw validation_error("test split of " + std::to_string(n_test) +
                           " sentences out of " + std::to_string(ids.size()) + " is impossible");
  Rng rng(derive_seed(seed, "sentence-split"));
  std::shuffle(ids.begin(), ids.end(), rng);
  Split s;
  s.test_sentences.assign(ids.begin(), ids.begin() + n_test);
  s.train_sentences.assign(ids.begin() + n_test, ids.end());
  std::sort(s.test_sentences.begin(), s.test_sentences.end());
  std::sort(s.train_sentences.begin(), s.train_sentences.end());
  return s;
}

Dataset subset_by_sentences(const Dataset& ds, const std::vector<int>& sentences) {
  std::set<int> keep(sentences.begin(), sentences.end());
  std::vector<LabeledTrial> trials;
  for (const auto& t : ds.trials)
    if (keep.count(t.sentence_id)) trials.push_back(t);
  Dataset out;
  out.trials = std::move(trials);
  out.n_channels = ds.n_channels;
  out.n_samples = ds.n_samples;
  out.fs = ds.fs;
  out.window_ms = ds.window_ms;
  out.channel_names = ds.channel_names;
  out.validate();
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& base_path) {
  ds.validate();
  std::string buf;
  buf.reserve(64 + ds.trials.size() * (24 + static_cast<size_t>(ds.n_channels * ds.n_samples) * 4));
  buf.append(kMagic, 4);
  put_u32(buf, static_cast<std::uint32_t>(ds.trials.size()));
  put_u32(buf, static_cast<std::uint32_t>(ds.n_channels));
  put_u32(buf, static_cast<std::uint32_t>(ds.n_samples));
  put_f64(buf, ds.fs);
  put_f64(buf, ds.window_ms);
  put_u32(buf, static_cast<std::uint32_t>(ds.channel_names.size()));
  for (const auto& name : ds.channel_names) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
  }
  for (const auto& t : ds.trials) {
    put_i32(buf, t.label);
    put_i32(buf, t.sentence_id);
    put_i32(buf, t.interval_index);
    put_f64(buf, t.xmin);
    put_f64(buf, t.xmax);
    for (Index ch = 0; ch < ds.n_channels; ++ch)
      for (Index s = 0; s < ds.n_samples; ++s) put_f32(buf, t.data(ch, s));
  }

  std::filesystem::path vds = base_path;
  vds += ".vds";
  write_binary(vds, buf);

  nlohmann::ordered_json j;
  j["trials"] = ds.trials.size();
  j["channels"] = ds.n_channels;
  j["samples"] = ds.n_samples;
  j["fs"] = ds.fs;
  j["window_ms"] = ds.window_ms;
  j["channel_names"] = ds.channel_names;
  j["label_histogram"] = ds.label_histogram();
  std::filesystem::path manifest = base_path;
  manifest += ".manifest.json";
  write_file(manifest, j.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& vds_path) {
  const std::string buf = read_binary_str(vds_path);
  Reader r{buf, 0, vds_path.string()};
  r.need(4);
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw integrity_error(vds_path.string() + ": not a dataset file (bad magic)");
  r.pos = 4;

  const std::uint32_t n_trials = r.u32();
  const std::uint32_t n_ch = r.u32();
  const std::uint32_t n_samp = r.u32();
  Dataset ds;
  ds.n_channels = static_cast<Index>(n_ch);
  ds.n_samples = static_cast<Index>(n_samp);
  ds.fs = r.f64();
  ds.window_ms = r.f64();
  const std::uint32_t n_names = r.u32();
  if (n_names != n_ch)
    throw integrity_error(vds_path.string() + ": channel name count does not match channel count");
  for (std::uint32_t i = 0; i < n_names; ++i) ds.channel_names.push_back(r.str());

  ds.trials.reserve(n_trials);
  for (std::uint32_t i = 0; i < n_trials; ++i) {
    LabeledTrial t;
    t.label = r.i32();
    t.sentence_id = r.i32();
    t.interval_index = r.i32();
    t.xmin = r.f64();
    t.xmax = r.f64();
    t.data.resize(ds.n_channels, ds.n_samples);
    for (Index ch = 0; ch < ds.n_channels; ++ch)
      for (Index s = 0; s < ds.n_samples; ++s) t.data(ch, s) = r.f32();
    ds.trials.push_back(std::move(t));
  }
  if (r.pos != buf.size())
    throw integrity_error(vds_path.string() + ": " + std::to_string(buf.size() - r.pos) +
                          " trailing bytes after dataset payload");
  try {
    ds.validate();
  } catch (const Error& e) {
    throw integrity_error(vds_path.string() + ": " + e.what());
  }

  // Cross-check the sidecar manifest when it is present; the binary payload
  // is self-describing, so a missing manifest is not an error.
  std::filesystem::path manifest = vds_path;
  manifest.replace_extension();
  manifest += ".manifest.json";
  if (std::filesystem::exists(manifest)) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(manifest));
    } catch (const nlohmann::json::exception& e) {
      throw integrity_error(manifest.string() + ": unreadable dataset manifest: " + e.what());
    }
    auto check = [&](const char* key, long long actual) {
      if (!j.contains(key) || !j[key].is_number_integer() || j[key].get<long long>() != actual)
        throw integrity_error(manifest.string() + ": manifest `" + key +
                              "` disagrees with the dataset payload");
    };
    check("trials", static_cast<long long>(ds.trials.size()));
    check("channels", static_cast<long long>(ds.n_channels));
    check("samples", static_cast<long long>(ds.n_samples));
    if (j.contains("label_histogram") &&
        j["label_histogram"] != nlohmann::json(ds.label_histogram()))
      throw integrity_error(manifest.string() +
                            ": manifest label histogram disagrees with the dataset payload");
  }
  return ds;
}

}  // namespace viseme::data
