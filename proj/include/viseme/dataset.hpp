// Turning aligned recordings into fixed-size labeled trials. Each phoneme
// interval becomes one trial: the sample slice is resampled (or center
// crop-padded) to the configured window and z-scored per channel. Trials
// carry enough provenance (sentence id, interval position) to reassemble
// per-sentence class sequences after prediction.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "viseme/brainvision.hpp"
#include "viseme/types.hpp"
#include "viseme/viseme_map.hpp"

namespace viseme::data {

struct LabeledTrial {
  MatF data;               // channels x window samples, z-scored
  int label = 0;           // viseme class
  int sentence_id = 0;
  int interval_index = 0;  // position of the source interval within its sentence
  double xmin = 0.0;       // source interval bounds, seconds
  double xmax = 0.0;
};

struct EpochConfig {
  double window_ms = 128.0;
  bool include_eeg = true;
  bool include_emg = true;
  bool include_reference = false;
  enum class LengthMode { Resample, CropPad } mode = LengthMode::Resample;
  bool znorm = true;
};

struct EpochStats {
  int n_trials = 0;
  int skipped_short = 0;  // intervals spanning fewer than 2 samples
};

// One trial per interval, in interval order. Intervals are clipped to the
// recording; those left with fewer than 2 samples are skipped and counted.
std::vector<LabeledTrial> extract_epochs(const io::Recording& rec,
                                         const std::vector<align::VisemeInterval>& intervals,
                                         int sentence_id, const EpochConfig& cfg,
                                         EpochStats* stats = nullptr);

// Endpoint-inclusive linear interpolation onto m points; identity when
// m == x.size(). Exact on affine inputs up to rounding.
VecD resample_linear(const VecD& x, Index m);

struct Dataset {
  std::vector<LabeledTrial> trials;
  Index n_channels = 0;
  Index n_samples = 0;
  double fs = 0.0;
  double window_ms = 0.0;
  std::vector<std::string> channel_names;

  static Dataset from_trials(std::vector<LabeledTrial> trials, double fs, double window_ms,
                             std::vector<std::string> channel_names);
  void validate() const;  // uniform shapes, finite data, labels in range
  std::vector<int> label_histogram() const;
};

struct Split {
  std::vector<int> train_sentences;  // sorted
  std::vector<int> test_sentences;   // sorted
};

// Deterministic sentence-level split: unique ids are sorted, shuffled with
// the seeded generator, and the first n_test become the test set. Trials of
// one sentence never straddle the boundary.
Split split_by_sentence(const std::vector<int>& sentence_ids, int n_test, std::uint64_t seed);

Dataset subset_by_sentences(const Dataset& ds, const std::vector<int>& sentences);

// Writes <base>.vds (binary) and <base>.manifest.json (shape, label counts).
void save_dataset(const Dataset& ds, const std::filesystem::path& base_path);
Dataset load_dataset(const std::filesystem::path& vds_path);

}  // namespace viseme::data
