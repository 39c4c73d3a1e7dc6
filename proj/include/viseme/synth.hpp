// Synthetic corpus generator: random phoneme sentences, forced-alignment
// TextGrids, and multichannel recordings in which every viseme class carries
// a two-sinusoid signature with a class-specific spatial mixing pattern,
// buried in pink noise at a configurable SNR plus a 60 Hz line component.
// Everything is a pure function of the config, so the full pipeline can be
// tested against known ground truth.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "viseme/brainvision.hpp"
#include "viseme/sequence.hpp"
#include "viseme/textgrid.hpp"
#include "viseme/viseme_map.hpp"

namespace viseme::synth {

struct SynthConfig {
  int n_sentences = 474;
  // Content phonemes per sentence; one silence interval is added at each end.
  int min_phonemes = 18;
  int max_phonemes = 38;
  double fs = 1000.0;
  int n_eeg = 16;  // EEG-cap rows, one of which is the reference electrode
  int n_emg = 4;
  double snr_db = 20.0;
  double line_noise_amp = 20.0;  // µV
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthSentence {
  int id = 0;
  align::PhonemeTier tier;          // boundary silences included
  std::vector<int> viseme_sequence; // one class per interval, in order
};

struct SynthCorpus {
  SynthConfig cfg;
  std::vector<SynthSentence> sentences;
  seq::SentenceCatalog catalog;  // ground truth over all sentences
};

// Signature frequencies of a viseme class, Hz. Class 0 is rendered as noise
// only; its nominal pair is still reported for completeness.
std::pair<double, double> class_freqs(int viseme);

// Per-channel gain of one class sinusoid (component 0 or 1): seeded uniform
// in [0.5, 1.5], tripled on EMG rows, zero on the reference row. The two
// components get independent patterns, so the across-channel power ratio of
// the tone pair identifies the class even after per-channel normalization
// or time-axis resampling.
VecD class_mixing(int viseme, int component, const SynthConfig& cfg);

SynthCorpus gen_corpus(const SynthConfig& cfg);

// Renders one sentence: class signatures + unit-variance pink noise scaled
// for snr_db + line noise. Markers carry one stimulus entry per interval.
io::BrainVisionData render_recording(const SynthSentence& s, const SynthConfig& cfg);

struct EmitResult {
  std::vector<std::filesystem::path> headers;    // one .vhdr per sentence
  std::vector<std::filesystem::path> textgrids;  // parallel to headers
  std::filesystem::path catalog_path;
  std::filesystem::path corpus_path;  // corpus manifest
};

// Writes recordings/, alignments/, catalog.json and corpus.json under
// out_dir (created if missing). Recordings are float32 so a read-back
// reproduces the rendered samples exactly.
EmitResult emit(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace viseme::synth
