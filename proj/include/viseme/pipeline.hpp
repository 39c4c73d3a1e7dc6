#pragma once
// Staged offline pipeline: synthesize or ingest a corpus, preprocess,
// epoch, train, predict, evaluate, reconstruct sentences, render reports.
// Every stage reads and writes versioned artifacts under a work directory,
// so stages can be rerun individually and out-of-date runs fail loudly.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "viseme/dataset.hpp"
#include "viseme/dsp.hpp"
#include "viseme/model.hpp"
#include "viseme/sequence.hpp"
#include "viseme/synth.hpp"
#include "viseme/train.hpp"

namespace viseme::pipeline {

// Which (modality, window) cell feeds sentence reconstruction.
struct ReconstructConfig {
  std::string modality = "EEG_EMG";
  double window_ms = 128.0;
  seq::SequenceModelConfig model;
};

// Full run description. Loaded from JSON; unknown keys are rejected at
// every level so typos cannot silently fall back to defaults. All stage
// seeds derive from the single master seed.
struct PipelineConfig {
  std::filesystem::path raw_dir = "corpus";  // recordings/, alignments/, catalog.json
  std::filesystem::path work_dir = "work";
  std::uint64_t seed = 0;
  std::vector<double> windows_ms = {64.0, 128.0, 256.0};
  std::vector<std::string> modalities = {"EEG_EMG", "EEG_ONLY"};
  int n_test_sentences = 50;               // held-out sentences, split by id
  std::filesystem::path viseme_map_path;   // empty selects the built-in map

  dsp::PreprocessParams filter;
  synth::SynthConfig synth;
  data::EpochConfig epoch;   // modality fields are overridden per cell
  decode::ModelArch model;   // in_channels / window are derived per cell
  decode::TrainConfig train;
  ReconstructConfig reconstruct;

  PipelineConfig();  // pins tuned training defaults (adam, 4 epochs)

  void validate() const;

  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig from_file(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;
};

// Applies one `--set key=value` override onto the raw config JSON. Keys use
// dotted paths ("train.lr"); values are parsed as JSON when they parse and
// taken as strings otherwise.
void apply_override(nlohmann::json& j, const std::string& key, const std::string& value);

enum class Stage { Synth, Ingest, Preprocess, Epoch, Train, Predict, Eval, Reconstruct, Report, All };

Stage stage_from_name(const std::string& name);  // throws config_error on unknown names
std::string stage_name(Stage s);
const std::vector<Stage>& stage_order();  // what `all` runs, in order

// Canonical file-name stem of a grid cell, e.g. "EEG_EMG_w128".
std::string cell_key(const std::string& modality, double window_ms);

// Fixed layout under a work directory.
struct WorkPaths {
  std::filesystem::path root;
  std::filesystem::path logs;          // <stage>.jsonl, one JSON object per line
  std::filesystem::path preprocessed;  // filtered recordings, float32
  std::filesystem::path datasets;      // <cell>.train.vds / <cell>.test.vds
  std::filesystem::path models;        // <cell>.ckpt
  std::filesystem::path predictions;   // <cell>.json
  std::filesystem::path eval_dir;      // <cell>.json metric reports
  std::filesystem::path ingest_manifest;
  std::filesystem::path preprocess_manifest;
  std::filesystem::path epoch_manifest;
  std::filesystem::path train_manifest;
  std::filesystem::path reconstruction;
  std::filesystem::path report_json;
  std::filesystem::path report_txt;
  std::filesystem::path report_csv;
  std::filesystem::path lock;

  static WorkPaths at(const std::filesystem::path& work_dir);
};

// Positive thread cap from VISEME_DECODE_THREADS (default 1). The cap bounds
// worker counts only; results are identical at any setting. Throws
// config_error when the variable is set but not a positive integer.
int thread_cap_from_env();

// Runs one stage, or the whole chain for Stage::All. Creates the work
// directory, holds its lock file for the duration, and appends machine
// readable progress to the stage log. Throws viseme::Error on failure;
// a missing upstream artifact names the stage that produces it.
void run(const PipelineConfig& cfg, Stage stage, int thread_cap = 1);

}  // namespace viseme::pipeline
