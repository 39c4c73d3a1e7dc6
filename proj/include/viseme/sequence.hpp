// Sentence reconstruction from per-trial viseme predictions. Predictions
// are packaged into an ordered label sequence, then resolved against a
// closed sentence catalog two ways: a Levenshtein-distance matcher (the
// deterministic baseline) and a single-layer recurrent classifier trained
// on the catalog's ground-truth sequences with substitution noise.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "viseme/nn.hpp"
#include "viseme/types.hpp"
#include "viseme/viseme_map.hpp"

namespace viseme::seq {

struct VisemeSequence {
  int sentence_id = -1;  // -1 when unknown
  std::vector<int> labels;
};

struct TrialPrediction {
  int interval_index = 0;
  int label = 0;
};

// Reorders by interval index and packages the labels verbatim: no merging,
// no smoothing. Duplicate interval indices or labels outside 0..14 are
// rejected. An empty input yields an empty sequence.
VisemeSequence assemble_sequence(std::vector<TrialPrediction> preds, int sentence_id = -1);

struct CatalogEntry {
  int id = 0;
  std::string text;
  std::vector<int> sequence;
};

struct SentenceCatalog {
  std::vector<CatalogEntry> entries;

  // Unique ids, non-empty sequences, labels in class range.
  void validate() const;
  const CatalogEntry* find(int id) const;
  bool has_duplicate_sequences() const;

  nlohmann::ordered_json to_json() const;
  static SentenceCatalog from_json(const nlohmann::json& j);
  static SentenceCatalog from_file(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// Levenshtein distance with unit insert/delete/substitute costs.
Index edit_distance(const std::vector<int>& a, const std::vector<int>& b);

struct MatchResult {
  int sentence_id = -1;
  Index distance = 0;
  // Runner-up distance minus best distance; 0 on a tie or when the catalog
  // has a single entry.
  Index margin = 0;
};

// Argmin of edit_distance over the catalog; ties go to the lower sentence
// id. Empty sequence or catalog is a validation error.
MatchResult match_closed_set(const VisemeSequence& s, const SentenceCatalog& cat);

struct SequenceModelConfig {
  Index embed_dim = 16;
  Index hidden = 128;
  int max_epochs = 150;
  // Training stops once every clean catalog sequence has classified
  // correctly for this many consecutive epochs.
  int settle_epochs = 3;
  double lr = 1e-2;
  double corruption_rate = 0.3;
  int corrupt_copies = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SequenceModel {
  SequenceModelConfig cfg;
  std::vector<int> class_ids;  // sentence id per output row
  nn::ParamLayout layout;
  VecD theta;
};

// Trains the recurrent classifier on ground-truth sequences plus corrupted
// copies. Warns (does not fail) when the catalog contains duplicate
// sequences, since those classes cannot be separated.
SequenceModel train_sequence_model(const SentenceCatalog& cat, const SequenceModelConfig& cfg,
                                   std::vector<std::string>* warnings = nullptr);

struct InferResult {
  int sentence_id = -1;
  VecD posterior;  // over class_ids order, sums to 1
};

InferResult infer_sentence(const SequenceModel& m, const VisemeSequence& s);

// Raw logits for one label sequence; exposed so tests can probe the forward
// pass directly.
VecD sequence_logits(const SequenceModel& m, const std::vector<int>& labels);

// Cross-entropy of one (sequence, target-row) pair; accumulates the
// parameter gradient when grad is non-null. Target indexes class_ids.
double sequence_loss_grad(const SequenceModel& m, const std::vector<int>& labels, Index target,
                          VecD* grad);

}  // namespace viseme::seq
