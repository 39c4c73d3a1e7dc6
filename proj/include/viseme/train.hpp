// Training loop, checkpoint I/O, batched inference, and finite-difference
// gradient verification for the decoding network. Training is sequential
// and fully seeded: the same config and dataset give bit-identical
// parameters on every run.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "viseme/dataset.hpp"
#include "viseme/model.hpp"

namespace viseme::decode {

struct TrainConfig {
  int epochs = 2;
  Index batch_size = 32;
  std::string optimizer = "sgd";  // "sgd" (heavy-ball) or "adam"
  double lr = 0.05;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;  // global L2 clip; 0 disables
  LossWeights weights;
  std::uint64_t seed = 1234;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double loss = 0.0;
  double loss_ddpm = 0.0;
  double loss_ae = 0.0;
  double loss_cls = 0.0;
  double train_top1 = 0.0;
  int n_batches = 0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  Index n_params = 0;
};

// Trials at the given indices side by side: (C, idx.size() * window).
MatF make_batch(const data::Dataset& ds, const std::vector<int>& idx);

TrainResult train_model(const VisemeNet<float>& net, VecF& theta, const data::Dataset& train,
                        const TrainConfig& cfg, const DiffusionSchedule& sched,
                        const std::function<void(const EpochLog&)>& on_epoch = {});

// Deterministic inference: every trial is diffused to step 1 with zero
// noise before entering the denoiser. Returns (n_classes, n_trials).
MatF predict_logits(const VisemeNet<float>& net, const VecF& theta, const data::Dataset& ds,
                    const DiffusionSchedule& sched, Index batch_size = 64);

// Indices of the k largest entries; equal logits rank the lower class first.
std::vector<int> top_k(const VecF& logits, int k);

void save_checkpoint(const std::filesystem::path& path, const ModelArch& arch, const VecF& theta,
                     const nlohmann::json& extra = nlohmann::json::object());

struct Checkpoint {
  ModelArch arch;
  VecF theta;
  nlohmann::json extra;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct GradCheckResult {
  double max_rel_err = 0.0;
  Index n_checked = 0;
};

// Central differences in double on a parameter subsample (n_probes == 0
// checks every parameter). Probes are spread across all tensors so no layer
// goes unchecked. Relative error uses |a - b| / max(|a| + |b|, 1e-8).
GradCheckResult grad_check_se(Index channels, Index len, Index batch, Index n_probes,
                              std::uint64_t seed, double h = 1e-5);
GradCheckResult grad_check_kan(Index in, Index out, Index batch, Index n_probes,
                               std::uint64_t seed, double h = 1e-5);
GradCheckResult grad_check_model(const ModelArch& arch, Index batch, Index n_probes,
                                 std::uint64_t seed, double h = 1e-5);

}  // namespace viseme::decode
