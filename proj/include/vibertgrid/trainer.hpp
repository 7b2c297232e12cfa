// SPDX-License-Identifier: Apache-2.0
//
// Joint training: multi-scale augmentation, per-document losses with random
// and OHEM batches, one AdamW step on the transformer group and one SGD step
// on the CNN-and-heads group per batch, checkpoints and inference.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "vibertgrid/checkpoint.hpp"
#include "vibertgrid/config.hpp"
#include "vibertgrid/evalkit.hpp"
#include "vibertgrid/model.hpp"
#include "vibertgrid/optim.hpp"
#include "vibertgrid/sampler.hpp"

namespace vbg {

/// Rescales the image to new_height x new_width; quads scale per axis.
Document resize_document(const Document& doc, int new_height, int new_width);

/// Size after scaling the shorter side to `shorter`, reduced so the longer
/// side does not exceed `max_long` (<= 0 disables the cap).
std::pair<int, int> scaled_size(int height, int width, int shorter, int max_long);

/// Training augmentation: shorter side drawn uniformly from `scales`.
Document multiscale_resize(const Document& doc, const std::vector<int>& scales, int max_long, Rng& rng);

/// Inference resize to a fixed shorter side.
Document inference_resize(const Document& doc, int shorter_side);

struct LossReport {
  std::int64_t step = 0;
  int epoch = 0;
  double l1 = 0, l2 = 0, lc = 0, laux1 = 0, laux2 = 0, laux = 0, loss = 0;
  double lr_t = 0, lr_v = 0;
  bool skipped = false;
  std::vector<std::string> skipped_documents;
};

struct DocumentLosses {
  ForwardResult forward;
  SampleBatch batch;
  WordLosses word;
  AuxLosses aux;
  torch::Tensor total;
};

/// Random batches plus OHEM batches ranked by this forward pass.
SampleBatch sample_training_batch(const Document& doc, const ForwardResult& fwd, const SamplingConfig& counts,
                                  int num_fields, Rng& rng);

/// Full per-document pipeline on an already resized document. With `fixed`,
/// the given batch is used instead of sampling.
DocumentLosses document_losses(ViBERTgrid& model, const Document& doc, const Vocab& vocab, const TrainConfig& cfg,
                               Rng& rng, const SampleBatch* fixed = nullptr);

struct TrainState {
  int epoch = 0;
  int step_in_epoch = 0;
  std::int64_t global_step = 0;
  Rng rng;
  GroupOptimizer transformer;
  GroupOptimizer cnn;
};

struct DocumentScores {
  std::vector<double> o1;
  std::vector<std::vector<double>> o2;
  PredictionSet labels;
};

class Trainer {
 public:
  explicit Trainer(RunConfig cfg, Vocab vocab = {});

  const RunConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  ViBERTgrid& model() { return model_; }
  ParameterPartition& partition() { return partition_; }
  TrainState& state() { return state_; }

  /// One optimizer step over `docs` at explicit rates. Documents are
  /// augmented here (multi-scale) unless `augment` is false.
  LossReport train_step(const std::vector<const Document*>& docs, const LearningRates& lr, bool augment = true);

  /// One step at the scheduled rates for the current counters.
  LossReport train_step(const std::vector<const Document*>& docs, int steps_per_epoch);

  /// Shuffles, batches and steps through `docs` once, advancing the epoch.
  std::vector<LossReport> train_epoch(const std::vector<Document>& docs,
                                      const std::function<void(const LossReport&)>& on_step = {});

  /// Called after the backward pass, before either optimizer step.
  std::function<void(Trainer&)> before_step;

  CheckpointData checkpoint() const;
  void save(const std::string& path) const;
  /// Restores weights, optimizer state, counters and RNG state. Refuses with a
  /// diff when the checkpoint's config differs from this trainer's.
  void resume(const CheckpointData& data);

  static Trainer from_checkpoint(const CheckpointData& data);

 private:
  RunConfig cfg_;
  Vocab vocab_;
  ViBERTgrid model_{nullptr};
  ParameterPartition partition_;
  TrainState state_;
};

/// Loads weights (and BN buffers) into `model` from checkpoint tensors.
void load_model_tensors(ViBERTgrid& model, const CheckpointData& data);

/// Inference at a fixed shorter side; scores are for the original word order.
DocumentScores predict_document(ViBERTgrid& model, const Document& doc, const Vocab& vocab, int shorter_side,
                                double tau1 = 0.5, double tau2 = 0.5);

struct Evaluation {
  MetricsReport words;
  FieldLevelScore fields;
  std::vector<DocumentScores> scores;
};

/// Word-level metrics and field-level F1 (with optional lexicon correction)
/// over `docs`, whose words carry ground-truth labels.
Evaluation evaluate_documents(ViBERTgrid& model, const std::vector<Document>& docs, const Vocab& vocab,
                              const RunConfig& cfg, const Lexicon* lexicon = nullptr);

struct FitOptions {
  /// Writes epoch_<NNN>.ckpt here after every epoch when non-empty.
  std::string checkpoint_dir;
  std::function<void(const LossReport&)> on_step;
  /// Receives the finished epoch count and the training-set micro F1 (-1 when not measured).
  std::function<void(int, double)> on_epoch;
};

struct FitResult {
  int epochs = 0;
  double train_f1 = -1;
  bool reached_target = false;
};

/// Runs epochs until the configured count, or until training-set micro F1
/// reaches train.target_train_f1 when that is positive.
FitResult fit(Trainer& trainer, const std::vector<Document>& docs, const FitOptions& options = {});

}  // namespace vbg
