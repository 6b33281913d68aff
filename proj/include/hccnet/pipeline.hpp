#pragma once

// Stage runners behind the command-line tool, plus the single-step training
// functions they are built from.

#include "hccnet/checkpoint.hpp"
#include "hccnet/config.hpp"
#include "hccnet/model.hpp"
#include "hccnet/report.hpp"

#include <iosfwd>
#include <map>

namespace hccnet {

class MissingDependencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class VariantMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

ModelConfig resolve_model(const RunConfig& cfg);

// ---- backbone self-distillation ---------------------------------------------

struct DinoState {
  BackboneConfig backbone;
  DinoHeadConfig head;
  ParameterStore<float> student, teacher;
  DinoNetwork net;  // handles are valid for both stores
  AdamW<float> optimizer;
  Gradients<float> grads;
  Eigen::VectorXd center;
};

DinoState make_dino_state(const BackboneConfig& backbone, const DinoHeadConfig& head, std::uint64_t seed);

struct StepStats {
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
};

/// One step on a batch of visits: student sees all four views, teacher the
/// two global views; the student is updated, then the teacher by EMA with
/// momentum `ema_m`, then the center.
StepStats pretrain_backbone_step(DinoState& st, const std::vector<MultiCropViews>& batch, double lr, double wd,
                                 double clip, double ema_m);

// ---- sequence model ---------------------------------------------------------

struct SequenceState {
  ModelConfig config;
  ParameterStore<float> store;
  SequenceModel model;
  AdamW<float> optimizer;
  Gradients<float> grads;
  std::vector<bool> trainable;
};

/// Fresh sequence model initialized from `seed` (every tensor trainable).
SequenceState make_sequence_state(const ModelConfig& cfg, std::uint64_t seed);

/// Resets the optimizer and restricts training to tensors under `prefixes`.
void set_trainable(SequenceState& st, const std::vector<std::string>& prefixes);

/// Sequence-order prediction step on precomputed (frozen-backbone)
/// embeddings. Only encoder and pooler tensors change.
StepStats pretrain_encoder_step(SequenceState& st, const std::vector<SopBatch>& batch, double lr, double wd,
                                double clip, Rng& dropout_rng);

struct TrainingSequence {
  std::vector<Volume> visits;  // chronological, already augmented
  Eigen::VectorXd deltas;
  int label = 0;
};

/// Class-balanced, label-smoothed BCE step through the whole model.
StepStats finetune_step(SequenceState& st, const std::vector<TrainingSequence>& batch, double omega, double smoothing,
                        double lr, double wd, double clip, Rng& dropout_rng);

/// Eval-mode probability for one sequence.
double predict(const SequenceState& st, const std::vector<Volume>& visits, const Eigen::VectorXd& deltas);

// ---- checkpoint plumbing ----------------------------------------------------

/// Replicates a single-channel stem kernel over `channels` inputs, scaled by
/// 1/channels, so identical channels reproduce the single-channel response.
void inflate_stem(Checkpoint& ck, Index channels, const std::string& prefix = "backbone.stem.conv.weight");

/// Loads a checkpoint and checks its stage and variant against `cfg`.
Checkpoint load_stage_checkpoint(const std::filesystem::path& path, const std::string& stage, const RunConfig& cfg);

// ---- stage runners ----------------------------------------------------------

struct CohortSummary {
  std::size_t patients = 0;
  std::size_t positives = 0;
  std::map<std::size_t, std::size_t> visit_histogram;  // visit count -> patients
};

CohortSummary summarize_cohort(const std::vector<PatientRecord>& records);

struct CohortSplit {
  std::vector<PatientRecord> dev, test;
};

/// Loads the cohort from disk and applies the configured split.
CohortSplit load_split(const RunConfig& cfg);

/// Fine-tuning sequences (label rule + length cap) for a set of records.
std::vector<LabeledSequence> finetune_sequences(const std::vector<PatientRecord>& records, Index max_len);

CohortSummary run_gen_data(const RunConfig& cfg);
void run_pretrain_backbone(const RunConfig& cfg, std::ostream& log);
void run_pretrain_encoder(const RunConfig& cfg, std::ostream& log);
/// One checkpoint and loss CSV per seed. `baseline` trains from scratch.
void run_finetune(const RunConfig& cfg, bool baseline, std::ostream& log);
MetricsReport run_evaluate(const RunConfig& cfg, const std::string& stage, std::ostream& log);
std::vector<ComparisonRow> run_report(const RunConfig& cfg, const std::filesystem::path& baseline,
                                      const std::filesystem::path& finetuned, std::ostream& log);

std::string stage_tag(bool baseline);
std::filesystem::path seed_checkpoint(const RunConfig& cfg, const std::string& stage, std::uint64_t seed);

}  // namespace hccnet
