#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gebc/annotations.h"
#include "gebc/captioner.h"
#include "gebc/language_model.h"
#include "gebc/model.h"

namespace gebc {

enum class DecayShape { kCosine, kLinear };

struct TrainConfig {
  double weight_decay = 0.001;
  int batch_size = 16;
  double lr_init = 8e-5;
  double lr_min = 1e-5;
  double lr_warmup_start = 1e-6;
  int64_t warmup_steps = -1;      // < 0: warmup_fraction of the total
  double warmup_fraction = 0.1;
  int max_epochs = 5;
  int64_t max_steps = 0;          // > 0 caps the run below max_epochs
  uint64_t seed = 0;
  double grad_clip = 1.0;         // <= 0 disables clipping
  DecayShape decay = DecayShape::kCosine;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

void validate(const TrainConfig& config);

int64_t resolve_warmup_steps(int64_t total_steps, const TrainConfig& config);

// Linear ramp lr_warmup_start -> lr_init over the warmup steps, then cosine
// (or linear) decay to lr_min at total_steps.
double lr_at(int64_t step, int64_t total_steps, const TrainConfig& config);

// Decoupled weight decay Adam over a fixed parameter list.
class AdamW {
 public:
  AdamW() = default;
  AdamW(nn::ParameterList params, const TrainConfig& config);

  void step(double lr);
  int64_t steps_taken() const { return steps_; }
  const nn::ParameterList& parameters() const { return params_; }
  bool decays(const std::string& name) const;

  std::map<std::string, ag::Matrix> state() const;
  void load_state(const std::map<std::string, ag::Matrix>& tensors, int64_t steps);

 private:
  nn::ParameterList params_;
  std::vector<ag::Matrix> m_, v_;
  double weight_decay_ = 0.0, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int64_t steps_ = 0;
};

// Rescales gradients in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(const nn::ParameterList& params, double max_norm);

struct TrainingExample {
  CaptionSample sample;
  std::shared_ptr<const PreparedVideo> video;
  NormalizedTimeBox box;
};

// Expands every record into caption samples paired with their video
// features; videos missing from `videos` raise CacheMiss.
std::vector<TrainingExample> make_training_set(
    const std::vector<VideoRecord>& records,
    const std::map<std::string, std::shared_ptr<const PreparedVideo>>& videos);

struct TrainLogEntry {
  int64_t step = 0;
  int64_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct Checkpoint {
  uint64_t config_hash = 0;
  int64_t step = 0;
  int64_t epoch = 0;  // completed epochs
  // "param/<name>", "adam.m/<name>", "adam.v/<name>".
  std::map<std::string, ag::Matrix> tensors;
};

// "GEBK" container: u32 version | u64 config_hash | i64 step | i64 epoch |
// u32 count | count x (u32 name_len, name, u32 rank = 2, u64 rows, u64 cols,
// u8 dtype = 1 (f64), payload) | u64 FNV-1a of all preceding bytes.
std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
// Refuses (ConfigMismatch) when expected_hash differs unless force is set.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<uint64_t> expected_hash = std::nullopt,
                           bool force = false);

struct TrainHooks {
  // Called after the update; checkpoint() taken here resumes after it.
  std::function<void(const TrainLogEntry&)> on_step;
  // Called after each completed epoch with the trainer's fresh checkpoint.
  std::function<void(int64_t epoch, const Checkpoint&)> on_epoch;
};

class Trainer {
 public:
  Trainer(GebcModel& model, const LanguageModel& lm, const TrainConfig& config,
          uint64_t config_hash = 0);

  // Runs from the current step/epoch to the configured end.
  std::vector<TrainLogEntry> train(const std::vector<TrainingExample>& data,
                                   const TrainHooks& hooks = {});

  // Mean caption loss of one batch without touching parameters.
  double evaluate_loss(const std::vector<TrainingExample>& batch) const;

  Checkpoint checkpoint() const;
  void restore(const Checkpoint& checkpoint);

  int64_t step() const { return step_; }
  int64_t epoch() const { return epoch_; }
  int64_t total_steps(size_t dataset_size) const;
  const AdamW& optimizer() const { return optimizer_; }

 private:
  GebcModel& model_;
  const LanguageModel& lm_;
  TrainConfig config_;
  uint64_t config_hash_;
  nn::ParameterList params_;
  AdamW optimizer_;
  int64_t step_ = 0;
  int64_t epoch_ = 0;
};

// Per-epoch order: uniform shuffle seeded by (seed, epoch).
std::vector<size_t> epoch_order(size_t n, uint64_t seed, int64_t epoch);

}  // namespace gebc
