#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gebc/config.h"
#include "gebc/fixture.h"
#include "gebc/metrics.h"

namespace gebc {

// Command-line overrides applied on top of the config file.
struct Overrides {
  std::optional<uint64_t> seed;
  bool deterministic = false;
  std::optional<std::filesystem::path> output_dir;
};

// Profile defaults < config file < overrides < GEBC_CACHE_DIR, then
// validation. An empty path means the desk profile alone.
RunConfig resolve_config(const std::filesystem::path& config_path, const Overrides& overrides);

// Extractors, stub LM and model built from a validated config.
struct Pipeline {
  explicit Pipeline(const RunConfig& config);

  RunConfig config;
  std::vector<std::unique_ptr<Extractor>> extractors;
  std::unique_ptr<TinyCausalLM> lm;
  std::unique_ptr<GebcModel> model;

  std::vector<const Extractor*> extractor_ptrs() const;
  EncodeOptions encode_options(bool cache_only) const;
};

std::vector<VideoRecord> load_split(const RunConfig& config, const std::string& split,
                                    const LoadOptions& options = {});

// Cached features only; a missing file raises CacheMiss naming it.
std::map<std::string, std::shared_ptr<const PreparedVideo>> load_prepared(
    const Pipeline& pipeline, const std::vector<VideoRecord>& records);

struct FixtureSummary {
  std::filesystem::path config_path;
  std::map<std::string, std::filesystem::path> annotations;
};

// Writes synthetic train/val/test annotations and a desk-profile config
// pointing at them into `dir`.
FixtureSummary cmd_fixture(const std::filesystem::path& dir, const FixtureOptions& train = {},
                           int val_videos = 5, int test_videos = 2);

struct ExtractSummary {
  int written = 0;
  int skipped = 0;
  int repaired = 0;  // corrupt or mismatched files re-extracted
};

// One GEBF file per (video, extractor) over the given splits (all
// configured splits when empty).
ExtractSummary cmd_extract(const RunConfig& config, bool overwrite,
                           const std::vector<std::string>& splits = {});

struct TrainSummary {
  int64_t steps = 0;
  int64_t epochs = 0;
  double final_loss = 0.0;
  std::vector<std::filesystem::path> checkpoints;
};

// Writes train.config.json, train_log.csv ("step,epoch,loss,lr") and
// checkpoints/epoch_<k>.gebk plus checkpoints/last.gebk under output_dir.
TrainSummary cmd_train(const RunConfig& config,
                       const std::optional<std::filesystem::path>& resume = std::nullopt);

std::filesystem::path default_checkpoint(const RunConfig& config);

// Writes predictions_<split>.tsv under output_dir and returns its path.
std::filesystem::path cmd_caption(const RunConfig& config, const std::string& split,
                                  const std::optional<std::filesystem::path>& checkpoint =
                                      std::nullopt);

// Writes report_<split>.json and breakdown_<split>.tsv under output_dir.
metrics::Evaluation cmd_evaluate(const RunConfig& config, const std::string& split,
                                 const std::filesystem::path& predictions,
                                 const std::optional<std::filesystem::path>& spice = std::nullopt);

}  // namespace gebc
