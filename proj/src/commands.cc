#include "gebc/commands.h"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "gebc/error.h"

namespace gebc {

namespace fs = std::filesystem;

RunConfig resolve_config(const fs::path& config_path, const Overrides& overrides) {
  RunConfig c = config_path.empty() ? desk_profile() : load_config(config_path);
  if (overrides.seed) c.seed = *overrides.seed;
  c.train.seed = c.seed;
  if (overrides.deterministic) c.deterministic = true;
  if (overrides.output_dir) c.output_dir = *overrides.output_dir;
  if (const char* env = std::getenv("GEBC_CACHE_DIR"); env != nullptr && *env != '\0') {
    c.cache_dir = env;
  }
  validate(c);
  return c;
}

Pipeline::Pipeline(const RunConfig& cfg) : config(cfg) {
  validate(config);
  for (const auto& spec : config.extractors) extractors.push_back(make_extractor(spec, config.seed));
  lm = std::make_unique<TinyCausalLM>(config.lm);
  model = std::make_unique<GebcModel>(model_config(config));
}

std::vector<const Extractor*> Pipeline::extractor_ptrs() const {
  std::vector<const Extractor*> out;
  for (const auto& e : extractors) out.push_back(e.get());
  return out;
}

EncodeOptions Pipeline::encode_options(bool cache_only) const {
  EncodeOptions o;
  o.steps = config.features.steps;
  o.num_objects = config.features.num_objects;
  o.resize = config.features.resize;
  o.cache_only = cache_only;
  o.cache_dir = config.cache_dir;
  return o;
}

std::vector<VideoRecord> load_split(const RunConfig& config, const std::string& split,
                                    const LoadOptions& options) {
  auto it = config.annotations.find(split);
  if (it == config.annotations.end()) {
    throw InvalidConfig("no annotation file configured for split '" + split + "'");
  }
  return load_annotations(it->second, options);
}

std::map<std::string, std::shared_ptr<const PreparedVideo>> load_prepared(
    const Pipeline& pipeline, const std::vector<VideoRecord>& records) {
  std::map<std::string, std::shared_ptr<const PreparedVideo>> out;
  const EncodeOptions options = pipeline.encode_options(true);
  const auto extractors = pipeline.extractor_ptrs();
  for (const auto& r : records) {
    out[r.video_id] = std::make_shared<const PreparedVideo>(
        prepare_video(r.video_id, nullptr, extractors, options));
  }
  return out;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, text);
}

// Paths are made absolute so the snapshot loads the same data from anywhere.
void write_snapshot(const RunConfig& config, const std::string& command) {
  RunConfig snap = config;
  for (auto& [split, path] : snap.annotations) path = fs::absolute(path);
  snap.cache_dir = fs::absolute(snap.cache_dir);
  snap.output_dir = fs::absolute(snap.output_dir);
  write_text(config.output_dir / (command + ".config.json"), to_json(snap).dump(2) + "\n");
}

// Valid when the file decodes and matches the extractor's declared shape.
bool cache_file_valid(const fs::path& path, const ExtractorSpec& spec, int num_objects) {
  try {
    const FeatureCacheEntry e = load_features(path);
    const uint64_t tokens = spec.kind == ExtractorKind::kRegionLevel
                                ? static_cast<uint64_t>(num_objects)
                                : static_cast<uint64_t>(spec.tokens_per_frame);
    return e.extractor_name == spec.name && e.shape[0] >= 1 && e.shape[1] == tokens &&
           e.shape[2] == static_cast<uint64_t>(spec.channels);
  } catch (const CorruptCache&) {
    return false;
  }
}

void load_parameters(const nn::ParameterList& params, const Checkpoint& c) {
  for (const auto& p : params) {
    auto it = c.tensors.find("param/" + p.name);
    if (it == c.tensors.end()) throw ConfigMismatch("checkpoint lacks parameter " + p.name);
    if (it->second.rows() != p.var.rows() || it->second.cols() != p.var.cols()) {
      throw ConfigMismatch("parameter " + p.name + " has a different shape in the checkpoint");
    }
    ag::Var var = p.var;
    var.mutable_value() = it->second;
  }
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

FixtureSummary cmd_fixture(const fs::path& dir, const FixtureOptions& train, int val_videos,
                           int test_videos) {
  FixtureSummary out;
  fs::create_directories(dir / "data");
  FixtureOptions val = train, test = train;
  val.videos = val_videos;
  val.seed = train.seed + 1;
  test.videos = test_videos;
  test.seed = train.seed + 2;
  const std::map<std::string, std::pair<std::string, FixtureOptions>> splits = {
      {"train", {"train", train}}, {"val", {"val", val}}, {"test", {"test", test}}};
  nlohmann::ordered_json cfg;
  cfg["profile"] = "desk";
  for (const auto& [split, spec] : splits) {
    const fs::path rel = fs::path("data") / (split + ".json");
    save_annotations(synthetic_records(spec.first, spec.second), dir / rel);
    out.annotations[split] = dir / rel;
    cfg["data"][split] = rel.string();
  }
  cfg["data"]["cache_dir"] = "cache";
  cfg["output_dir"] = "run";
  cfg["seed"] = 0;
  out.config_path = dir / "config.json";
  write_text(out.config_path, cfg.dump(2) + "\n");
  return out;
}

ExtractSummary cmd_extract(const RunConfig& config, bool overwrite,
                           const std::vector<std::string>& splits) {
  Pipeline pipeline(config);
  std::vector<VideoRecord> videos;
  std::vector<std::string> names = splits;
  if (names.empty()) {
    for (const auto& [split, path] : config.annotations) names.push_back(split);
  }
  for (const auto& split : names) {
    for (auto& r : load_split(config, split, {false})) videos.push_back(std::move(r));
  }
  write_snapshot(config, "extract");

  ExtractSummary summary;
  std::mutex mu;
  std::atomic<size_t> next{0};
  std::exception_ptr failure;
  auto work = [&] {
    for (size_t i = next++; i < videos.size(); i = next++) {
      try {
        const VideoRecord& r = videos[i];
        const SyntheticFrameSource frames(r.video_id, r.num_frames, config.features.frame_dim,
                                          config.seed);
        for (const auto& e : pipeline.extractors) {
          const auto& spec = e->spec();
          const fs::path path = cache_path(config.cache_dir, spec.name, r.video_id);
          bool repaired = false;
          if (!overwrite && fs::exists(path)) {
            if (cache_file_valid(path, spec, config.features.num_objects)) {
              std::lock_guard lock(mu);
              ++summary.skipped;
              continue;
            }
            std::lock_guard lock(mu);
            std::cerr << "warning: re-extracting invalid cache file " << path.string() << "\n";
            repaired = true;
          }
          const FeatureCacheEntry entry = extract_raw(*e, frames, config.features.num_objects);
          fs::create_directories(path.parent_path());
          store_features(entry, path);
          std::lock_guard lock(mu);
          ++summary.written;
          if (repaired) ++summary.repaired;
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = videos.size();
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const size_t workers = config.deterministic ? 1 : std::min<size_t>(hw, videos.size());
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (size_t i = 0; i < workers; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return summary;
}

TrainSummary cmd_train(const RunConfig& config, const std::optional<fs::path>& resume) {
  Pipeline pipeline(config);
  const auto records = load_split(config, "train");
  const auto videos = load_prepared(pipeline, records);
  const auto data = make_training_set(records, videos);
  write_snapshot(config, "train");

  const uint64_t hash = config_hash(config);
  Trainer trainer(*pipeline.model, *pipeline.lm, config.train, hash);
  const fs::path log_path = config.output_dir / "train_log.csv";
  std::string log = "step,epoch,loss,lr\n";
  if (resume) {
    trainer.restore(load_checkpoint(*resume, hash));
    // Keep the rows logged before the checkpoint so the curve stays whole.
    if (fs::exists(log_path)) {
      std::istringstream in(read_file(log_path));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (!line.empty() && std::stoll(line.substr(0, line.find(','))) < trainer.step()) {
          log += line + "\n";
        }
      }
    }
  }

  TrainSummary summary;
  const fs::path ckpt_dir = config.output_dir / "checkpoints";
  fs::create_directories(ckpt_dir);
  TrainHooks hooks;
  hooks.on_step = [&](const TrainLogEntry& e) {
    log += std::to_string(e.step) + "," + std::to_string(e.epoch) + "," + format_double(e.loss) +
           "," + format_double(e.lr) + "\n";
    summary.final_loss = e.loss;
  };
  hooks.on_epoch = [&](int64_t epoch, const Checkpoint& c) {
    const fs::path p = ckpt_dir / ("epoch_" + std::to_string(epoch) + ".gebk");
    save_checkpoint(c, p);
    summary.checkpoints.push_back(p);
    write_text(log_path, log);
  };
  trainer.train(data, hooks);
  save_checkpoint(trainer.checkpoint(), ckpt_dir / "last.gebk");
  write_text(log_path, log);
  summary.steps = trainer.step();
  summary.epochs = trainer.epoch();
  return summary;
}

fs::path default_checkpoint(const RunConfig& config) {
  return config.output_dir / "checkpoints" / "last.gebk";
}

fs::path cmd_caption(const RunConfig& config, const std::string& split,
                     const std::optional<fs::path>& checkpoint) {
  Pipeline pipeline(config);
  const Checkpoint c =
      load_checkpoint(checkpoint.value_or(default_checkpoint(config)), config_hash(config));
  load_parameters(pipeline.model->trainable_parameters(), c);
  const auto records = load_split(config, split, {false});
  const auto videos = load_prepared(pipeline, records);
  write_snapshot(config, "caption");

  metrics::Predictions predictions;
  for (const auto& r : records) {
    const PreparedVideo& video = *videos.at(r.video_id);
    for (const auto& b : r.boundaries) {
      predictions[{r.video_id, b.boundary_id}] =
          caption_boundary(*pipeline.model, video, r, b, *pipeline.lm, config.decode);
    }
  }
  const fs::path out = config.output_dir / ("predictions_" + split + ".tsv");
  fs::create_directories(config.output_dir);
  metrics::write_predictions(predictions, out);
  return out;
}

metrics::Evaluation cmd_evaluate(const RunConfig& config, const std::string& split,
                                 const fs::path& predictions,
                                 const std::optional<fs::path>& spice) {
  const auto records = load_split(config, split);
  const metrics::Predictions preds = metrics::read_predictions(predictions);
  std::optional<std::array<double, 3>> spice_values;
  if (spice) {
    if (fs::exists(*spice)) {
      spice_values = metrics::read_spice(*spice);
    } else {
      std::cerr << "warning: SPICE file " << spice->string()
                << " not found; reporting avg_no_spice\n";
    }
  }
  write_snapshot(config, "evaluate");
  metrics::Evaluation ev = metrics::evaluate(preds, records, spice_values);
  write_text(config.output_dir / ("report_" + split + ".json"), metrics::report_json(ev.report));
  write_text(config.output_dir / ("breakdown_" + split + ".tsv"),
             metrics::breakdown_tsv(ev.breakdown));
  return ev;
}

}  // namespace gebc
