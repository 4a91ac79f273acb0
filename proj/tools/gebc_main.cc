#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gebc/commands.h"
#include "gebc/error.h"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Boundary captioning pipeline: extract features, train, caption, evaluate"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<uint64_t> seed;
  bool deterministic = false;
  std::optional<std::string> output;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run config (JSON)");
    sub->add_option("--seed", seed, "override the run seed");
    sub->add_flag("--deterministic", deterministic, "serial, bit-reproducible execution");
    sub->add_option("--output", output, "override the output directory");
  };

  std::string fixture_dir = "fixture";
  auto* fixture = app.add_subcommand("fixture", "write a synthetic desk-scale dataset and config");
  fixture->add_option("--dir", fixture_dir, "target directory");

  bool overwrite = false;
  std::vector<std::string> extract_splits;
  auto* extract = app.add_subcommand("extract", "populate the feature cache");
  add_common(extract);
  extract->add_flag("--overwrite", overwrite, "re-extract existing cache files");
  extract->add_option("--split", extract_splits, "splits to extract (default: all configured)")
      ->check(CLI::IsMember({"train", "val", "test"}));

  std::optional<std::string> resume;
  auto* train = app.add_subcommand("train", "train the adapter on the train split");
  add_common(train);
  train->add_option("--resume", resume, "checkpoint to continue from");

  std::string split = "val";
  std::optional<std::string> checkpoint;
  auto* caption = app.add_subcommand("caption", "caption every boundary of a split");
  add_common(caption);
  caption->add_option("--split", split, "split to caption")
      ->check(CLI::IsMember({"train", "val", "test"}));
  caption->add_option("--checkpoint", checkpoint, "checkpoint (default: <output>/checkpoints/last.gebk)");

  std::string predictions;
  std::optional<std::string> spice;
  auto* evaluate = app.add_subcommand("evaluate", "score predictions against a split");
  add_common(evaluate);
  evaluate->add_option("--split", split, "split to score")
      ->check(CLI::IsMember({"train", "val", "test"}));
  evaluate->add_option("--predictions", predictions, "predictions TSV")->required();
  evaluate->add_option("--spice", spice, "precomputed SPICE scores (JSON)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage errors share the invalid-configuration exit code.
    return app.exit(e) == 0 ? 0 : static_cast<int>(gebc::ErrorCode::kInvalidConfig);
  }

  try {
    if (fixture->parsed()) {
      const auto s = gebc::cmd_fixture(fixture_dir);
      std::cout << "wrote " << s.config_path.string() << "\n";
      return 0;
    }
    gebc::Overrides overrides;
    overrides.seed = seed;
    overrides.deterministic = deterministic;
    if (output) overrides.output_dir = fs::path(*output);
    const gebc::RunConfig config = gebc::resolve_config(config_path, overrides);

    if (extract->parsed()) {
      const auto s = gebc::cmd_extract(config, overwrite, extract_splits);
      std::cout << "written " << s.written << ", skipped " << s.skipped << ", repaired "
                << s.repaired << "\n";
    } else if (train->parsed()) {
      std::optional<fs::path> from;
      if (resume) from = fs::path(*resume);
      const auto s = gebc::cmd_train(config, from);
      std::cout << "trained " << s.steps << " steps over " << s.epochs << " epochs, final loss "
                << s.final_loss << "\n";
    } else if (caption->parsed()) {
      std::optional<fs::path> ckpt;
      if (checkpoint) ckpt = fs::path(*checkpoint);
      std::cout << "wrote " << gebc::cmd_caption(config, split, ckpt).string() << "\n";
    } else if (evaluate->parsed()) {
      std::optional<fs::path> spice_path;
      if (spice) spice_path = fs::path(*spice);
      const auto ev = gebc::cmd_evaluate(config, split, predictions, spice_path);
      std::cout << gebc::metrics::report_json(ev.report);
    }
  } catch (const gebc::Error& e) {
    std::cerr << "error [" << gebc::error_code_name(e.code()) << "]: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error [" << gebc::error_code_name(gebc::ErrorCode::kIoFailure)
              << "]: " << e.what() << "\n";
    return static_cast<int>(gebc::ErrorCode::kIoFailure);
  } catch (const std::exception& e) {
    std::cerr << "error [internal]: " << e.what() << "\n";
    return static_cast<int>(gebc::ErrorCode::kInternal);
  }
  return 0;
}
