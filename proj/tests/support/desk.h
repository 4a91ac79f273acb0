#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gebc/commands.h"

namespace testing_support {

// Desk profile restricted to the first `others` non-primary extractors.
inline gebc::RunConfig desk_config(int others = 3, int steps = 8) {
  gebc::RunConfig c = gebc::desk_profile();
  std::vector<gebc::ExtractorSpec> kept;
  int n = 0;
  for (const auto& s : c.extractors) {
    if (s.kind == gebc::ExtractorKind::kPrimary || n++ < others) kept.push_back(s);
  }
  c.extractors = kept;
  c.features.steps = steps;
  return c;
}

// Pipeline plus features extracted live (no cache) for synthetic records.
struct DeskWorld {
  explicit DeskWorld(const gebc::RunConfig& config, const gebc::FixtureOptions& fixture = {})
      : pipeline(config) {
    records = gebc::synthetic_records("v", fixture);
    auto options = pipeline.encode_options(false);
    options.cache_dir.clear();
    for (const auto& r : records) {
      gebc::SyntheticFrameSource frames(r.video_id, r.num_frames, config.features.frame_dim,
                                        config.seed);
      videos[r.video_id] = std::make_shared<const gebc::PreparedVideo>(
          gebc::prepare_video(r.video_id, &frames, pipeline.extractor_ptrs(), options));
    }
  }

  // Teacher-forced caption loss of the k-th boundary's caption of `type`.
  gebc::ag::Var loss(size_t k = 0, gebc::CaptionType type = gebc::CaptionType::kSubject) const {
    const auto& r = records.at(k % records.size());
    const auto& b = r.boundaries.at((k / records.size()) % r.boundaries.size());
    const auto box = gebc::normalize_timebox(b.time_box, r.duration_sec);
    const auto tokens = pipeline.model->video_tokens(*videos.at(r.video_id), box);
    const auto prompt = gebc::build_prompt(tokens, type, b.captions.get(type), *pipeline.lm);
    return gebc::caption_loss(prompt, *pipeline.lm);
  }

  gebc::Pipeline pipeline;
  std::vector<gebc::VideoRecord> records;
  std::map<std::string, std::shared_ptr<const gebc::PreparedVideo>> videos;
};

}  // namespace testing_support
