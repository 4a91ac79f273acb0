#include "gebc/fixture.h"

#include <random>

#include "gebc/error.h"
#include "gebc/language_model.h"

namespace gebc {

namespace {

std::string random_caption(std::mt19937_64& rng, const FixtureOptions& o) {
  const auto& words = desk_caption_words();
  std::uniform_int_distribution<int> len(o.min_words, o.max_words);
  std::uniform_int_distribution<size_t> pick(0, words.size() - 1);
  std::string out;
  const int n = len(rng);
  for (int i = 0; i < n; ++i) {
    if (i > 0) out += ' ';
    out += words[pick(rng)];
  }
  return out;
}

}  // namespace

std::vector<VideoRecord> synthetic_records(const std::string& prefix,
                                           const FixtureOptions& o) {
  if (o.videos < 0 || o.boundaries_per_video < 1 || o.frames_per_video < 1 || o.fps <= 0.0 ||
      o.min_words < 1 || o.max_words < o.min_words) {
    throw InvalidConfig("invalid fixture options");
  }
  std::mt19937_64 rng(o.seed);
  std::vector<VideoRecord> out;
  for (int v = 0; v < o.videos; ++v) {
    VideoRecord r;
    r.video_id = prefix + "_" + std::to_string(v);
    r.num_frames = o.frames_per_video;
    r.duration_sec = o.frames_per_video / o.fps;
    const double gap = r.duration_sec / (o.boundaries_per_video + 1);
    std::uniform_real_distribution<double> jitter(-0.25 * gap, 0.25 * gap);
    for (int b = 0; b < o.boundaries_per_video; ++b) {
      BoundaryAnnotation a;
      a.boundary_id = r.video_id + "_b" + std::to_string(b);
      a.timestamp_sec = gap * (b + 1) + jitter(rng);
      a.captions = {random_caption(rng, o), random_caption(rng, o), random_caption(rng, o)};
      r.boundaries.push_back(std::move(a));
    }
    assign_time_boxes(r);
    validate_record(r);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace gebc
