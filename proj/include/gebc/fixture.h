#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gebc/annotations.h"

namespace gebc {

struct FixtureOptions {
  int videos = 6;
  int boundaries_per_video = 2;
  int frames_per_video = 48;
  double fps = 4.0;
  int min_words = 2;
  int max_words = 4;
  uint64_t seed = 7;
};

// Synthetic annotation records with short captions drawn from the desk
// vocabulary. Video ids are "<prefix>_<index>".
std::vector<VideoRecord> synthetic_records(const std::string& prefix,
                                           const FixtureOptions& options = {});

}  // namespace gebc
