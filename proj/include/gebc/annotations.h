#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gebc {

enum class CaptionType { kSubject = 0, kBefore = 1, kAfter = 2 };

inline constexpr std::array<CaptionType, 3> kCaptionTypes = {
    CaptionType::kSubject, CaptionType::kBefore, CaptionType::kAfter};

std::string_view caption_type_name(CaptionType type);
std::optional<CaptionType> parse_caption_type(std::string_view name);

struct CaptionTriple {
  std::string subject;
  std::string status_before;
  std::string status_after;

  const std::string& get(CaptionType type) const;
  std::string& get(CaptionType type);
  bool operator==(const CaptionTriple&) const = default;
};

struct TimeBox {
  double start_sec = 0.0;
  double end_sec = 0.0;
  bool operator==(const TimeBox&) const = default;
};

struct BoundaryAnnotation {
  std::string boundary_id;
  double timestamp_sec = 0.0;
  TimeBox time_box;
  // True when the box came from the file rather than the neighbour rule.
  bool explicit_box = false;
  CaptionTriple captions;
  bool operator==(const BoundaryAnnotation&) const = default;
};

struct VideoRecord {
  std::string video_id;
  double duration_sec = 0.0;
  int num_frames = 0;
  std::vector<BoundaryAnnotation> boundaries;
  bool operator==(const VideoRecord&) const = default;
};

struct CaptionSample {
  std::string video_id;
  std::string boundary_id;
  CaptionType caption_type = CaptionType::kSubject;
  std::string target_text;
  bool operator==(const CaptionSample&) const = default;
};

struct LoadOptions {
  // Training annotations must carry three non-empty captions.
  bool require_captions = true;
};

// Parses a JSON annotation document (a top-level array of videos) and
// validates every record. Boundaries without an explicit time_box get the
// span between their neighbouring boundaries (or the video ends).
std::vector<VideoRecord> parse_annotations(std::string_view text,
                                           const LoadOptions& options = {});
std::vector<VideoRecord> load_annotations(const std::filesystem::path& path,
                                          const LoadOptions& options = {});

// Converts the official Kinetic-GEBC layout, a JSON object mapping
// video_id -> [{boundary_id, timestamp, prev_timestamp?, next_timestamp?,
// subject, status_before, status_after}], into the canonical records.
// Video duration and frame count are not part of that layout and come from
// `video_meta`: {video_id: {"duration_sec": x, "num_frames": n}}. When both
// prev_timestamp and next_timestamp are present they become an explicit time
// box; otherwise the neighbour rule applies.
std::vector<VideoRecord> convert_official_annotations(std::string_view official,
                                                      std::string_view video_meta,
                                                      const LoadOptions& options = {});

std::string serialize_annotations(const std::vector<VideoRecord>& records);
void save_annotations(const std::vector<VideoRecord>& records,
                      const std::filesystem::path& path);

// Throws InvariantViolation naming the offending video or boundary.
void validate_record(const VideoRecord& record, const LoadOptions& options = {});

// Fills time boxes of boundaries that carry no explicit box.
void assign_time_boxes(VideoRecord& record);

// 3 samples per boundary in (boundary, subject/before/after) order.
std::vector<CaptionSample> expand_samples(const VideoRecord& record);

const BoundaryAnnotation* find_boundary(const VideoRecord& record,
                                        std::string_view boundary_id);

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace gebc
