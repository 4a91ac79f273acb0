#include "gebc/annotations.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <unistd.h>

#include "gebc/error.h"
#include "json.hpp"

namespace gebc {

using nlohmann::json;

std::string_view caption_type_name(CaptionType type) {
  switch (type) {
    case CaptionType::kSubject: return "subject";
    case CaptionType::kBefore: return "before";
    case CaptionType::kAfter: return "after";
  }
  return "unknown";
}

std::optional<CaptionType> parse_caption_type(std::string_view name) {
  for (CaptionType t : kCaptionTypes) {
    if (caption_type_name(t) == name) return t;
  }
  return std::nullopt;
}

const std::string& CaptionTriple::get(CaptionType type) const {
  switch (type) {
    case CaptionType::kSubject: return subject;
    case CaptionType::kBefore: return status_before;
    case CaptionType::kAfter: return status_after;
  }
  return subject;
}

std::string& CaptionTriple::get(CaptionType type) {
  return const_cast<std::string&>(std::as_const(*this).get(type));
}

namespace {

std::string line_context(std::string_view text, size_t byte) {
  size_t line = 1, col = 1;
  for (size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

void warn_unknown_keys(const json& obj, std::initializer_list<std::string_view> known,
                       const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      std::cerr << "warning: ignoring unknown key '" << it.key() << "' in " << where
                << "\n";
    }
  }
}

template <typename T>
T require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw MalformedAnnotation(where + ": missing required key '" + key + "'");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw MalformedAnnotation(where + ": key '" + key + "' has the wrong type");
  }
}

BoundaryAnnotation parse_boundary(const json& b, const std::string& where) {
  if (!b.is_object()) throw MalformedAnnotation(where + ": boundary must be an object");
  warn_unknown_keys(b, {"boundary_id", "timestamp_sec", "time_box", "captions"}, where);
  BoundaryAnnotation out;
  out.boundary_id = require<std::string>(b, "boundary_id", where);
  const std::string here = where + " boundary '" + out.boundary_id + "'";
  out.timestamp_sec = require<double>(b, "timestamp_sec", here);
  if (b.contains("time_box") && !b.at("time_box").is_null()) {
    const json& box = b.at("time_box");
    if (!box.is_array() || box.size() != 2 || !box[0].is_number() || !box[1].is_number()) {
      throw MalformedAnnotation(here + ": time_box must be [start, end]");
    }
    out.time_box = {box[0].get<double>(), box[1].get<double>()};
    out.explicit_box = true;
  }
  const json captions = b.contains("captions") ? b.at("captions") : json::object();
  if (!captions.is_object()) throw MalformedAnnotation(here + ": captions must be an object");
  warn_unknown_keys(captions, {"subject", "status_before", "status_after"}, here);
  auto text = [&](const char* key) -> std::string {
    if (!captions.contains(key) || captions.at(key).is_null()) return {};
    if (!captions.at(key).is_string()) {
      throw MalformedAnnotation(here + ": caption '" + key + "' must be a string");
    }
    return captions.at(key).get<std::string>();
  };
  out.captions = {text("subject"), text("status_before"), text("status_after")};
  return out;
}

}  // namespace

void assign_time_boxes(VideoRecord& record) {
  auto& bs = record.boundaries;
  for (size_t i = 0; i < bs.size(); ++i) {
    if (bs[i].explicit_box) continue;
    const double start = i == 0 ? 0.0 : bs[i - 1].timestamp_sec;
    const double end = i + 1 == bs.size() ? record.duration_sec : bs[i + 1].timestamp_sec;
    bs[i].time_box = {start, end};
  }
}

void validate_record(const VideoRecord& record, const LoadOptions& options) {
  const std::string v = "video '" + record.video_id + "'";
  if (record.video_id.empty()) throw InvariantViolation("video with empty video_id");
  if (!(record.duration_sec > 0.0)) {
    throw InvariantViolation(v + ": duration_sec must be positive");
  }
  if (record.num_frames < 1) throw InvariantViolation(v + ": num_frames must be >= 1");
  std::set<std::string> ids;
  for (size_t i = 0; i < record.boundaries.size(); ++i) {
    const auto& b = record.boundaries[i];
    const std::string where = v + " boundary '" + b.boundary_id + "'";
    if (b.boundary_id.empty()) throw InvariantViolation(v + ": boundary with empty boundary_id");
    if (!ids.insert(b.boundary_id).second) {
      throw InvariantViolation(where + ": duplicate boundary_id");
    }
    if (b.timestamp_sec < 0.0 || b.timestamp_sec > record.duration_sec) {
      throw InvariantViolation(where + ": timestamp " + std::to_string(b.timestamp_sec) +
                               " lies outside [0, " + std::to_string(record.duration_sec) +
                               "]");
    }
    if (i > 0 && !(b.timestamp_sec > record.boundaries[i - 1].timestamp_sec)) {
      throw InvariantViolation(where + ": timestamps must be strictly increasing");
    }
    const auto& box = b.time_box;
    if (box.start_sec < 0.0 || box.end_sec > record.duration_sec) {
      throw InvariantViolation(where + ": time box outside [0, duration]");
    }
    if (!(box.start_sec <= b.timestamp_sec && b.timestamp_sec <= box.end_sec)) {
      throw InvariantViolation(where + ": time box does not contain the timestamp");
    }
    if (options.require_captions) {
      for (CaptionType t : kCaptionTypes) {
        if (b.captions.get(t).empty()) {
          throw InvariantViolation(where + ": empty " + std::string(caption_type_name(t)) +
                                   " caption");
        }
      }
    }
  }
}

std::vector<VideoRecord> parse_annotations(std::string_view text, const LoadOptions& options) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw MalformedAnnotation("syntax error at " + line_context(text, e.byte) + ": " +
                              e.what());
  }
  if (!doc.is_array()) throw MalformedAnnotation("top level must be a list of videos");

  std::vector<VideoRecord> records;
  records.reserve(doc.size());
  for (size_t i = 0; i < doc.size(); ++i) {
    const json& v = doc[i];
    std::string where = "record " + std::to_string(i);
    if (!v.is_object()) throw MalformedAnnotation(where + ": video must be an object");
    VideoRecord r;
    r.video_id = require<std::string>(v, "video_id", where);
    where += " (video '" + r.video_id + "')";
    warn_unknown_keys(v, {"video_id", "duration_sec", "num_frames", "boundaries"}, where);
    r.duration_sec = require<double>(v, "duration_sec", where);
    r.num_frames = require<int>(v, "num_frames", where);
    const json bs = v.contains("boundaries") ? v.at("boundaries") : json::array();
    if (!bs.is_array()) throw MalformedAnnotation(where + ": boundaries must be a list");
    for (const json& b : bs) r.boundaries.push_back(parse_boundary(b, where));
    assign_time_boxes(r);
    validate_record(r, options);
    records.push_back(std::move(r));
  }
  std::sort(records.begin(), records.end(),
            [](const VideoRecord& a, const VideoRecord& b) { return a.video_id < b.video_id; });
  for (size_t i = 1; i < records.size(); ++i) {
    if (records[i].video_id == records[i - 1].video_id) {
      throw InvariantViolation("duplicate video_id '" + records[i].video_id + "'");
    }
  }
  return records;
}

std::vector<VideoRecord> load_annotations(const std::filesystem::path& path,
                                          const LoadOptions& options) {
  return parse_annotations(read_file(path), options);
}

std::vector<VideoRecord> convert_official_annotations(std::string_view official,
                                                      std::string_view video_meta,
                                                      const LoadOptions& options) {
  json src, meta;
  try {
    src = json::parse(official.begin(), official.end());
  } catch (const json::parse_error& e) {
    throw MalformedAnnotation("official annotations: syntax error at " +
                              line_context(official, e.byte));
  }
  try {
    meta = json::parse(video_meta.begin(), video_meta.end());
  } catch (const json::parse_error& e) {
    throw MalformedAnnotation("video metadata: syntax error at " +
                              line_context(video_meta, e.byte));
  }
  if (!src.is_object() || !meta.is_object()) {
    throw MalformedAnnotation("official layout and metadata must be JSON objects");
  }
  std::vector<VideoRecord> records;
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string where = "video '" + it.key() + "'";
    if (!meta.contains(it.key())) {
      throw MalformedAnnotation(where + ": no duration/num_frames in video metadata");
    }
    VideoRecord r;
    r.video_id = it.key();
    r.duration_sec = require<double>(meta.at(it.key()), "duration_sec", where);
    r.num_frames = require<int>(meta.at(it.key()), "num_frames", where);
    if (!it.value().is_array()) throw MalformedAnnotation(where + ": expected a list");
    for (const json& b : it.value()) {
      BoundaryAnnotation out;
      out.boundary_id = require<std::string>(b, "boundary_id", where);
      const std::string here = where + " boundary '" + out.boundary_id + "'";
      out.timestamp_sec = require<double>(b, "timestamp", here);
      if (b.contains("prev_timestamp") && b.contains("next_timestamp")) {
        out.time_box = {require<double>(b, "prev_timestamp", here),
                        require<double>(b, "next_timestamp", here)};
        out.explicit_box = true;
      }
      out.captions = {b.value("subject", std::string{}), b.value("status_before", std::string{}),
                      b.value("status_after", std::string{})};
      r.boundaries.push_back(std::move(out));
    }
    std::sort(r.boundaries.begin(), r.boundaries.end(),
              [](const BoundaryAnnotation& a, const BoundaryAnnotation& b) {
                return a.timestamp_sec < b.timestamp_sec;
              });
    assign_time_boxes(r);
    validate_record(r, options);
    records.push_back(std::move(r));
  }
  std::sort(records.begin(), records.end(),
            [](const VideoRecord& a, const VideoRecord& b) { return a.video_id < b.video_id; });
  return records;
}

std::string serialize_annotations(const std::vector<VideoRecord>& records) {
  json doc = json::array();
  for (const auto& r : records) {
    json v;
    v["video_id"] = r.video_id;
    v["duration_sec"] = r.duration_sec;
    v["num_frames"] = r.num_frames;
    v["boundaries"] = json::array();
    for (const auto& b : r.boundaries) {
      json jb;
      jb["boundary_id"] = b.boundary_id;
      jb["timestamp_sec"] = b.timestamp_sec;
      if (b.explicit_box) jb["time_box"] = {b.time_box.start_sec, b.time_box.end_sec};
      jb["captions"] = {{"subject", b.captions.subject},
                        {"status_before", b.captions.status_before},
                        {"status_after", b.captions.status_after}};
      v["boundaries"].push_back(std::move(jb));
    }
    doc.push_back(std::move(v));
  }
  return doc.dump(2) + "\n";
}

void save_annotations(const std::vector<VideoRecord>& records,
                      const std::filesystem::path& path) {
  write_file_atomic(path, serialize_annotations(records));
}

std::vector<CaptionSample> expand_samples(const VideoRecord& record) {
  std::vector<CaptionSample> out;
  out.reserve(record.boundaries.size() * 3);
  for (const auto& b : record.boundaries) {
    for (CaptionType t : kCaptionTypes) {
      out.push_back({record.video_id, b.boundary_id, t, b.captions.get(t)});
    }
  }
  return out;
}

const BoundaryAnnotation* find_boundary(const VideoRecord& record,
                                        std::string_view boundary_id) {
  for (const auto& b : record.boundaries) {
    if (b.boundary_id == boundary_id) return &b;
  }
  return nullptr;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoFailure("write failed for " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoFailure("cannot rename into " + path.string());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoFailure("read failed for " + path.string());
  return ss.str();
}

}  // namespace gebc
