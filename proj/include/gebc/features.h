#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gebc/autograd.h"
#include "gebc/feature_cache.h"
#include "gebc/nn.h"

namespace gebc {

using ag::Matrix;

enum class ExtractorKind { kPrimary, kFrameLevel, kRegionLevel };

std::string_view extractor_kind_name(ExtractorKind kind);
std::optional<ExtractorKind> parse_extractor_kind(std::string_view name);

struct ExtractorSpec {
  std::string name;
  ExtractorKind kind = ExtractorKind::kFrameLevel;
  // Region-level extractors emit a variable count per frame; their cached
  // and padded width is the configured object cap instead.
  int tokens_per_frame = 1;
  int channels = 1;
  int stride = 1;
  std::string backend = "synthetic";
};

// Rank-3 block [steps, tokens, channels] stored as [steps * tokens, channels].
struct FeatureTensor {
  std::string extractor_name;
  int steps = 0;
  int tokens = 0;
  int channels = 0;
  Matrix data;
  std::vector<int> frame_indices;
  // Per (step, token) row: 1 where the row carries detector content, 0 for
  // zero padding. Interpolated along with the data.
  std::vector<double> row_weight;

  auto row(int step, int token) { return data.row(step * tokens + token); }
  auto row(int step, int token) const { return data.row(step * tokens + token); }
};

struct Detection {
  Eigen::VectorXd feature;
  double confidence = 0.0;
};

// One inner vector per sampled frame.
using RegionDetections = std::vector<std::vector<Detection>>;

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual int num_frames() const = 0;
  virtual std::vector<float> frame(int index) const = 0;
};

// Deterministic, temporally smooth pseudo-frames keyed by video id.
class SyntheticFrameSource : public FrameSource {
 public:
  SyntheticFrameSource(std::string_view video_id, int num_frames, int frame_dim = 24,
                       uint64_t seed = 0);

  int num_frames() const override { return num_frames_; }
  std::vector<float> frame(int index) const override;

 private:
  int num_frames_;
  Eigen::VectorXd base_, freq_, phase_;
};

class Extractor {
 public:
  explicit Extractor(ExtractorSpec spec) : spec_(std::move(spec)) {}
  virtual ~Extractor() = default;

  const ExtractorSpec& spec() const { return spec_; }
  // Dense kinds: [tokens_per_frame, channels] for one frame.
  virtual Matrix extract_frame(const std::vector<float>& frame) const;
  // Region kind: unordered detections for one frame.
  virtual std::vector<Detection> detect(const std::vector<float>& frame) const;
  // Frozen backbone weights, exposed for checksum checks only.
  virtual nn::ParameterList parameters() const { return {}; }

 private:
  ExtractorSpec spec_;
};

// Fixed-seed random projections standing in for pretrained backbones.
std::unique_ptr<Extractor> make_extractor(const ExtractorSpec& spec, uint64_t seed = 0);

std::vector<int> sample_frame_indices(int num_frames, int stride);

enum class ResizeMode { kLinear, kSubsample };

FeatureTensor temporal_resize(const FeatureTensor& f, int target_steps,
                              ResizeMode mode = ResizeMode::kLinear);

// Top `num_objects` detections per frame by descending confidence (stable on
// ties), zero rows below.
FeatureTensor pad_regions(const RegionDetections& dets, int num_objects, int channels);

// Learned affine map from an extractor's width to the shared width; the
// primary extractor passes through untouched.
class ChannelProjection {
 public:
  ChannelProjection() = default;
  static ChannelProjection passthrough(int width);
  ChannelProjection(int in, int out, nn::Initializer& init);

  // x is [rows, in]. When row_weight is given and zero_padded is set, rows
  // with zero weight are re-zeroed after the map.
  ag::Var forward(const ag::Var& x, const std::vector<double>* row_weight = nullptr,
                  bool zero_padded = false) const;
  void collect(const std::string& prefix, nn::ParameterList& out) const;

  bool is_passthrough() const { return passthrough_; }
  nn::Linear& linear() { return linear_; }
  int out_dim() const { return out_; }

 private:
  bool passthrough_ = true;
  int out_ = 0;
  nn::Linear linear_;
};

FeatureTensor project_channels(const FeatureTensor& f, const ChannelProjection& projection,
                               bool zero_padded = false);

struct EncodeOptions {
  int steps = 0;        // L
  int num_objects = 50; // N_o
  ResizeMode resize = ResizeMode::kLinear;
  bool cache_only = false;
  std::filesystem::path cache_dir;
};

std::filesystem::path cache_path(const std::filesystem::path& cache_dir,
                                 std::string_view extractor, std::string_view video_id);

// Runs an extractor over strided frames; region outputs are padded to
// num_objects. The result is what the feature cache stores.
FeatureCacheEntry extract_raw(const Extractor& extractor, const FrameSource& frames,
                              int num_objects);

// Resized, unprojected features for one video.
struct PreparedVideo {
  std::string video_id;
  FeatureTensor primary;
  std::vector<FeatureTensor> others;
};

// sample -> extract (or cache load) -> pad -> resize. `frames` may be null in
// cache-only mode.
PreparedVideo prepare_video(std::string_view video_id, const FrameSource* frames,
                            const std::vector<const Extractor*>& extractors,
                            const EncodeOptions& options);

struct EncodedVideo {
  FeatureTensor primary;
  std::vector<FeatureTensor> others;
};

// prepare_video followed by per-extractor channel projection.
EncodedVideo encode_video(std::string_view video_id, const FrameSource* frames,
                          const std::vector<const Extractor*>& extractors,
                          const std::vector<const ChannelProjection*>& projections,
                          const EncodeOptions& options, bool zero_padded = false);

}  // namespace gebc
