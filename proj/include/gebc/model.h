#pragma once

#include <optional>
#include <vector>

#include "gebc/boundary_encoder.h"
#include "gebc/features.h"
#include "gebc/video_adapter.h"

namespace gebc {

struct ModelConfig {
  std::vector<ExtractorSpec> extractors;  // exactly one primary
  VideoAdapterConfig adapter;
  BoundaryEncoderConfig boundary;  // model_dim must equal adapter.model_dim
  bool zero_padded_rows = false;
  uint64_t seed = 0;
};

struct VideoTokens {
  VideoQueryTokens primary;                // V_0
  std::optional<VideoQueryTokens> others;  // V_1, absent without other features
};

// Primary path: positions -> boundary -> Q-former -> LM projection. Others
// path: the same over the token-axis concatenation of every other block.
VideoTokens build_video_tokens(const VideoAdapter& adapter,
                               const ProjectedFeatures& primary,
                               const std::vector<ProjectedFeatures>& others,
                               const ag::Var& boundary_embedding);

// Every trainable piece between the frozen extractors and the frozen LM.
class GebcModel {
 public:
  explicit GebcModel(const ModelConfig& config);

  // Projects every block of a prepared video to d_0.
  ProjectedFeatures project_primary(const FeatureTensor& primary) const;
  std::vector<ProjectedFeatures> project_others(const std::vector<FeatureTensor>& others) const;

  VideoTokens video_tokens(const PreparedVideo& video, const NormalizedTimeBox& box) const;

  // Adapter Q-formers and queries, LM-space projections, channel
  // projections, boundary projection and position tables. Never includes
  // extractor or LM weights.
  nn::ParameterList trainable_parameters() const;

  const ModelConfig& config() const { return config_; }
  BoundaryEncoder& boundary_encoder() { return boundary_; }
  const BoundaryEncoder& boundary_encoder() const { return boundary_; }
  VideoAdapter& adapter() { return adapter_; }
  const VideoAdapter& adapter() const { return adapter_; }
  // Indexed like the non-primary extractors in config order.
  ChannelProjection& other_projection(size_t i) { return other_projections_.at(i); }
  const std::vector<ExtractorSpec>& other_specs() const { return other_specs_; }

 private:
  ModelConfig config_;
  ExtractorSpec primary_spec_;
  std::vector<ExtractorSpec> other_specs_;
  ChannelProjection primary_projection_;
  std::vector<ChannelProjection> other_projections_;
  BoundaryEncoder boundary_;
  VideoAdapter adapter_;
};

}  // namespace gebc
