#include "gebc/model.h"

#include "gebc/error.h"

namespace gebc {

VideoTokens build_video_tokens(const VideoAdapter& adapter,
                               const ProjectedFeatures& primary,
                               const std::vector<ProjectedFeatures>& others,
                               const ag::Var& boundary_embedding) {
  VideoTokens out{adapter.primary_tokens(primary, boundary_embedding), std::nullopt};
  if (!others.empty()) out.others = adapter.other_tokens(others, boundary_embedding);
  return out;
}

GebcModel::GebcModel(const ModelConfig& config) : config_(config) {
  bool have_primary = false;
  for (const auto& spec : config.extractors) {
    if (spec.kind == ExtractorKind::kPrimary) {
      if (have_primary) throw InvalidConfig("exactly one primary extractor is allowed");
      primary_spec_ = spec;
      have_primary = true;
    } else {
      other_specs_.push_back(spec);
    }
  }
  if (!have_primary) throw InvalidConfig("a primary extractor must be configured");
  const int d0 = config.adapter.model_dim;
  if (primary_spec_.channels != d0) {
    throw InvalidConfig("primary extractor channels (" + std::to_string(primary_spec_.channels) +
                        ") must equal d_0 (" + std::to_string(d0) + ")");
  }
  if (config.boundary.model_dim != d0) {
    throw InvalidConfig("boundary encoder width must equal d_0");
  }

  // Construction order fixes the parameter stream; keep it stable.
  nn::Initializer init(config.seed);
  primary_projection_ = ChannelProjection::passthrough(d0);
  for (const auto& spec : other_specs_) {
    other_projections_.emplace_back(spec.channels, d0, init);
  }
  boundary_ = BoundaryEncoder(config.boundary, init);
  adapter_ = VideoAdapter(config.adapter, !other_specs_.empty(), init);
}

ProjectedFeatures GebcModel::project_primary(const FeatureTensor& primary) const {
  return {primary_projection_.forward(ag::constant(primary.data)), primary.steps,
          primary.tokens};
}

std::vector<ProjectedFeatures> GebcModel::project_others(
    const std::vector<FeatureTensor>& others) const {
  if (others.size() != other_projections_.size()) {
    throw ShapeMismatch("expected " + std::to_string(other_projections_.size()) +
                        " other feature blocks, got " + std::to_string(others.size()));
  }
  std::vector<ProjectedFeatures> out;
  out.reserve(others.size());
  for (size_t i = 0; i < others.size(); ++i) {
    out.push_back({other_projections_[i].forward(ag::constant(others[i].data),
                                                 &others[i].row_weight,
                                                 config_.zero_padded_rows),
                   others[i].steps, others[i].tokens});
  }
  return out;
}

VideoTokens GebcModel::video_tokens(const PreparedVideo& video,
                                    const NormalizedTimeBox& box) const {
  const ag::Var emb = boundary_.encode(box);
  return build_video_tokens(adapter_, project_primary(video.primary),
                            project_others(video.others), emb);
}

nn::ParameterList GebcModel::trainable_parameters() const {
  nn::ParameterList out;
  for (size_t i = 0; i < other_projections_.size(); ++i) {
    other_projections_[i].collect("projection." + other_specs_[i].name, out);
  }
  boundary_.collect("boundary", out);
  adapter_.collect("adapter", out);
  return out;
}

}  // namespace gebc
