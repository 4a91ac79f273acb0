#include "gebc/video_adapter.h"

#include "gebc/boundary_encoder.h"
#include "gebc/error.h"

namespace gebc {

void validate(const VideoQFormerConfig& c) {
  if (c.num_query_tokens < 1 || c.hidden_dim < 1 || c.num_layers < 1 || c.num_heads < 1 ||
      c.feedforward_dim < 1) {
    throw InvalidConfig("video Q-former dimensions must all be positive");
  }
  if (c.hidden_dim % c.num_heads != 0) {
    throw InvalidConfig("video Q-former hidden_dim " + std::to_string(c.hidden_dim) +
                        " is not divisible by num_heads " + std::to_string(c.num_heads));
  }
}

VideoQFormer::VideoQFormer(const VideoQFormerConfig& config, nn::Initializer& init)
    : config_(config) {
  validate(config);
  const int d = config.hidden_dim;
  queries_ = ag::Var(init.normal(config.num_query_tokens, d, 0.02), true);
  input_norm_ = nn::LayerNorm(d, init, true);
  for (int i = 0; i < config.num_layers; ++i) {
    Layer layer;
    layer.self_attn = nn::MultiHeadAttention(d, d, config.num_heads, init, true);
    layer.self_norm = nn::LayerNorm(d, init, true);
    layer.cross_attn = nn::MultiHeadAttention(d, d, config.num_heads, init, true);
    layer.cross_norm = nn::LayerNorm(d, init, true);
    layer.ffn = nn::FeedForward(d, config.feedforward_dim, init, true);
    layer.ffn_norm = nn::LayerNorm(d, init, true);
    layers_.push_back(std::move(layer));
  }
}

ag::Var VideoQFormer::forward(const ag::Var& features) const {
  if (features.rows() < 1 || features.cols() != config_.hidden_dim) {
    throw ShapeMismatch("video Q-former expects [n >= 1, " +
                        std::to_string(config_.hidden_dim) + "] features");
  }
  ag::Var x = input_norm_.forward(queries_);
  for (const auto& layer : layers_) {
    x = layer.self_norm.forward(ag::add(x, layer.self_attn.forward(x, x)));
    x = layer.cross_norm.forward(ag::add(x, layer.cross_attn.forward(x, features)));
    x = layer.ffn_norm.forward(ag::add(x, layer.ffn.forward(x)));
  }
  return x;
}

void VideoQFormer::collect(const std::string& prefix, nn::ParameterList& out) const {
  out.push_back({prefix + ".query_embeddings", queries_, true});
  input_norm_.collect(prefix + ".input_norm", out);
  for (size_t i = 0; i < layers_.size(); ++i) {
    const std::string p = prefix + ".layer" + std::to_string(i);
    layers_[i].self_attn.collect(p + ".self_attn", out);
    layers_[i].self_norm.collect(p + ".self_norm", out);
    layers_[i].cross_attn.collect(p + ".cross_attn", out);
    layers_[i].cross_norm.collect(p + ".cross_norm", out);
    layers_[i].ffn.collect(p + ".ffn", out);
    layers_[i].ffn_norm.collect(p + ".ffn_norm", out);
  }
}

PositionTable::PositionTable(int max_steps, int dim, nn::Initializer& init, double stddev)
    : table_(init.normal(max_steps, dim, stddev), true) {}

ag::Var PositionTable::add(const ag::Var& features, int steps, int tokens) const {
  if (steps > table_.rows()) {
    throw PositionOverflow("sequence of " + std::to_string(steps) +
                           " steps exceeds the position table (" +
                           std::to_string(table_.rows()) + ")");
  }
  if (features.rows() != static_cast<Eigen::Index>(steps) * tokens ||
      features.cols() != table_.cols()) {
    throw ShapeMismatch("features do not match [steps * tokens, d_0]");
  }
  const ag::Var rows = ag::slice_rows(table_, 0, steps);
  return ag::add(features, tokens == 1 ? rows : ag::repeat_rows_each(rows, tokens));
}

void PositionTable::collect(const std::string& prefix, nn::ParameterList& out) const {
  out.push_back({prefix, table_, true});
}

ProjectedFeatures concat_tokens(const std::vector<ProjectedFeatures>& blocks) {
  if (blocks.empty()) throw ShapeMismatch("no feature blocks to concatenate");
  if (blocks.size() == 1) return blocks.front();
  const int steps = blocks.front().steps;
  int tokens = 0;
  for (const auto& b : blocks) {
    if (b.steps != steps) throw ShapeMismatch("feature blocks disagree on step count");
    tokens += b.tokens;
  }
  std::vector<ag::Var> parts;
  parts.reserve(static_cast<size_t>(steps) * blocks.size());
  for (int t = 0; t < steps; ++t) {
    for (const auto& b : blocks) {
      parts.push_back(ag::slice_rows(b.data, static_cast<Eigen::Index>(t) * b.tokens, b.tokens));
    }
  }
  return {ag::concat_rows(parts), steps, tokens};
}

VideoAdapter::VideoAdapter(const VideoAdapterConfig& config, bool with_others,
                           nn::Initializer& init)
    : config_(config), with_others_(with_others) {
  if (config.max_steps < 1 || config.lm_dim < 1) {
    throw InvalidConfig("adapter max_steps and lm_dim must be positive");
  }
  VideoQFormerConfig qc{config.primary_queries, config.model_dim, config.num_layers,
                        config.num_heads, config.feedforward_dim};
  primary_positions_ = PositionTable(config.max_steps, config.model_dim, init);
  primary_qformer_ = VideoQFormer(qc, init);
  primary_to_lm_ = nn::Linear(config.model_dim, config.lm_dim, init, true);
  if (with_others) {
    qc.num_query_tokens = config.other_queries;
    other_positions_ = PositionTable(config.max_steps, config.model_dim, init);
    other_qformer_ = VideoQFormer(qc, init);
    other_to_lm_ = nn::Linear(config.model_dim, config.lm_dim, init, true);
  }
}

VideoQueryTokens VideoAdapter::primary_tokens(const ProjectedFeatures& primary,
                                              const ag::Var& boundary) const {
  ag::Var x = primary_positions_.add(primary.data, primary.steps, primary.tokens);
  x = apply_boundary(x, boundary);
  return {TokenPath::kPrimary, primary_to_lm_.forward(primary_qformer_.forward(x))};
}

VideoQueryTokens VideoAdapter::other_tokens(const std::vector<ProjectedFeatures>& others,
                                            const ag::Var& boundary) const {
  if (!with_others_) throw ShapeMismatch("adapter was built without an others path");
  const ProjectedFeatures joined = concat_tokens(others);
  ag::Var x = other_positions_.add(joined.data, joined.steps, joined.tokens);
  x = apply_boundary(x, boundary);
  return {TokenPath::kOthers, other_to_lm_.forward(other_qformer_.forward(x))};
}

void VideoAdapter::collect(const std::string& prefix, nn::ParameterList& out) const {
  primary_positions_.collect(prefix + ".primary.positions", out);
  primary_qformer_.collect(prefix + ".primary.qformer", out);
  primary_to_lm_.collect(prefix + ".primary.to_lm", out);
  if (with_others_) {
    other_positions_.collect(prefix + ".others.positions", out);
    other_qformer_.collect(prefix + ".others.qformer", out);
    other_to_lm_.collect(prefix + ".others.to_lm", out);
  }
}

}  // namespace gebc
