#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gebc/features.h"
#include "gebc/nn.h"

namespace gebc {

struct VideoQFormerConfig {
  int num_query_tokens = 32;  // q
  int hidden_dim = 768;       // d_0
  int num_layers = 2;
  int num_heads = 8;
  int feedforward_dim = 3072;
};

void validate(const VideoQFormerConfig& config);

// Learnable queries that self-attend, cross-attend over a flattened feature
// sequence, and pass through a feedforward block, each sublayer wrapped in a
// residual connection and post layer norm.
class VideoQFormer {
 public:
  VideoQFormer() = default;
  VideoQFormer(const VideoQFormerConfig& config, nn::Initializer& init);

  // features [n, d_0] for any n >= 1 -> [q, d_0].
  ag::Var forward(const ag::Var& features) const;
  void collect(const std::string& prefix, nn::ParameterList& out) const;

  const ag::Var& query_embeddings() const { return queries_; }
  const VideoQFormerConfig& config() const { return config_; }

 private:
  struct Layer {
    nn::MultiHeadAttention self_attn;
    nn::LayerNorm self_norm;
    nn::MultiHeadAttention cross_attn;
    nn::LayerNorm cross_norm;
    nn::FeedForward ffn;
    nn::LayerNorm ffn_norm;
  };

  VideoQFormerConfig config_;
  ag::Var queries_;
  nn::LayerNorm input_norm_;
  std::vector<Layer> layers_;
};

// One learned vector per time step, shared across the tokens of a step.
class PositionTable {
 public:
  PositionTable() = default;
  PositionTable(int max_steps, int dim, nn::Initializer& init, double stddev = 0.02);

  // features [steps * tokens, dim] -> features + P[t] on every row of step t.
  ag::Var add(const ag::Var& features, int steps, int tokens) const;
  void collect(const std::string& prefix, nn::ParameterList& out) const;

  ag::Var& table() { return table_; }
  int max_steps() const { return static_cast<int>(table_.rows()); }

 private:
  ag::Var table_;
};

enum class TokenPath { kPrimary, kOthers };

struct VideoQueryTokens {
  TokenPath path = TokenPath::kPrimary;
  ag::Var block;  // [q, h]
};

struct VideoAdapterConfig {
  int model_dim = 768;  // d_0
  int lm_dim = 5120;    // h
  int primary_queries = 32;  // q_0
  int other_queries = 32;    // q_1
  int num_layers = 2;
  int num_heads = 8;
  int feedforward_dim = 3072;
  int max_steps = 64;
};

// Feature block after channel projection, as an autograd value.
struct ProjectedFeatures {
  ag::Var data;  // [steps * tokens, d_0]
  int steps = 0;
  int tokens = 0;
};

// Positions -> boundary -> video Q-former -> LM-width projection, for the
// primary path (V_0) and the shared path over all other extractors (V_1).
class VideoAdapter {
 public:
  VideoAdapter() = default;
  VideoAdapter(const VideoAdapterConfig& config, bool with_others, nn::Initializer& init);

  VideoQueryTokens primary_tokens(const ProjectedFeatures& primary,
                                  const ag::Var& boundary) const;
  // Concatenates the others along the token axis per step, then runs the
  // shared path. Requires at least one block.
  VideoQueryTokens other_tokens(const std::vector<ProjectedFeatures>& others,
                                const ag::Var& boundary) const;

  void collect(const std::string& prefix, nn::ParameterList& out) const;

  bool has_others() const { return with_others_; }
  const VideoAdapterConfig& config() const { return config_; }
  PositionTable& primary_positions() { return primary_positions_; }
  PositionTable& other_positions() { return other_positions_; }
  VideoQFormer& primary_qformer() { return primary_qformer_; }
  nn::Linear& primary_to_lm() { return primary_to_lm_; }
  nn::Linear& other_to_lm() { return other_to_lm_; }

 private:
  VideoAdapterConfig config_;
  bool with_others_ = false;
  PositionTable primary_positions_, other_positions_;
  VideoQFormer primary_qformer_, other_qformer_;
  nn::Linear primary_to_lm_, other_to_lm_;
};

// Stacks per-step token rows of several [steps * tokens_k, d] blocks into
// one [steps * sum(tokens_k), d] block.
ProjectedFeatures concat_tokens(const std::vector<ProjectedFeatures>& blocks);

}  // namespace gebc
