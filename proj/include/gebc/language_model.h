#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gebc/nn.h"

namespace gebc {

// Contract for the frozen causal language model behind the captioner.
// Implementations never expose trainable parameters: gradients may flow
// through forward() into its input embeddings but never into the weights.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual int vocab_size() const = 0;
  virtual int hidden_dim() const = 0;
  virtual int end_token_id() const = 0;
  virtual int pad_token_id() const = 0;
  virtual int max_sequence_length() const = 0;

  virtual std::vector<int> tokenize(std::string_view text) const = 0;
  virtual std::string detokenize(std::span<const int> ids) const = 0;

  // [n] token ids -> [n, h] embeddings.
  virtual ag::Var embed(std::span<const int> ids) const = 0;
  // [n, h] embeddings -> [n, vocab] next-token logits per position.
  virtual ag::Var forward(const ag::Var& embeddings) const = 0;

  virtual nn::ParameterList parameters() const = 0;
};

// Word-level tokenizer: lowercases ASCII, splits on whitespace and splits
// off the punctuation marks . , : ; ! ? as their own tokens. Unknown words
// map to <unk>. Detokenizing joins words with single spaces and attaches
// punctuation to the preceding word.
class WordTokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEnd = 1;
  static constexpr int kUnk = 2;

  // The vocabulary always begins with <pad>, <end>, <unk>, the punctuation
  // marks and the prompt words; `words` follow, then filler tokens up to
  // vocab_size.
  WordTokenizer(const std::vector<std::string>& words, int vocab_size);

  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  int size() const { return static_cast<int>(vocab_.size()); }
  const std::string& token(int id) const { return vocab_.at(static_cast<size_t>(id)); }
  int id(std::string_view word) const;

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
};

// Words used by the synthetic desk-scale captions.
const std::vector<std::string>& desk_caption_words();

struct TinyLMConfig {
  int vocab_size = 128;
  int hidden_dim = 32;
  int num_layers = 2;
  int num_heads = 4;
  int feedforward_dim = 128;
  int max_sequence_length = 256;
  uint64_t seed = 1234;
};

// Fixed-seed random 2-layer pre-norm causal transformer standing in for a
// pretrained LM at desk scale. Token embedding, learned absolute positions,
// blocks of causal self-attention + GELU MLP, final norm, untied output head.
class TinyCausalLM : public LanguageModel {
 public:
  explicit TinyCausalLM(const TinyLMConfig& config);

  int vocab_size() const override { return config_.vocab_size; }
  int hidden_dim() const override { return config_.hidden_dim; }
  int end_token_id() const override { return WordTokenizer::kEnd; }
  int pad_token_id() const override { return WordTokenizer::kPad; }
  int max_sequence_length() const override { return config_.max_sequence_length; }

  std::vector<int> tokenize(std::string_view text) const override;
  std::string detokenize(std::span<const int> ids) const override;
  ag::Var embed(std::span<const int> ids) const override;
  ag::Var forward(const ag::Var& embeddings) const override;
  nn::ParameterList parameters() const override;

  const WordTokenizer& tokenizer() const { return tokenizer_; }

 private:
  struct Block {
    nn::LayerNorm attn_norm;
    nn::MultiHeadAttention attn;
    nn::LayerNorm mlp_norm;
    nn::FeedForward mlp;
  };

  TinyLMConfig config_;
  WordTokenizer tokenizer_;
  ag::Var token_embedding_;
  ag::Var position_embedding_;
  std::vector<Block> blocks_;
  nn::LayerNorm final_norm_;
  ag::Var head_;
};

}  // namespace gebc
