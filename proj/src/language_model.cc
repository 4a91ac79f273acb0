#include "gebc/language_model.h"

#include <cctype>
#include <cmath>

#include "gebc/error.h"

namespace gebc {

namespace {

constexpr std::string_view kPunctuation = ".,:;!?";

const std::vector<std::string>& base_vocabulary() {
  static const std::vector<std::string> words = {
      "<pad>", "<end>", "<unk>", ".", ",", ":", ";", "!", "?",
      "video", "this", "describes", "the", "subject", "status", "before", "after",
      "change", "is"};
  return words;
}

bool valid_utf8(std::string_view s) {
  size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    int extra = 0;
    if (c < 0x80) {
      extra = 0;
    } else if ((c >> 5) == 0x6) {
      extra = 1;
    } else if ((c >> 4) == 0xE) {
      extra = 2;
    } else if ((c >> 3) == 0x1E) {
      extra = 3;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (int k = 1; k <= extra; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) return false;
    }
    i += static_cast<size_t>(extra) + 1;
  }
  return true;
}

}  // namespace

const std::vector<std::string>& desk_caption_words() {
  static const std::vector<std::string> words = {
      "a",       "man",    "woman",  "person", "boy",     "girl",    "dog",
      "player",  "in",     "on",     "with",   "red",     "blue",    "black",
      "white",   "shirt",  "jacket", "hat",    "standing", "sitting", "walking",
      "running", "jumping", "holding", "ball",  "rope",    "bike",    "water",
      "field",   "stage",  "room",   "starts", "stops",   "begins",  "turns",
      "around",  "throws", "catches", "falls", "down",    "up",      "picks",
      "puts",    "hands",  "his",    "her",    "and",     "to",      "at",
      "near",    "table",  "door",   "camera", "looks",   "smiles",  "raises",
      "arm",     "leg",    "kicks",  "swims",  "rides",   "dances"};
  return words;
}

WordTokenizer::WordTokenizer(const std::vector<std::string>& words, int vocab_size) {
  auto add = [&](const std::string& w) {
    if (index_.emplace(w, static_cast<int>(vocab_.size())).second) vocab_.push_back(w);
  };
  for (const auto& w : base_vocabulary()) add(w);
  for (const auto& w : words) add(w);
  if (static_cast<int>(vocab_.size()) > vocab_size) {
    throw InvalidConfig("vocabulary needs at least " + std::to_string(vocab_.size()) +
                        " entries, configured " + std::to_string(vocab_size));
  }
  for (int i = 0; static_cast<int>(vocab_.size()) < vocab_size; ++i) {
    add("<filler" + std::to_string(i) + ">");
  }
}

int WordTokenizer::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> WordTokenizer::encode(std::string_view text) const {
  if (!valid_utf8(text)) throw TokenizationFailure("text is not valid UTF-8");
  std::vector<int> ids;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      ids.push_back(id(word));
      word.clear();
    }
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (kPunctuation.find(ch) != std::string_view::npos) {
      flush();
      ids.push_back(id(std::string(1, ch)));
    } else {
      word.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return ids;
}

std::string WordTokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kPad || id == kEnd) continue;
    const std::string& tok = token(id);
    const bool punct = tok.size() == 1 && kPunctuation.find(tok[0]) != std::string_view::npos;
    if (!out.empty() && !punct) out.push_back(' ');
    out += tok;
  }
  return out;
}

TinyCausalLM::TinyCausalLM(const TinyLMConfig& config)
    : config_(config), tokenizer_(desk_caption_words(), config.vocab_size) {
  if (config.hidden_dim % config.num_heads != 0) {
    throw InvalidConfig("LM hidden_dim must be divisible by num_heads");
  }
  nn::Initializer init(config.seed);
  const int h = config.hidden_dim;
  const double std_h = 1.0 / std::sqrt(static_cast<double>(h));
  token_embedding_ = ag::Var(init.normal(config.vocab_size, h, 1.0));
  position_embedding_ = ag::Var(init.normal(config.max_sequence_length, h, 0.1));
  for (int i = 0; i < config.num_layers; ++i) {
    Block b;
    b.attn_norm = nn::LayerNorm(h, init, false);
    b.attn = nn::MultiHeadAttention(h, h, config.num_heads, init, false, 2.0 * std_h);
    b.mlp_norm = nn::LayerNorm(h, init, false);
    b.mlp = nn::FeedForward(h, config.feedforward_dim, init, false, std_h);
    blocks_.push_back(std::move(b));
  }
  final_norm_ = nn::LayerNorm(h, init, false);
  head_ = ag::Var(init.normal(h, config.vocab_size, 1.0));
}

std::vector<int> TinyCausalLM::tokenize(std::string_view text) const {
  return tokenizer_.encode(text);
}

std::string TinyCausalLM::detokenize(std::span<const int> ids) const {
  return tokenizer_.decode(ids);
}

ag::Var TinyCausalLM::embed(std::span<const int> ids) const {
  return ag::gather_rows(token_embedding_, ids);
}

ag::Var TinyCausalLM::forward(const ag::Var& embeddings) const {
  const auto n = embeddings.rows();
  if (n < 1 || n > config_.max_sequence_length || embeddings.cols() != config_.hidden_dim) {
    throw ShapeMismatch("LM input must be [1.." + std::to_string(config_.max_sequence_length) +
                        ", " + std::to_string(config_.hidden_dim) + "]");
  }
  ag::Var x = ag::add(embeddings, ag::slice_rows(position_embedding_, 0, n));
  for (const auto& b : blocks_) {
    const ag::Var a = b.attn_norm.forward(x);
    x = ag::add(x, b.attn.forward(a, a, /*causal=*/true));
    x = ag::add(x, b.mlp.forward(b.mlp_norm.forward(x)));
  }
  return ag::matmul(final_norm_.forward(x), head_);
}

nn::ParameterList TinyCausalLM::parameters() const {
  nn::ParameterList out;
  out.push_back({"lm.token_embedding", token_embedding_, false});
  out.push_back({"lm.position_embedding", position_embedding_, false});
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "lm.block" + std::to_string(i);
    blocks_[i].attn_norm.collect(p + ".attn_norm", out);
    blocks_[i].attn.collect(p + ".attn", out);
    blocks_[i].mlp_norm.collect(p + ".mlp_norm", out);
    blocks_[i].mlp.collect(p + ".mlp", out);
  }
  final_norm_.collect("lm.final_norm", out);
  out.push_back({"lm.head", head_, false});
  return out;
}

}  // namespace gebc
