#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gebc/annotations.h"
#include "gebc/language_model.h"
#include "gebc/model.h"

namespace gebc {

inline constexpr std::string_view kPromptPrefix = "Video:";
inline constexpr int kDefaultMaxCaptionLength = 96;

// "This video describes the {A}. {B} is" for the given caption type.
std::string render_suffix(CaptionType type);

enum class SegmentKind { kPrefix, kPrimaryTokens, kOtherTokens, kSuffix, kTarget };

struct PromptSegment {
  SegmentKind kind;
  std::vector<int> token_ids;  // empty for video-token segments
  ag::Var embeddings;          // [len, h]
};

// Soft prompt: prefix, V_0, V_1 (optional), suffix, then in training mode the
// target tokens followed by the end token.
struct PromptAssembly {
  CaptionType caption_type = CaptionType::kSubject;
  std::vector<PromptSegment> segments;
  std::vector<int> target_token_ids;  // target + end; empty at inference
  std::vector<bool> loss_mask;        // one per position

  int length() const { return static_cast<int>(loss_mask.size()); }
  const PromptSegment* find(SegmentKind kind) const;
  ag::Var embeddings() const;
};

PromptAssembly build_prompt(const VideoTokens& tokens, CaptionType type,
                            const std::optional<std::string>& target_text,
                            const LanguageModel& lm);

// Mean next-token cross-entropy over the masked positions: logits at
// position i score the token at i + 1.
ag::Var caption_loss(const PromptAssembly& assembly, const LanguageModel& lm);

struct DecodeOptions {
  int max_length = kDefaultMaxCaptionLength;  // M
  int beam_width = 1;                         // 1 = greedy
};

// Decoded token ids (end token excluded), at most max_length of them.
std::vector<int> generate_tokens(const VideoTokens& tokens, CaptionType type,
                                 const LanguageModel& lm, const DecodeOptions& options);
std::string generate_caption(const VideoTokens& tokens, CaptionType type,
                             const LanguageModel& lm, const DecodeOptions& options);

// Builds the video tokens once, then decodes subject/before/after. When
// `assemblies` is given it receives the three inference prompts.
CaptionTriple caption_boundary(const GebcModel& model, const PreparedVideo& video,
                               const VideoRecord& record, const BoundaryAnnotation& boundary,
                               const LanguageModel& lm, const DecodeOptions& options,
                               std::vector<PromptAssembly>* assemblies = nullptr);

}  // namespace gebc
