#include "gebc/captioner.h"

#include <algorithm>
#include <cmath>

#include "gebc/error.h"

namespace gebc {

std::string render_suffix(CaptionType type) {
  switch (type) {
    case CaptionType::kSubject:
      return "This video describes the subject. The subject is";
    case CaptionType::kBefore:
      return "This video describes the status before. Status before change is";
    case CaptionType::kAfter:
      return "This video describes the status after. Status after change is";
  }
  return {};
}

const PromptSegment* PromptAssembly::find(SegmentKind kind) const {
  for (const auto& s : segments) {
    if (s.kind == kind) return &s;
  }
  return nullptr;
}

ag::Var PromptAssembly::embeddings() const {
  std::vector<ag::Var> parts;
  parts.reserve(segments.size());
  for (const auto& s : segments) parts.push_back(s.embeddings);
  return ag::concat_rows(parts);
}

namespace {

PromptSegment text_segment(SegmentKind kind, std::string_view text, const LanguageModel& lm) {
  PromptSegment s{kind, lm.tokenize(text), {}};
  if (s.token_ids.empty()) {
    throw TokenizationFailure("prompt text '" + std::string(text) + "' produced no tokens");
  }
  s.embeddings = lm.embed(s.token_ids);
  return s;
}

void check_block(const VideoQueryTokens& block, const LanguageModel& lm) {
  if (block.block.cols() != lm.hidden_dim()) {
    throw ShapeMismatch("video query tokens are " + std::to_string(block.block.cols()) +
                        " wide, LM expects " + std::to_string(lm.hidden_dim()));
  }
}

int argmax_lowest(const ag::Matrix& logits, Eigen::Index row) {
  int best = 0;
  for (Eigen::Index j = 1; j < logits.cols(); ++j) {
    if (logits(row, j) > logits(row, best)) best = static_cast<int>(j);
  }
  return best;
}

}  // namespace

PromptAssembly build_prompt(const VideoTokens& tokens, CaptionType type,
                            const std::optional<std::string>& target_text,
                            const LanguageModel& lm) {
  PromptAssembly a;
  a.caption_type = type;
  a.segments.push_back(text_segment(SegmentKind::kPrefix, kPromptPrefix, lm));
  check_block(tokens.primary, lm);
  a.segments.push_back({SegmentKind::kPrimaryTokens, {}, tokens.primary.block});
  if (tokens.others) {
    check_block(*tokens.others, lm);
    a.segments.push_back({SegmentKind::kOtherTokens, {}, tokens.others->block});
  }
  a.segments.push_back(text_segment(SegmentKind::kSuffix, render_suffix(type), lm));
  if (target_text) {
    a.target_token_ids = lm.tokenize(*target_text);
    a.target_token_ids.push_back(lm.end_token_id());
    a.segments.push_back(
        {SegmentKind::kTarget, a.target_token_ids, lm.embed(a.target_token_ids)});
  }
  int total = 0;
  for (const auto& s : a.segments) total += static_cast<int>(s.embeddings.rows());
  a.loss_mask.assign(static_cast<size_t>(total), false);
  std::fill(a.loss_mask.end() - static_cast<std::ptrdiff_t>(a.target_token_ids.size()),
            a.loss_mask.end(), true);
  return a;
}

ag::Var caption_loss(const PromptAssembly& assembly, const LanguageModel& lm) {
  if (assembly.target_token_ids.size() <= 1) {
    throw EmptyTarget("caption loss needs at least one target token before <end>");
  }
  const ag::Var logits = lm.forward(assembly.embeddings());
  const int n = assembly.length();
  const int first_target = n - static_cast<int>(assembly.target_token_ids.size());
  std::vector<int> targets(static_cast<size_t>(n), -1);
  for (int i = 0; i + 1 < n; ++i) {
    if (assembly.loss_mask[static_cast<size_t>(i + 1)]) {
      targets[static_cast<size_t>(i)] =
          assembly.target_token_ids[static_cast<size_t>(i + 1 - first_target)];
    }
  }
  return ag::cross_entropy(logits, targets);
}

namespace {

std::vector<int> greedy(ag::Var embeddings, const LanguageModel& lm, int max_length) {
  std::vector<int> out;
  while (static_cast<int>(out.size()) < max_length) {
    const ag::Var logits = lm.forward(embeddings);
    const int next = argmax_lowest(logits.value(), logits.rows() - 1);
    if (next == lm.end_token_id()) break;
    out.push_back(next);
    const std::vector<ag::Var> parts{embeddings, lm.embed(std::span<const int>(&next, 1))};
    embeddings = ag::concat_rows(parts);
  }
  return out;
}

struct Beam {
  std::vector<int> ids;
  ag::Var embeddings;
  double log_prob = 0.0;
  bool finished = false;

  double score() const {
    // Length-normalized, counting the end token when present.
    const double len = static_cast<double>(ids.size()) + (finished ? 1.0 : 0.0);
    return len > 0 ? log_prob / len : 0.0;
  }
};

std::vector<int> beam_search(const ag::Var& prompt, const LanguageModel& lm, int max_length,
                             int width) {
  std::vector<Beam> beams{{{}, prompt, 0.0, false}};
  for (int step = 0; step < max_length; ++step) {
    std::vector<Beam> candidates;
    for (const auto& b : beams) {
      if (b.finished) {
        candidates.push_back(b);
        continue;
      }
      const ag::Var logits = lm.forward(b.embeddings);
      const auto row = logits.value().row(logits.rows() - 1);
      const double m = row.maxCoeff();
      const double lse = m + std::log((row.array() - m).exp().sum());
      std::vector<int> order(static_cast<size_t>(row.size()));
      for (int i = 0; i < static_cast<int>(order.size()); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int c) { return row(a) > row(c); });
      for (int k = 0; k < width && k < static_cast<int>(order.size()); ++k) {
        const int id = order[static_cast<size_t>(k)];
        Beam nb{b.ids, b.embeddings, b.log_prob + row(id) - lse, id == lm.end_token_id()};
        if (!nb.finished) {
          nb.ids.push_back(id);
          const std::vector<ag::Var> parts{b.embeddings, lm.embed(std::span<const int>(&id, 1))};
          nb.embeddings = ag::concat_rows(parts);
        }
        candidates.push_back(std::move(nb));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(), [](const Beam& a, const Beam& b) {
      if (a.score() != b.score()) return a.score() > b.score();
      return a.ids < b.ids;
    });
    if (static_cast<int>(candidates.size()) > width) candidates.resize(static_cast<size_t>(width));
    beams = std::move(candidates);
    if (std::all_of(beams.begin(), beams.end(), [](const Beam& b) { return b.finished; })) break;
  }
  return beams.front().ids;
}

}  // namespace

std::vector<int> generate_tokens(const VideoTokens& tokens, CaptionType type,
                                 const LanguageModel& lm, const DecodeOptions& options) {
  if (options.max_length < 1) throw InvalidConfig("maximum caption length must be >= 1");
  if (options.beam_width < 1) throw InvalidConfig("beam width must be >= 1");
  const PromptAssembly prompt = build_prompt(tokens, type, std::nullopt, lm);
  if (prompt.length() + options.max_length > lm.max_sequence_length()) {
    throw InvalidConfig("prompt length plus maximum caption length exceeds the LM context");
  }
  if (options.beam_width == 1) return greedy(prompt.embeddings(), lm, options.max_length);
  return beam_search(prompt.embeddings(), lm, options.max_length, options.beam_width);
}

std::string generate_caption(const VideoTokens& tokens, CaptionType type,
                             const LanguageModel& lm, const DecodeOptions& options) {
  return lm.detokenize(generate_tokens(tokens, type, lm, options));
}

CaptionTriple caption_boundary(const GebcModel& model, const PreparedVideo& video,
                               const VideoRecord& record, const BoundaryAnnotation& boundary,
                               const LanguageModel& lm, const DecodeOptions& options,
                               std::vector<PromptAssembly>* assemblies) {
  const NormalizedTimeBox box = normalize_timebox(boundary.time_box, record.duration_sec);
  const VideoTokens tokens = model.video_tokens(video, box);
  CaptionTriple out;
  for (CaptionType t : kCaptionTypes) {
    if (assemblies != nullptr) assemblies->push_back(build_prompt(tokens, t, std::nullopt, lm));
    out.get(t) = generate_caption(tokens, t, lm, options);
  }
  return out;
}

}  // namespace gebc
