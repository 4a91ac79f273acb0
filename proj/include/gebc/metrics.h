#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gebc/annotations.h"

namespace gebc::metrics {

// Characters removed before splitting: every ASCII punctuation mark.
inline constexpr std::string_view kPunctuation = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

struct TokenizedCaption {
  std::vector<std::string> tokens;
  std::string source;
};

// Lowercases ASCII, replaces punctuation with spaces, splits on whitespace.
TokenizedCaption tokenize(std::string_view text);

inline constexpr double kRougeBeta = 1.2;

size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Max over references of the LCS F-measure; 0 when either side is empty.
double rouge_l(const TokenizedCaption& candidate, const std::vector<TokenizedCaption>& references,
               double beta = kRougeBeta);

struct CiderOptions {
  int n_max = 4;
  double sigma = 6.0;
};

struct CiderResult {
  double corpus = 0.0;
  std::map<std::string, double> per_id;
};

// CIDEr-D with document frequencies over the reference sets of the corpus.
CiderResult cider(const std::map<std::string, TokenizedCaption>& candidates,
                  const std::map<std::string, std::vector<TokenizedCaption>>& references,
                  const CiderOptions& options = {});

// Every value on the x100 reporting scale.
struct MetricScores {
  std::optional<double> spice;
  double rouge_l = 0.0;
  double cider = 0.0;
};

struct ScoreReport {
  std::array<MetricScores, 3> per_type;  // indexed by CaptionType
  MetricScores overall;
  std::optional<double> avg;           // mean of SPICE, ROUGE-L, CIDEr
  std::optional<double> avg_no_spice;  // mean of ROUGE-L, CIDEr when SPICE is absent
};

// Averages each metric over the three caption types, then the metrics.
ScoreReport aggregate(const std::array<MetricScores, 3>& per_type);

double round_half_up(double value, int decimals = 2);

using PredictionKey = std::pair<std::string, std::string>;  // (video_id, boundary_id)
using Predictions = std::map<PredictionKey, CaptionTriple>;

struct BreakdownRow {
  std::string video_id;
  std::string boundary_id;
  CaptionType caption_type;
  double rouge_l;  // x100
  double cider;    // x100
};

struct Evaluation {
  ScoreReport report;
  std::vector<BreakdownRow> breakdown;
};

// Scores predictions against every annotated boundary; throws
// MissingPrediction listing absent (video, boundary) keys.
Evaluation evaluate(const Predictions& predictions, const std::vector<VideoRecord>& records,
                    const std::optional<std::array<double, 3>>& spice = std::nullopt);

// Tab-separated, header "video_id\tboundary_id\tsubject\tstatus_before\tstatus_after".
std::string serialize_predictions(const Predictions& predictions);
Predictions parse_predictions(std::string_view text);
void write_predictions(const Predictions& predictions, const std::filesystem::path& path);
Predictions read_predictions(const std::filesystem::path& path);

// {"subject": x, "before": y, "after": z} on the x100 scale.
std::array<double, 3> read_spice(const std::filesystem::path& path);

std::string report_json(const ScoreReport& report);
std::string breakdown_tsv(const std::vector<BreakdownRow>& rows);

}  // namespace gebc::metrics
