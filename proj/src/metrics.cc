#include "gebc/metrics.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "gebc/error.h"

namespace gebc::metrics {

TokenizedCaption tokenize(std::string_view text) {
  TokenizedCaption out;
  out.source = std::string(text);
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.tokens.push_back(std::move(word));
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && (std::isspace(c) || kPunctuation.find(ch) != std::string_view::npos)) {
      flush();
    } else {
      word.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const TokenizedCaption& candidate, const std::vector<TokenizedCaption>& references,
               double beta) {
  if (references.empty()) throw EmptyCorpus("ROUGE-L needs at least one reference");
  double best = 0.0;
  for (const auto& ref : references) {
    if (candidate.tokens.empty() || ref.tokens.empty()) continue;
    const double lcs = static_cast<double>(lcs_length(candidate.tokens, ref.tokens));
    if (lcs == 0.0) continue;
    const double p = lcs / static_cast<double>(candidate.tokens.size());
    const double r = lcs / static_cast<double>(ref.tokens.size());
    const double f = (1.0 + beta * beta) * p * r / (r + beta * beta * p);
    best = std::max(best, f);
  }
  return best;
}

namespace {

using Ngram = std::vector<int>;
using NgramCounts = std::map<Ngram, double>;

struct Interner {
  std::unordered_map<std::string, int> ids;
  std::vector<int> encode(const std::vector<std::string>& tokens) {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) {
      out.push_back(ids.emplace(t, static_cast<int>(ids.size())).first->second);
    }
    return out;
  }
};

std::vector<NgramCounts> count_ngrams(const std::vector<int>& words, int n_max) {
  std::vector<NgramCounts> out(static_cast<size_t>(n_max));
  for (int n = 1; n <= n_max; ++n) {
    for (size_t i = 0; i + static_cast<size_t>(n) <= words.size(); ++i) {
      out[static_cast<size_t>(n - 1)][Ngram(words.begin() + i, words.begin() + i + n)] += 1.0;
    }
  }
  return out;
}

struct TfIdf {
  std::vector<NgramCounts> vec;
  std::vector<double> norm;
  size_t length = 0;
};

TfIdf weigh(const std::vector<NgramCounts>& counts, size_t length,
            const std::map<Ngram, double>& df, double log_docs) {
  TfIdf out{counts, std::vector<double>(counts.size(), 0.0), length};
  for (size_t n = 0; n < out.vec.size(); ++n) {
    for (auto& [gram, tf] : out.vec[n]) {
      const auto it = df.find(gram);
      const double d = it == df.end() ? 1.0 : std::max(1.0, it->second);
      tf *= log_docs - std::log(d);
      out.norm[n] += tf * tf;
    }
    out.norm[n] = std::sqrt(out.norm[n]);
  }
  return out;
}

double similarity(const TfIdf& hyp, const TfIdf& ref, size_t n, double sigma) {
  double val = 0.0;
  const auto& rv = ref.vec[n];
  for (const auto& [gram, h] : hyp.vec[n]) {
    const auto it = rv.find(gram);
    if (it != rv.end()) val += std::min(h, it->second) * it->second;
  }
  if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) val /= hyp.norm[n] * ref.norm[n];
  const double delta = static_cast<double>(hyp.length) - static_cast<double>(ref.length);
  return val * std::exp(-(delta * delta) / (2.0 * sigma * sigma));
}

}  // namespace

CiderResult cider(const std::map<std::string, TokenizedCaption>& candidates,
                  const std::map<std::string, std::vector<TokenizedCaption>>& references,
                  const CiderOptions& options) {
  if (candidates.empty()) throw EmptyCorpus("CIDEr needs a non-empty corpus");
  if (options.n_max < 1 || options.sigma <= 0.0) throw InvalidConfig("bad CIDEr options");
  if (candidates.size() != references.size()) {
    throw MissingPrediction("candidate and reference id sets differ");
  }
  Interner interner;
  std::map<std::string, std::vector<std::vector<NgramCounts>>> ref_counts;
  std::map<std::string, std::vector<size_t>> ref_lengths;
  std::map<Ngram, double> df;
  for (const auto& [id, refs] : references) {
    if (!candidates.count(id)) throw MissingPrediction("no candidate for id '" + id + "'");
    if (refs.empty()) throw EmptyCorpus("id '" + id + "' has no references");
    std::set<Ngram> seen;
    for (const auto& r : refs) {
      auto counts = count_ngrams(interner.encode(r.tokens), options.n_max);
      for (const auto& level : counts) {
        for (const auto& kv : level) seen.insert(kv.first);
      }
      ref_counts[id].push_back(std::move(counts));
      ref_lengths[id].push_back(r.tokens.size());
    }
    for (const auto& g : seen) df[g] += 1.0;
  }
  const double log_docs = std::log(static_cast<double>(references.size()));

  CiderResult result;
  double total = 0.0;
  for (const auto& [id, cand] : candidates) {
    const TfIdf hyp = weigh(count_ngrams(interner.encode(cand.tokens), options.n_max),
                            cand.tokens.size(), df, log_docs);
    const auto& rc = ref_counts.at(id);
    std::vector<double> per_n(static_cast<size_t>(options.n_max), 0.0);
    for (size_t r = 0; r < rc.size(); ++r) {
      const TfIdf ref = weigh(rc[r], ref_lengths.at(id)[r], df, log_docs);
      for (size_t n = 0; n < per_n.size(); ++n) per_n[n] += similarity(hyp, ref, n, options.sigma);
    }
    double score = 0.0;
    for (double v : per_n) score += v;
    score = score / static_cast<double>(options.n_max) / static_cast<double>(rc.size()) * 10.0;
    result.per_id[id] = score;
    total += score;
  }
  result.corpus = total / static_cast<double>(candidates.size());
  return result;
}

ScoreReport aggregate(const std::array<MetricScores, 3>& per_type) {
  ScoreReport out;
  out.per_type = per_type;
  bool all_spice = true;
  double spice = 0.0;
  for (const auto& s : per_type) {
    out.overall.rouge_l += s.rouge_l / 3.0;
    out.overall.cider += s.cider / 3.0;
    if (s.spice) {
      spice += *s.spice / 3.0;
    } else {
      all_spice = false;
    }
  }
  if (all_spice) {
    out.overall.spice = spice;
    out.avg = (spice + out.overall.rouge_l + out.overall.cider) / 3.0;
  } else {
    out.avg_no_spice = (out.overall.rouge_l + out.overall.cider) / 2.0;
  }
  return out;
}

double round_half_up(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  // The small nudge keeps decimal halves like 1.005 from rounding down.
  return std::floor(value * scale + 0.5 + 1e-9) / scale;
}

Evaluation evaluate(const Predictions& predictions, const std::vector<VideoRecord>& records,
                    const std::optional<std::array<double, 3>>& spice) {
  std::vector<std::string> missing;
  for (const auto& r : records) {
    for (const auto& b : r.boundaries) {
      if (!predictions.count({r.video_id, b.boundary_id})) {
        missing.push_back(r.video_id + "/" + b.boundary_id);
      }
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing predictions for " + std::to_string(missing.size()) + " boundaries:";
    for (size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
    if (missing.size() > 20) msg += " ...";
    throw MissingPrediction(msg);
  }
  size_t count = 0;
  for (const auto& r : records) count += r.boundaries.size();
  if (count == 0) throw EmptyCorpus("no annotated boundaries to evaluate");

  Evaluation out;
  std::array<MetricScores, 3> per_type;
  std::array<std::map<std::string, double>, 3> cider_by_type;
  for (CaptionType t : kCaptionTypes) {
    const auto ti = static_cast<size_t>(t);
    std::map<std::string, TokenizedCaption> cands;
    std::map<std::string, std::vector<TokenizedCaption>> refs;
    double rouge_sum = 0.0;
    for (const auto& r : records) {
      for (const auto& b : r.boundaries) {
        const std::string key = r.video_id + '\t' + b.boundary_id;
        cands[key] = tokenize(predictions.at({r.video_id, b.boundary_id}).get(t));
        refs[key] = {tokenize(b.captions.get(t))};
        rouge_sum += rouge_l(cands[key], refs[key]);
      }
    }
    const CiderResult c = cider(cands, refs);
    cider_by_type[ti] = c.per_id;
    per_type[ti].rouge_l = 100.0 * rouge_sum / static_cast<double>(count);
    per_type[ti].cider = 100.0 * c.corpus;
    if (spice) per_type[ti].spice = (*spice)[ti];
  }
  out.report = aggregate(per_type);
  for (const auto& r : records) {
    for (const auto& b : r.boundaries) {
      const std::string key = r.video_id + '\t' + b.boundary_id;
      for (CaptionType t : kCaptionTypes) {
        const TokenizedCaption cand = tokenize(predictions.at({r.video_id, b.boundary_id}).get(t));
        out.breakdown.push_back({r.video_id, b.boundary_id, t,
                                 100.0 * rouge_l(cand, {tokenize(b.captions.get(t))}),
                                 100.0 * cider_by_type[static_cast<size_t>(t)].at(key)});
      }
    }
  }
  return out;
}

namespace {

constexpr std::string_view kPredictionHeader =
    "video_id\tboundary_id\tsubject\tstatus_before\tstatus_after";

std::string clean_field(const std::string& s) {
  std::string out = s;
  std::replace_if(out.begin(), out.end(), [](char c) { return c == '\t' || c == '\n' || c == '\r'; },
                  ' ');
  return out;
}

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t tab = line.find('\t', start);
    out.emplace_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace

std::string serialize_predictions(const Predictions& predictions) {
  std::string out(kPredictionHeader);
  out += '\n';
  for (const auto& [key, triple] : predictions) {
    out += clean_field(key.first) + '\t' + clean_field(key.second) + '\t' +
           clean_field(triple.subject) + '\t' + clean_field(triple.status_before) + '\t' +
           clean_field(triple.status_after) + '\n';
  }
  return out;
}

Predictions parse_predictions(std::string_view text) {
  Predictions out;
  size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line_no == 1) {
      if (line != kPredictionHeader) {
        throw MalformedAnnotation("predictions file has an unexpected header");
      }
      continue;
    }
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 5) {
      throw MalformedAnnotation("predictions line " + std::to_string(line_no) + " has " +
                                std::to_string(fields.size()) + " fields, expected 5");
    }
    const PredictionKey key{fields[0], fields[1]};
    if (!out.emplace(key, CaptionTriple{fields[2], fields[3], fields[4]}).second) {
      throw MalformedAnnotation("duplicate prediction for " + fields[0] + "/" + fields[1]);
    }
  }
  if (line_no == 0) throw MalformedAnnotation("predictions file is empty");
  return out;
}

void write_predictions(const Predictions& predictions, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_predictions(predictions));
}

Predictions read_predictions(const std::filesystem::path& path) {
  return parse_predictions(read_file(path));
}

std::array<double, 3> read_spice(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw MalformedAnnotation("SPICE file " + path.string() + ": " + e.what());
  }
  std::array<double, 3> out{};
  for (CaptionType t : kCaptionTypes) {
    const std::string name(caption_type_name(t));
    if (!j.is_object() || !j.contains(name) || !j[name].is_number()) {
      throw MalformedAnnotation("SPICE file lacks a numeric '" + name + "' entry");
    }
    out[static_cast<size_t>(t)] = j[name].get<double>();
  }
  return out;
}

namespace {

nlohmann::ordered_json scores_json(const MetricScores& s) {
  nlohmann::ordered_json j;
  if (s.spice) j["spice"] = round_half_up(*s.spice);
  j["rouge_l"] = round_half_up(s.rouge_l);
  j["cider"] = round_half_up(s.cider);
  return j;
}

}  // namespace

std::string report_json(const ScoreReport& report) {
  nlohmann::ordered_json j;
  for (CaptionType t : kCaptionTypes) {
    j["per_type"][std::string(caption_type_name(t))] =
        scores_json(report.per_type[static_cast<size_t>(t)]);
  }
  j["overall"] = scores_json(report.overall);
  if (report.avg) j["avg"] = round_half_up(*report.avg);
  if (report.avg_no_spice) j["avg_no_spice"] = round_half_up(*report.avg_no_spice);
  return j.dump(2) + "\n";
}

std::string breakdown_tsv(const std::vector<BreakdownRow>& rows) {
  std::ostringstream os;
  os << "video_id\tboundary_id\tcaption_type\trouge_l\tcider\n";
  os.setf(std::ios::fixed);
  os.precision(4);
  for (const auto& r : rows) {
    os << r.video_id << '\t' << r.boundary_id << '\t' << caption_type_name(r.caption_type) << '\t'
       << r.rouge_l << '\t' << r.cider << '\n';
  }
  return os.str();
}

}  // namespace gebc::metrics
