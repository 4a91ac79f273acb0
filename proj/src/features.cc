#include "gebc/features.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "gebc/error.h"
#include "gebc/hash.h"

namespace gebc {

std::string_view extractor_kind_name(ExtractorKind kind) {
  switch (kind) {
    case ExtractorKind::kPrimary: return "primary";
    case ExtractorKind::kFrameLevel: return "frame_level";
    case ExtractorKind::kRegionLevel: return "region_level";
  }
  return "unknown";
}

std::optional<ExtractorKind> parse_extractor_kind(std::string_view name) {
  for (auto k : {ExtractorKind::kPrimary, ExtractorKind::kFrameLevel,
                 ExtractorKind::kRegionLevel}) {
    if (extractor_kind_name(k) == name) return k;
  }
  return std::nullopt;
}

namespace {

constexpr int kSyntheticFrameDim = 24;
constexpr int kSyntheticMaxDetections = 12;

Eigen::RowVectorXd to_row(const std::vector<float>& frame) {
  Eigen::RowVectorXd x(static_cast<Eigen::Index>(frame.size()));
  for (size_t i = 0; i < frame.size(); ++i) x(static_cast<Eigen::Index>(i)) = frame[i];
  return x;
}

class SyntheticDenseExtractor : public Extractor {
 public:
  SyntheticDenseExtractor(const ExtractorSpec& spec, uint64_t seed)
      : Extractor(spec) {
    nn::Initializer init(seed ^ fnv1a(spec.name));
    const int width = spec.tokens_per_frame * spec.channels;
    weight_ = ag::Var(init.normal(kSyntheticFrameDim, width, 1.0 / std::sqrt(kSyntheticFrameDim)));
    bias_ = ag::Var(init.normal(1, width, 0.1));
  }

  Matrix extract_frame(const std::vector<float>& frame) const override {
    if (static_cast<int>(frame.size()) != kSyntheticFrameDim) {
      throw ShapeMismatch("extractor '" + spec().name + "': unexpected frame size");
    }
    Eigen::RowVectorXd y = (to_row(frame) * weight_.value() + bias_.value()).array().tanh();
    return Eigen::Map<const Matrix>(y.data(), spec().tokens_per_frame, spec().channels);
  }

  nn::ParameterList parameters() const override {
    return {{spec().name + ".weight", weight_, true}, {spec().name + ".bias", bias_, false}};
  }

 private:
  ag::Var weight_, bias_;
};

class SyntheticRegionExtractor : public Extractor {
 public:
  SyntheticRegionExtractor(const ExtractorSpec& spec, uint64_t seed) : Extractor(spec) {
    nn::Initializer init(seed ^ fnv1a(spec.name));
    weight_ = ag::Var(init.normal(kSyntheticFrameDim, spec.channels,
                                  1.0 / std::sqrt(kSyntheticFrameDim)));
    offsets_ = ag::Var(init.normal(kSyntheticMaxDetections, spec.channels, 1.0));
    scorer_ = ag::Var(init.normal(kSyntheticMaxDetections, kSyntheticFrameDim, 0.5));
  }

  std::vector<Detection> detect(const std::vector<float>& frame) const override {
    if (static_cast<int>(frame.size()) != kSyntheticFrameDim) {
      throw ShapeMismatch("extractor '" + spec().name + "': unexpected frame size");
    }
    const Eigen::RowVectorXd x = to_row(frame);
    const double energy = x.cwiseAbs().sum();
    const int count =
        static_cast<int>(std::fmod(std::floor(energy * 3.0), kSyntheticMaxDetections + 1));
    const Eigen::RowVectorXd projected = x * weight_.value();
    std::vector<Detection> dets;
    for (int k = 0; k < count; ++k) {
      Detection d;
      d.feature = (projected + offsets_.value().row(k)).array().tanh().transpose();
      d.confidence = 1.0 / (1.0 + std::exp(-x.dot(scorer_.value().row(k))));
      dets.push_back(std::move(d));
    }
    return dets;
  }

  nn::ParameterList parameters() const override {
    return {{spec().name + ".weight", weight_, true},
            {spec().name + ".offsets", offsets_, false},
            {spec().name + ".scorer", scorer_, true}};
  }

 private:
  ag::Var weight_, offsets_, scorer_;
};

}  // namespace

SyntheticFrameSource::SyntheticFrameSource(std::string_view video_id, int num_frames,
                                           int frame_dim, uint64_t seed)
    : num_frames_(num_frames) {
  std::mt19937_64 rng(fnv1a(video_id) ^ (seed * 0x9E3779B97F4A7C15ull));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> freq(0.05, 0.3);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  base_.resize(frame_dim);
  freq_.resize(frame_dim);
  phase_.resize(frame_dim);
  for (int i = 0; i < frame_dim; ++i) {
    base_(i) = normal(rng);
    freq_(i) = freq(rng);
    phase_(i) = phase(rng);
  }
}

std::vector<float> SyntheticFrameSource::frame(int index) const {
  std::vector<float> out(static_cast<size_t>(base_.size()));
  for (Eigen::Index i = 0; i < base_.size(); ++i) {
    out[static_cast<size_t>(i)] =
        static_cast<float>(base_(i) + std::sin(freq_(i) * index + phase_(i)));
  }
  return out;
}

Matrix Extractor::extract_frame(const std::vector<float>&) const {
  throw ShapeMismatch("extractor '" + spec_.name + "' does not produce dense features");
}

std::vector<Detection> Extractor::detect(const std::vector<float>&) const {
  throw ShapeMismatch("extractor '" + spec_.name + "' does not produce detections");
}

std::unique_ptr<Extractor> make_extractor(const ExtractorSpec& spec, uint64_t seed) {
  if (spec.backend != "synthetic") {
    throw ExtractorUnavailable("extractor '" + spec.name + "': backend '" + spec.backend +
                               "' is not available in this build");
  }
  if (spec.channels < 1 || spec.tokens_per_frame < 1 || spec.stride < 1) {
    throw InvalidConfig("extractor '" + spec.name + "': dims and stride must be positive");
  }
  if (spec.kind == ExtractorKind::kRegionLevel) {
    return std::make_unique<SyntheticRegionExtractor>(spec, seed);
  }
  return std::make_unique<SyntheticDenseExtractor>(spec, seed);
}

std::vector<int> sample_frame_indices(int num_frames, int stride) {
  if (stride < 1) throw InvalidStride("stride must be >= 1, got " + std::to_string(stride));
  if (num_frames < 1) throw InvariantViolation("frame count must be >= 1");
  std::vector<int> out;
  for (int i = 0; i < num_frames; i += stride) out.push_back(i);
  return out;
}

FeatureTensor temporal_resize(const FeatureTensor& f, int target_steps, ResizeMode mode) {
  if (target_steps < 1 || f.steps < 1) {
    throw ShapeMismatch("temporal_resize: step counts must be >= 1");
  }
  if (f.data.rows() != static_cast<Eigen::Index>(f.steps) * f.tokens ||
      f.data.cols() != f.channels) {
    throw ShapeMismatch("temporal_resize: data does not match declared shape");
  }
  if (f.steps == target_steps) return f;

  FeatureTensor out = f;
  out.steps = target_steps;
  out.data.resize(static_cast<Eigen::Index>(target_steps) * f.tokens, f.channels);
  const bool weighted = !f.row_weight.empty();
  if (weighted) out.row_weight.assign(out.data.rows(), 0.0);

  for (int j = 0; j < target_steps; ++j) {
    const double pos = (f.steps == 1 || target_steps == 1)
                           ? 0.0
                           : static_cast<double>(j) * (f.steps - 1) / (target_steps - 1);
    int lo = static_cast<int>(std::floor(pos));
    double w = pos - lo;
    if (mode == ResizeMode::kSubsample) {
      lo = static_cast<int>(std::lround(pos));
      w = 0.0;
    }
    const int hi = std::min(lo + 1, f.steps - 1);
    for (int t = 0; t < f.tokens; ++t) {
      const Eigen::Index dst = static_cast<Eigen::Index>(j) * f.tokens + t;
      const Eigen::Index a = static_cast<Eigen::Index>(lo) * f.tokens + t;
      const Eigen::Index b = static_cast<Eigen::Index>(hi) * f.tokens + t;
      if (w == 0.0) {
        out.data.row(dst) = f.data.row(a);
        if (weighted) out.row_weight[dst] = f.row_weight[a];
      } else {
        out.data.row(dst) = (1.0 - w) * f.data.row(a) + w * f.data.row(b);
        if (weighted) out.row_weight[dst] = (1.0 - w) * f.row_weight[a] + w * f.row_weight[b];
      }
    }
  }
  return out;
}

FeatureTensor pad_regions(const RegionDetections& dets, int num_objects, int channels) {
  if (num_objects < 1) throw InvalidConfig("object cap must be >= 1");
  FeatureTensor out;
  out.steps = static_cast<int>(dets.size());
  out.tokens = num_objects;
  out.channels = channels;
  out.data = Matrix::Zero(static_cast<Eigen::Index>(out.steps) * num_objects, channels);
  out.row_weight.assign(out.data.rows(), 0.0);
  for (int s = 0; s < out.steps; ++s) {
    const auto& frame = dets[s];
    std::vector<size_t> order(frame.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return frame[a].confidence > frame[b].confidence;
    });
    const size_t keep = std::min(order.size(), static_cast<size_t>(num_objects));
    for (size_t k = 0; k < keep; ++k) {
      const auto& feat = frame[order[k]].feature;
      if (feat.size() != channels) {
        throw ShapeMismatch("region feature has " + std::to_string(feat.size()) +
                            " channels, expected " + std::to_string(channels));
      }
      out.row(s, static_cast<int>(k)) = feat.transpose();
      out.row_weight[static_cast<size_t>(s) * num_objects + k] = 1.0;
    }
  }
  return out;
}

ChannelProjection ChannelProjection::passthrough(int width) {
  ChannelProjection p;
  p.passthrough_ = true;
  p.out_ = width;
  return p;
}

ChannelProjection::ChannelProjection(int in, int out, nn::Initializer& init)
    : passthrough_(false), out_(out), linear_(in, out, init, true) {}

ag::Var ChannelProjection::forward(const ag::Var& x, const std::vector<double>* row_weight,
                                   bool zero_padded) const {
  if (passthrough_) {
    if (x.cols() != out_) throw ShapeMismatch("passthrough features must already be d_0 wide");
    return x;
  }
  if (x.cols() != linear_.in_dim()) {
    throw ShapeMismatch("projection expects " + std::to_string(linear_.in_dim()) +
                        " channels, got " + std::to_string(x.cols()));
  }
  ag::Var y = linear_.forward(x);
  if (zero_padded && row_weight != nullptr && !row_weight->empty()) {
    Matrix mask(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      mask.row(r).setConstant((*row_weight)[static_cast<size_t>(r)] > 0.0 ? 1.0 : 0.0);
    }
    y = ag::mul(y, ag::constant(std::move(mask)));
  }
  return y;
}

void ChannelProjection::collect(const std::string& prefix, nn::ParameterList& out) const {
  if (!passthrough_) linear_.collect(prefix, out);
}

FeatureTensor project_channels(const FeatureTensor& f, const ChannelProjection& projection,
                               bool zero_padded) {
  FeatureTensor out = f;
  out.data = projection.forward(ag::constant(f.data), &f.row_weight, zero_padded).value();
  out.channels = static_cast<int>(out.data.cols());
  return out;
}

std::filesystem::path cache_path(const std::filesystem::path& cache_dir,
                                 std::string_view extractor, std::string_view video_id) {
  return cache_dir / std::string(extractor) / (std::string(video_id) + ".gebf");
}

FeatureCacheEntry extract_raw(const Extractor& extractor, const FrameSource& frames,
                              int num_objects) {
  const auto& spec = extractor.spec();
  const auto indices = sample_frame_indices(frames.num_frames(), spec.stride);
  FeatureCacheEntry entry;
  entry.extractor_name = spec.name;
  Matrix block;
  if (spec.kind == ExtractorKind::kRegionLevel) {
    RegionDetections dets;
    for (int idx : indices) dets.push_back(extractor.detect(frames.frame(idx)));
    block = pad_regions(dets, num_objects, spec.channels).data;
    entry.shape = {indices.size(), static_cast<uint64_t>(num_objects),
                   static_cast<uint64_t>(spec.channels)};
  } else {
    block.resize(static_cast<Eigen::Index>(indices.size()) * spec.tokens_per_frame,
                 spec.channels);
    for (size_t i = 0; i < indices.size(); ++i) {
      Matrix f = extractor.extract_frame(frames.frame(indices[i]));
      if (f.rows() != spec.tokens_per_frame || f.cols() != spec.channels) {
        throw ShapeMismatch("extractor '" + spec.name + "' produced [" +
                            std::to_string(f.rows()) + ", " + std::to_string(f.cols()) +
                            "], declared [" + std::to_string(spec.tokens_per_frame) + ", " +
                            std::to_string(spec.channels) + "]");
      }
      block.middleRows(static_cast<Eigen::Index>(i) * spec.tokens_per_frame,
                       spec.tokens_per_frame) = f;
    }
    entry.shape = {indices.size(), static_cast<uint64_t>(spec.tokens_per_frame),
                   static_cast<uint64_t>(spec.channels)};
  }
  entry.data.resize(static_cast<size_t>(block.size()));
  for (Eigen::Index i = 0; i < block.size(); ++i) {
    entry.data[static_cast<size_t>(i)] = static_cast<float>(block.data()[i]);
  }
  return entry;
}

namespace {

FeatureTensor to_tensor(const FeatureCacheEntry& e, const ExtractorSpec& spec) {
  FeatureTensor f;
  f.extractor_name = e.extractor_name;
  f.steps = static_cast<int>(e.shape[0]);
  f.tokens = static_cast<int>(e.shape[1]);
  f.channels = static_cast<int>(e.shape[2]);
  f.data.resize(static_cast<Eigen::Index>(f.steps) * f.tokens, f.channels);
  for (Eigen::Index i = 0; i < f.data.size(); ++i) {
    f.data.data()[i] = e.data[static_cast<size_t>(i)];
  }
  if (spec.kind == ExtractorKind::kRegionLevel) {
    f.row_weight.resize(f.data.rows());
    for (Eigen::Index r = 0; r < f.data.rows(); ++r) {
      f.row_weight[static_cast<size_t>(r)] = f.data.row(r).isZero(0.0) ? 0.0 : 1.0;
    }
  }
  return f;
}

FeatureTensor prepare_one(std::string_view video_id, const FrameSource* frames,
                          const Extractor& extractor, const EncodeOptions& options) {
  const auto& spec = extractor.spec();
  const int tokens =
      spec.kind == ExtractorKind::kRegionLevel ? options.num_objects : spec.tokens_per_frame;
  FeatureCacheEntry entry;
  const auto path = options.cache_dir.empty()
                        ? std::filesystem::path{}
                        : cache_path(options.cache_dir, spec.name, video_id);
  if (!path.empty() && std::filesystem::exists(path)) {
    entry = load_features(path);
  } else if (options.cache_only || frames == nullptr) {
    throw CacheMiss("no cached '" + spec.name + "' features for video '" +
                    std::string(video_id) + "' (expected " + path.string() + ")");
  } else {
    entry = extract_raw(extractor, *frames, options.num_objects);
  }
  if (entry.extractor_name != spec.name || entry.shape[1] != static_cast<uint64_t>(tokens) ||
      entry.shape[2] != static_cast<uint64_t>(spec.channels) || entry.shape[0] < 1) {
    throw ShapeMismatch("features for '" + spec.name + "' / video '" + std::string(video_id) +
                        "' do not match the declared extractor shape");
  }
  FeatureTensor raw = to_tensor(entry, spec);
  if (frames != nullptr) {
    raw.frame_indices = sample_frame_indices(frames->num_frames(), spec.stride);
  } else {
    for (int i = 0; i < raw.steps; ++i) raw.frame_indices.push_back(i * spec.stride);
  }
  return temporal_resize(raw, options.steps, options.resize);
}

}  // namespace

PreparedVideo prepare_video(std::string_view video_id, const FrameSource* frames,
                            const std::vector<const Extractor*>& extractors,
                            const EncodeOptions& options) {
  if (options.steps < 1) throw InvalidConfig("temporal length L must be configured (>= 1)");
  PreparedVideo out;
  out.video_id = std::string(video_id);
  bool have_primary = false;
  for (const Extractor* e : extractors) {
    if (e->spec().kind == ExtractorKind::kPrimary) {
      if (have_primary) throw InvalidConfig("exactly one primary extractor is allowed");
      out.primary = prepare_one(video_id, frames, *e, options);
      have_primary = true;
    } else {
      out.others.push_back(prepare_one(video_id, frames, *e, options));
    }
  }
  if (!have_primary) throw InvalidConfig("a primary extractor must be configured");
  return out;
}

EncodedVideo encode_video(std::string_view video_id, const FrameSource* frames,
                          const std::vector<const Extractor*>& extractors,
                          const std::vector<const ChannelProjection*>& projections,
                          const EncodeOptions& options, bool zero_padded) {
  if (projections.size() != extractors.size()) {
    throw InvalidConfig("one channel projection per extractor is required");
  }
  PreparedVideo prepared = prepare_video(video_id, frames, extractors, options);
  EncodedVideo out;
  size_t other = 0;
  for (size_t i = 0; i < extractors.size(); ++i) {
    if (extractors[i]->spec().kind == ExtractorKind::kPrimary) {
      out.primary = project_channels(prepared.primary, *projections[i], zero_padded);
    } else {
      out.others.push_back(
          project_channels(prepared.others[other++], *projections[i], zero_padded));
    }
  }
  return out;
}

}  // namespace gebc
