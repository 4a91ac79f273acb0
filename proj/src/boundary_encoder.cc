#include "gebc/boundary_encoder.h"

#include <algorithm>
#include <cmath>

#include "gebc/error.h"

namespace gebc {

NormalizedTimeBox normalize_timebox(const TimeBox& box, double duration_sec) {
  if (!(duration_sec > 0.0)) throw InvalidBox("duration must be positive");
  if (box.start_sec > box.end_sec) {
    throw InvalidBox("time box start " + std::to_string(box.start_sec) + " exceeds end " +
                     std::to_string(box.end_sec));
  }
  if (box.start_sec < 0.0 || box.end_sec > duration_sec) {
    throw InvalidBox("time box lies outside [0, " + std::to_string(duration_sec) + "]");
  }
  auto clamp = [](double v) { return std::clamp(v, kBoxEpsilon, 1.0 - kBoxEpsilon); };
  return {clamp(box.start_sec / duration_sec), clamp(box.end_sec / duration_sec)};
}

double inverse_sigmoid(double x) {
  if (!(x >= kBoxEpsilon && x <= 1.0 - kBoxEpsilon)) {
    throw DomainError("inverse_sigmoid argument " + std::to_string(x) +
                      " outside [1e-4, 1 - 1e-4]");
  }
  return std::log(x / (1.0 - x));
}

BoundaryEncoder::BoundaryEncoder(const BoundaryEncoderConfig& config, nn::Initializer& init)
    : config_(config), projection_(2 * config.pe_dim, config.model_dim, init, true) {}

ag::Matrix BoundaryEncoder::coordinates(const NormalizedTimeBox& box) const {
  ag::Matrix c(1, 2);
  if (config_.encoding == BoxEncoding::kStartEnd) {
    c << box.start, box.end;
  } else {
    auto clamp = [](double v) { return std::clamp(v, kBoxEpsilon, 1.0 - kBoxEpsilon); };
    c << clamp(0.5 * (box.start + box.end)), clamp(box.end - box.start);
  }
  return c;
}

ag::Var BoundaryEncoder::normalized_encoding(const ag::Var& coords) const {
  if (coords.rows() != 1 || coords.cols() != 2) {
    throw ShapeMismatch("boundary coordinates must be [1, 2]");
  }
  for (Eigen::Index i = 0; i < 2; ++i) inverse_sigmoid(coords.value()(0, i));
  const ag::Var logits = ag::logit(coords);
  const ag::Var pe = ag::sinusoidal_encode(logits, config_.pe_dim, config_.pe_base);
  return ag::layer_norm_rows(pe);
}

ag::Var BoundaryEncoder::encode(const ag::Var& coords) const {
  return projection_.forward(normalized_encoding(coords));
}

ag::Var BoundaryEncoder::encode(const NormalizedTimeBox& box) const {
  return encode(ag::constant(coordinates(box)));
}

void BoundaryEncoder::collect(const std::string& prefix, nn::ParameterList& out) const {
  projection_.collect(prefix + ".projection", out);
}

ag::Var apply_boundary(const ag::Var& features, const ag::Var& embedding) {
  if (embedding.rows() != 1 || embedding.cols() != features.cols()) {
    throw ShapeMismatch("boundary embedding width " + std::to_string(embedding.cols()) +
                        " does not match feature width " + std::to_string(features.cols()));
  }
  return ag::add_row(features, embedding);
}

}  // namespace gebc
