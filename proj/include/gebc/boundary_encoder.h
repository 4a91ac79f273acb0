#pragma once

#include <string>

#include "gebc/annotations.h"
#include "gebc/nn.h"

namespace gebc {

// Clamp margin keeping the logit finite at the video edges.
inline constexpr double kBoxEpsilon = 1e-4;

struct NormalizedTimeBox {
  double start = 0.0;
  double end = 0.0;
};

// Divides by duration and clamps both ends into [eps, 1 - eps].
NormalizedTimeBox normalize_timebox(const TimeBox& box, double duration_sec);

// ln(x / (1 - x)); throws DomainError outside [eps, 1 - eps].
double inverse_sigmoid(double x);

enum class BoxEncoding { kStartEnd, kCenterWidth };

struct BoundaryEncoderConfig {
  int model_dim = 768;     // d_0
  int pe_dim = 128;        // per coordinate
  double pe_base = 10000.0;
  BoxEncoding encoding = BoxEncoding::kStartEnd;
};

// time box -> logit -> sinusoidal encoding -> layer norm -> affine to d_0.
class BoundaryEncoder {
 public:
  BoundaryEncoder() = default;
  BoundaryEncoder(const BoundaryEncoderConfig& config, nn::Initializer& init);

  // The two scalars fed to the logit, per the configured box encoding.
  ag::Matrix coordinates(const NormalizedTimeBox& box) const;
  // coords is a [1, 2] variable holding values in [eps, 1 - eps].
  ag::Var encode(const ag::Var& coords) const;
  ag::Var encode(const NormalizedTimeBox& box) const;
  // Layer-normed vector before the projection; exposed for inspection.
  ag::Var normalized_encoding(const ag::Var& coords) const;

  void collect(const std::string& prefix, nn::ParameterList& out) const;
  const BoundaryEncoderConfig& config() const { return config_; }
  nn::Linear& projection() { return projection_; }

 private:
  BoundaryEncoderConfig config_;
  nn::Linear projection_;
};

// Broadcast-adds a [1, d_0] embedding to every row of [rows, d_0] features.
ag::Var apply_boundary(const ag::Var& features, const ag::Var& embedding);

}  // namespace gebc
