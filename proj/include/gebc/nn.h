#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gebc/autograd.h"

namespace gebc::nn {

using ag::Matrix;
using ag::Var;

struct NamedParameter {
  std::string name;
  Var var;
  // Weight decay applies only to matrices; biases and norm gains are exempt.
  bool decay = true;
};

using ParameterList = std::vector<NamedParameter>;

// Deterministic parameter initializer; one per model construction.
class Initializer {
 public:
  explicit Initializer(uint64_t seed) : rng_(seed) {}

  Matrix normal(Eigen::Index rows, Eigen::Index cols, double stddev);
  Matrix zeros(Eigen::Index rows, Eigen::Index cols) { return Matrix::Zero(rows, cols); }
  Matrix ones(Eigen::Index rows, Eigen::Index cols) { return Matrix::Ones(rows, cols); }

 private:
  std::mt19937_64 rng_;
};

class Linear {
 public:
  Linear() = default;
  // Weight std defaults to 1/sqrt(in).
  Linear(int in, int out, Initializer& init, bool trainable, double stddev = -1.0);

  Var forward(const Var& x) const;
  void init_identity();
  void collect(const std::string& prefix, ParameterList& out) const;

  int in_dim() const { return static_cast<int>(weight_.rows()); }
  int out_dim() const { return static_cast<int>(weight_.cols()); }
  const Var& weight() const { return weight_; }
  const Var& bias() const { return bias_; }

 private:
  Var weight_;  // [in, out]
  Var bias_;    // [1, out]
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(int dim, Initializer& init, bool trainable);

  Var forward(const Var& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;

 private:
  Var gain_;
  Var shift_;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(int dim, int kv_dim, int heads, Initializer& init, bool trainable,
                     double stddev = -1.0);

  // query [n, dim] attends over context [m, kv_dim].
  Var forward(const Var& query, const Var& context, bool causal = false) const;
  void collect(const std::string& prefix, ParameterList& out) const;

 private:
  int heads_ = 1;
  int head_dim_ = 1;
  Linear q_, k_, v_, o_;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(int dim, int hidden, Initializer& init, bool trainable,
              double stddev = -1.0);

  Var forward(const Var& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;

 private:
  Linear up_, down_;
};

// Zeroes accumulated gradients on every listed parameter.
void zero_grad(const ParameterList& params);

// FNV-1a over the raw bytes of every parameter value, in list order.
uint64_t checksum(const ParameterList& params);

}  // namespace gebc::nn
