#include "gebc/nn.h"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace gebc::nn {

Matrix Initializer::normal(Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng_);
  return m;
}

Linear::Linear(int in, int out, Initializer& init, bool trainable, double stddev)
    : weight_(init.normal(in, out, stddev > 0 ? stddev : 1.0 / std::sqrt(in)), trainable),
      bias_(init.zeros(1, out), trainable) {}

Var Linear::forward(const Var& x) const {
  return ag::add_row(ag::matmul(x, weight_), bias_);
}

void Linear::init_identity() {
  if (weight_.rows() != weight_.cols()) {
    throw std::logic_error("identity init requires a square projection");
  }
  weight_.mutable_value().setIdentity();
  bias_.mutable_value().setZero();
}

void Linear::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight_, true});
  out.push_back({prefix + ".bias", bias_, false});
}

LayerNorm::LayerNorm(int dim, Initializer& init, bool trainable)
    : gain_(init.ones(1, dim), trainable), shift_(init.zeros(1, dim), trainable) {}

Var LayerNorm::forward(const Var& x) const {
  return ag::add_row(ag::mul_row(ag::layer_norm_rows(x), gain_), shift_);
}

void LayerNorm::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".gain", gain_, false});
  out.push_back({prefix + ".shift", shift_, false});
}

MultiHeadAttention::MultiHeadAttention(int dim, int kv_dim, int heads,
                                       Initializer& init, bool trainable,
                                       double stddev)
    : heads_(heads), head_dim_(dim / heads) {
  if (heads <= 0 || dim % heads != 0) {
    throw std::invalid_argument("attention width must be divisible by head count");
  }
  q_ = Linear(dim, dim, init, trainable, stddev);
  k_ = Linear(kv_dim, dim, init, trainable, stddev);
  v_ = Linear(kv_dim, dim, init, trainable, stddev);
  o_ = Linear(dim, dim, init, trainable, stddev);
}

Var MultiHeadAttention::forward(const Var& query, const Var& context, bool causal) const {
  const Var q = q_.forward(query);
  const Var k = k_.forward(context);
  const Var v = v_.forward(context);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim_));
  std::vector<Var> outs;
  outs.reserve(heads_);
  for (int h = 0; h < heads_; ++h) {
    const Var qh = ag::slice_cols(q, h * head_dim_, head_dim_);
    const Var kh = ag::slice_cols(k, h * head_dim_, head_dim_);
    const Var vh = ag::slice_cols(v, h * head_dim_, head_dim_);
    const Var scores = ag::scale(ag::matmul(qh, ag::transpose(kh)), inv_sqrt);
    outs.push_back(ag::matmul(ag::softmax_rows(scores, causal), vh));
  }
  return o_.forward(heads_ == 1 ? outs.front() : ag::concat_cols(outs));
}

void MultiHeadAttention::collect(const std::string& prefix, ParameterList& out) const {
  q_.collect(prefix + ".query", out);
  k_.collect(prefix + ".key", out);
  v_.collect(prefix + ".value", out);
  o_.collect(prefix + ".output", out);
}

FeedForward::FeedForward(int dim, int hidden, Initializer& init, bool trainable,
                         double stddev)
    : up_(dim, hidden, init, trainable, stddev), down_(hidden, dim, init, trainable, stddev) {}

Var FeedForward::forward(const Var& x) const {
  return down_.forward(ag::gelu(up_.forward(x)));
}

void FeedForward::collect(const std::string& prefix, ParameterList& out) const {
  up_.collect(prefix + ".up", out);
  down_.collect(prefix + ".down", out);
}

void zero_grad(const ParameterList& params) {
  for (const auto& p : params) {
    auto var = p.var;
    var.zero_grad();
  }
}

uint64_t checksum(const ParameterList& params) {
  uint64_t h = 1469598103934665603ull;
  for (const auto& p : params) {
    const auto& m = p.var.value();
    const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
    const size_t n = static_cast<size_t>(m.size()) * sizeof(double);
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace gebc::nn
