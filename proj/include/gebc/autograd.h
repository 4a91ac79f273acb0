#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices. Every value in the model is a 2-D matrix; rank-3 feature
// blocks [time, tokens, channels] are carried as [time * tokens, channels].

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace gebc::ag {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows in
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  // Zero matrix of the value's shape when no gradient has been accumulated.
  Matrix grad() const;
  bool has_grad() const { return node_->grad.size() != 0; }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  bool defined() const { return node_ != nullptr; }

  void zero_grad() { node_->grad.resize(0, 0); }
  // Seeds d(self)/d(self) = 1; self must be 1x1.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Var make_result(Matrix value, std::vector<Var> parents,
                         std::function<void(Node&)> backward_fn);
  std::shared_ptr<Node> node_;
};

Var constant(Matrix value);
Var make_result(Matrix value, std::vector<Var> parents,
                std::function<void(Node&)> backward_fn);

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// a [n, c] + row [1, c] broadcast down the rows.
Var add_row(const Var& a, const Var& row);
// a [n, c] .* row [1, c] broadcast down the rows.
Var mul_row(const Var& a, const Var& row);
Var transpose(const Var& a);
Var softmax_rows(const Var& a, bool causal = false);
// Per-row standardization without affine terms.
Var layer_norm_rows(const Var& a, double eps = 1e-5);
Var gelu(const Var& a);
// ln(x / (1 - x)) elementwise.
Var logit(const Var& a);
// Each scalar s becomes [sin(s w_0), cos(s w_0), sin(s w_1), ...] with
// w_i = base^(-2i / dim); a [r, c] -> [r, c * dim].
Var sinusoidal_encode(const Var& a, int dim, double base);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& table, std::span<const int> ids);
// Row i of a becomes rows [i*k, (i+1)*k) of the result.
Var repeat_rows_each(const Var& a, Eigen::Index k);
// Mean cross-entropy of row i against targets[i]; rows with a negative
// target are ignored.
Var cross_entropy(const Var& logits, std::span<const int> targets);
Var mean_all(const Var& a);
Var sum_all(const Var& a);

}  // namespace gebc::ag
