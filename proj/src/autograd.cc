#include "gebc/autograd.h"

#include <cassert>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

namespace gebc::ag {

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Matrix value, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Matrix Var::grad() const {
  if (node_->grad.size() == 0) {
    return Matrix::Zero(node_->value.rows(), node_->value.cols());
  }
  return node_->grad;
}

void Var::backward() const {
  if (node_->value.rows() != 1 || node_->value.cols() != 1) {
    throw std::logic_error("backward() requires a scalar");
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; reversing it gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) {
      n->backward_fn(*n);
      // Interior gradients are single-use.
      n->grad.resize(0, 0);
    }
  }
}

Var constant(Matrix value) { return Var(std::move(value), false); }

Var make_result(Matrix value, std::vector<Var> parents,
                std::function<void(Node&)> backward_fn) {
  Var out(std::move(value), false);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node());
    out.node_->backward_fn = std::move(backward_fn);
  }
  return out;
}

namespace {

void push(Node& self, size_t i, const Matrix& g) {
  Node& p = *self.parents[i];
  if (p.requires_grad) p.accumulate(g);
}

bool wants(const Node& self, size_t i) {
  return self.parents[i]->requires_grad;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: shape mismatch");
  return make_result(a.value() * b.value(), {a, b}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    const Matrix& bv = self.parents[1]->value;
    if (wants(self, 0)) push(self, 0, self.grad * bv.transpose());
    if (wants(self, 1)) push(self, 1, av.transpose() * self.grad);
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    push(self, 0, self.grad);
    push(self, 1, self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    push(self, 0, self.grad);
    if (wants(self, 1)) push(self, 1, -self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    if (wants(self, 0)) push(self, 0, self.grad.cwiseProduct(self.parents[1]->value));
    if (wants(self, 1)) push(self, 1, self.grad.cwiseProduct(self.parents[0]->value));
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& self) { push(self, 0, self.grad * s); });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("add_row: shape mismatch");
  }
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return make_result(std::move(out), {a, row}, [](Node& self) {
    push(self, 0, self.grad);
    if (wants(self, 1)) push(self, 1, self.grad.colwise().sum());
  });
}

Var mul_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("mul_row: shape mismatch");
  }
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return make_result(std::move(out), {a, row}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    const Matrix& rv = self.parents[1]->value;
    if (wants(self, 0)) {
      Matrix g = self.grad.array().rowwise() * rv.row(0).array();
      push(self, 0, g);
    }
    if (wants(self, 1)) push(self, 1, self.grad.cwiseProduct(av).colwise().sum());
  });
}

Var transpose(const Var& a) {
  return make_result(a.value().transpose(), {a},
                     [](Node& self) { push(self, 0, self.grad.transpose()); });
}

Var softmax_rows(const Var& a, bool causal) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::Index width = causal ? std::min<Eigen::Index>(i + 1, x.cols()) : x.cols();
    const double m = x.row(i).head(width).maxCoeff();
    double total = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double e = j < width ? std::exp(x(i, j) - m) : 0.0;
      y(i, j) = e;
      total += e;
    }
    y.row(i) /= total;
  }
  return make_result(std::move(y), {a}, [](Node& self) {
    const Matrix& y = self.value;
    Eigen::VectorXd dots = self.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = y.cwiseProduct(self.grad.colwise() - dots);
    push(self, 0, g);
  });
}

Var layer_norm_rows(const Var& a, double eps) {
  const Matrix& x = a.value();
  const Eigen::Index n = x.cols();
  Matrix y(x.rows(), n);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    y.row(i) = (x.row(i).array() - mean) * inv_std(i);
  }
  return make_result(std::move(y), {a}, [inv_std](Node& self) {
    const Matrix& y = self.value;
    const Matrix& g = self.grad;
    Matrix dx(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double gm = g.row(i).mean();
      const double gym = g.row(i).cwiseProduct(y.row(i)).mean();
      dx.row(i) = inv_std(i) * (g.row(i).array() - gm - y.row(i).array() * gym);
    }
    push(self, 0, dx);
  });
}

Var gelu(const Var& a) {
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Matrix y = a.value().unaryExpr(
      [&](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return make_result(std::move(y), {a}, [inv_sqrt2](Node& self) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Matrix d = self.parents[0]->value.unaryExpr([&](double x) {
      return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
             x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
    });
    push(self, 0, self.grad.cwiseProduct(d));
  });
}

Var logit(const Var& a) {
  Matrix y = a.value().unaryExpr([](double x) { return std::log(x / (1.0 - x)); });
  return make_result(std::move(y), {a}, [](Node& self) {
    Matrix d = self.parents[0]->value.unaryExpr(
        [](double x) { return 1.0 / (x * (1.0 - x)); });
    push(self, 0, self.grad.cwiseProduct(d));
  });
}

Var sinusoidal_encode(const Var& a, int dim, double base) {
  if (dim < 2 || dim % 2 != 0) {
    throw std::invalid_argument("sinusoidal_encode: dim must be even and >= 2");
  }
  std::vector<double> freqs(dim / 2);
  for (int i = 0; i < dim / 2; ++i) {
    freqs[i] = std::pow(base, -2.0 * i / dim);
  }
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols() * dim);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      for (int i = 0; i < dim / 2; ++i) {
        y(r, c * dim + 2 * i) = std::sin(x(r, c) * freqs[i]);
        y(r, c * dim + 2 * i + 1) = std::cos(x(r, c) * freqs[i]);
      }
    }
  }
  return make_result(std::move(y), {a}, [freqs, dim](Node& self) {
    const Matrix& x = self.parents[0]->value;
    Matrix d = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        double acc = 0.0;
        for (int i = 0; i < dim / 2; ++i) {
          const double w = freqs[i];
          acc += self.grad(r, c * dim + 2 * i) * std::cos(x(r, c) * w) * w;
          acc -= self.grad(r, c * dim + 2 * i + 1) * std::sin(x(r, c) * w) * w;
        }
        d(r, c) = acc;
      }
    }
    push(self, 0, d);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_result(std::move(out), {parts.begin(), parts.end()},
                     [offsets](Node& self) {
                       for (size_t i = 0; i < self.parents.size(); ++i) {
                         if (!wants(self, i)) continue;
                         push(self, i,
                              self.grad.middleRows(offsets[i],
                                                   self.parents[i]->value.rows()));
                       }
                     });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts.front().rows();
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_result(std::move(out), {parts.begin(), parts.end()},
                     [offsets](Node& self) {
                       for (size_t i = 0; i < self.parents.size(); ++i) {
                         if (!wants(self, i)) continue;
                         push(self, i,
                              self.grad.middleCols(offsets[i],
                                                   self.parents[i]->value.cols()));
                       }
                     });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw std::out_of_range("slice_rows: range outside matrix");
  }
  return make_result(a.value().middleRows(start, count), {a},
                     [start, count](Node& self) {
                       const Matrix& av = self.parents[0]->value;
                       Matrix g = Matrix::Zero(av.rows(), av.cols());
                       g.middleRows(start, count) = self.grad;
                       push(self, 0, g);
                     });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::out_of_range("slice_cols: range outside matrix");
  }
  return make_result(a.value().middleCols(start, count), {a},
                     [start, count](Node& self) {
                       const Matrix& av = self.parents[0]->value;
                       Matrix g = Matrix::Zero(av.rows(), av.cols());
                       g.middleCols(start, count) = self.grad;
                       push(self, 0, g);
                     });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw std::out_of_range("gather_rows: id outside table");
    }
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result(std::move(out), {table}, [idx](Node& self) {
    const Matrix& tv = self.parents[0]->value;
    Matrix g = Matrix::Zero(tv.rows(), tv.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
      g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
    push(self, 0, g);
  });
}

Var repeat_rows_each(const Var& a, Eigen::Index k) {
  const Matrix& av = a.value();
  Matrix out(av.rows() * k, av.cols());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    for (Eigen::Index j = 0; j < k; ++j) out.row(i * k + j) = av.row(i);
  }
  return make_result(std::move(out), {a}, [k](Node& self) {
    const Matrix& av = self.parents[0]->value;
    Matrix g = Matrix::Zero(av.rows(), av.cols());
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
      for (Eigen::Index j = 0; j < k; ++j) g.row(i) += self.grad.row(i * k + j);
    }
    push(self, 0, g);
  });
}

Var cross_entropy(const Var& logits, std::span<const int> targets) {
  const Matrix& z = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != z.rows()) {
    throw std::invalid_argument("cross_entropy: one target per row required");
  }
  Matrix probs(z.rows(), z.cols());
  double total = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    const double lse = m + std::log((z.row(i).array() - m).exp().sum());
    probs.row(i) = (z.row(i).array() - lse).exp();
    if (targets[i] >= 0) {
      if (targets[i] >= z.cols()) throw std::out_of_range("cross_entropy: target id");
      total += lse - z(i, targets[i]);
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: no scored rows");
  Matrix out(1, 1);
  out(0, 0) = total / count;
  std::vector<int> t(targets.begin(), targets.end());
  return make_result(std::move(out), {logits},
                     [probs = std::move(probs), t, count](Node& self) {
                       const double g = self.grad(0, 0) / count;
                       Matrix d = Matrix::Zero(probs.rows(), probs.cols());
                       for (Eigen::Index i = 0; i < probs.rows(); ++i) {
                         if (t[i] < 0) continue;
                         d.row(i) = probs.row(i) * g;
                         d(i, t[i]) -= g;
                       }
                       push(self, 0, d);
                     });
}

Var mean_all(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().mean();
  const double n = static_cast<double>(a.value().size());
  return make_result(std::move(out), {a}, [n](Node& self) {
    const Matrix& av = self.parents[0]->value;
    push(self, 0, Matrix::Constant(av.rows(), av.cols(), self.grad(0, 0) / n));
  });
}

Var sum_all(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result(std::move(out), {a}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    push(self, 0, Matrix::Constant(av.rows(), av.cols(), self.grad(0, 0)));
  });
}

}  // namespace gebc::ag
