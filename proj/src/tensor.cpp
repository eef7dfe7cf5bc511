#include "piqn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "piqn/errors.hpp"

namespace piqn {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool tracked = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

struct TensorAccess {
  static const NodePtr& node(const Tensor& t) { return t.node_; }
  static Tensor wrap(NodePtr n) { return Tensor(std::move(n)); }
};

namespace {

thread_local bool g_grad_enabled = true;

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

const NodePtr& node_of(const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument("operation on an undefined tensor");
  return TensorAccess::node(t);
}

// Builds a result node. The backward rule is only kept when some input is
// tracked and recording is enabled.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<NodePtr> inputs,
                   const char* op, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op;
  bool any_tracked = false;
  for (const auto& in : inputs) any_tracked = any_tracked || in->tracked;
  if (g_grad_enabled && any_tracked) {
    n->tracked = true;
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(fn);
  }
  return TensorAccess::wrap(std::move(n));
}

std::size_t mat_rows(const Shape& s) { return s.size() == 2 ? s[0] : 1; }
std::size_t mat_cols(const Shape& s) {
  if (s.size() == 2) return s[1];
  if (s.size() == 1) return s[0];
  return 1;
}

void require_matrix_like(const Tensor& x, const char* op) {
  if (x.rank() > 2) {
    throw DimensionError(std::string(op) + ": rank > 2 not supported, got " +
                         shape_string(x.shape()));
  }
}

enum class Broadcast { kSame, kRow, kScalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.numel() == 1) return Broadcast::kScalar;
  if (b.rank() <= 2 && mat_rows(b.shape()) == 1 && b.numel() == a.cols() && a.rank() == 2) {
    return Broadcast::kRow;
  }
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                       " and " + shape_string(b.shape()));
}

std::size_t b_index(Broadcast kind, std::size_t i, std::size_t cols) {
  switch (kind) {
    case Broadcast::kSame:
      return i;
    case Broadcast::kRow:
      return i % cols;
    case Broadcast::kScalar:
      return 0;
  }
  return 0;
}

template <class Forward, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* op, Forward forward, DA da,
                 DB db) {
  const Broadcast kind = broadcast_kind(a, b, op);
  const auto& na = node_of(a);
  const auto& nb = node_of(b);
  const std::size_t n = a.numel();
  const std::size_t cols = a.cols();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = forward(na->data[i], nb->data[b_index(kind, i, cols)]);
  return make_result(a.shape(), std::move(out), {na, nb}, op, [kind, n, cols, da, db](Node& self) {
    auto& x = *self.inputs[0];
    auto& y = *self.inputs[1];
    if (x.tracked) {
      auto& gx = x.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        gx[i] += self.grad[i] * da(x.data[i], y.data[b_index(kind, i, cols)]);
      }
    }
    if (y.tracked) {
      auto& gy = y.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = b_index(kind, i, cols);
        gy[j] += self.grad[i] * db(x.data[i], y.data[j]);
      }
    }
  });
}

template <class Forward, class Derivative>
Tensor unary_op(const Tensor& x, const char* op, Forward forward, Derivative derivative) {
  const auto& nx = node_of(x);
  std::vector<double> out(nx->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(nx->data[i]);
  // The derivative receives (input, output).
  return make_result(x.shape(), std::move(out), {nx}, op, [derivative](Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * derivative(in.data[i], self.data[i]);
    }
  });
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor() = default;

Tensor Tensor::zeros(Shape shape, bool tracked) { return filled(std::move(shape), 0.0, tracked); }

Tensor Tensor::filled(Shape shape, double value, bool tracked) {
  const std::size_t n = product(shape);
  return from(std::move(shape), std::vector<double>(n, value), tracked);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool tracked) {
  if (shape.size() > 2) throw DimensionError("tensors of rank > 2 are not supported");
  if (values.size() != product(shape)) {
    throw DimensionError("data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_string(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  n->tracked = tracked;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool tracked) { return from({}, {value}, tracked); }

Tensor Tensor::normal(Shape shape, double mean, double stddev, std::mt19937_64& rng,
                      bool tracked) {
  std::normal_distribution<double> dist(mean, stddev);
  std::vector<double> values(product(shape));
  for (auto& v : values) v = dist(rng);
  return from(std::move(shape), std::move(values), tracked);
}

const Shape& Tensor::shape() const { return node_of(*this)->shape; }
std::size_t Tensor::numel() const { return node_of(*this)->data.size(); }
std::size_t Tensor::rows() const { return mat_rows(shape()); }
std::size_t Tensor::cols() const { return mat_cols(shape()); }
std::span<double> Tensor::data() { return node_of(*this)->data; }
std::span<const double> Tensor::data() const { return node_of(*this)->data; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return data()[0];
}

bool Tensor::tracked() const { return node_of(*this)->tracked; }

void Tensor::set_tracked(bool tracked) {
  auto& n = *node_of(*this);
  if (!n.is_leaf()) throw std::logic_error("only leaf tensors can change tracking");
  n.tracked = tracked;
}

bool Tensor::has_grad() const {
  const auto& n = *node_of(*this);
  return !n.grad.empty() && n.grad.size() == n.data.size();
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) return {};
  return node_of(*this)->grad;
}

std::span<double> Tensor::mutable_grad() { return node_of(*this)->ensure_grad(); }

void Tensor::zero_grad() { node_of(*this)->grad.clear(); }

Tensor Tensor::detach() const { return clone(false); }

Tensor Tensor::clone(bool tracked) const {
  const auto& n = *node_of(*this);
  return from(n.shape, n.data, tracked);
}

const std::string& Tensor::op_name() const { return node_of(*this)->op; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix_like(a, "matmul");
  require_matrix_like(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  const auto& na = node_of(a);
  const auto& nb = node_of(b);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = na->data[i * k + p];
      if (av == 0.0) continue;
      const double* brow = nb->data.data() + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {na, nb}, "matmul", [m, k, n](Node& self) {
    auto& x = *self.inputs[0];
    auto& y = *self.inputs[1];
    const double* g = self.grad.data();
    if (x.tracked) {
      auto& gx = x.ensure_grad();
      // dA = dC * B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = y.data.data() + p * n;
          const double* grow = g + i * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          gx[i * k + p] += acc;
        }
      }
    }
    if (y.tracked) {
      auto& gy = y.ensure_grad();
      // dB = A^T * dC
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = x.data[i * k + p];
          if (av == 0.0) continue;
          const double* grow = g + i * n;
          double* gyrow = gy.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gyrow[j] += av * grow[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_matrix_like(x, "transpose");
  const std::size_t m = x.rows(), n = x.cols();
  const auto& nx = node_of(x);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = nx->data[i * n + j];
  return make_result({n, m}, std::move(out), {nx}, "transpose", [m, n](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary_op(
      x, "scale", [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double out) { return out * (1.0 - out); });
}

Tensor log(const Tensor& x) {
  return unary_op(
      x, "log", [](double v) { return std::log(v); }, [](double in, double) { return 1.0 / in; });
}

Tensor row_softmax(const Tensor& x) {
  require_matrix_like(x, "row_softmax");
  const std::size_t m = x.rows(), n = x.cols();
  const auto& nx = node_of(x);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = nx->data.data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw NumericError("row_softmax: row " + std::to_string(i) + " is entirely masked");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(row[j] - mx);
      out[i * n + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  return make_result(x.shape(), std::move(out), {nx}, "row_softmax", [m, n](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.data.data() + i * n;
      const double* dy = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (dy[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_matrix_like(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" +
                         shape_string(bias.shape()) + " do not match " + shape_string(x.shape()));
  }
  const auto& nx = node_of(x);
  const auto& ng = node_of(gain);
  const auto& nb = node_of(bias);
  std::vector<double> normed(m * n);
  std::vector<double> inv_std(m);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = nx->data.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      normed[i * n + j] = (row[j] - mean) * inv_std[i];
      out[i * n + j] = normed[i * n + j] * ng->data[j] + nb->data[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {nx, ng, nb}, "layer_norm",
      [m, n, normed = std::move(normed), inv_std = std::move(inv_std)](Node& self) {
        auto& in = *self.inputs[0];
        auto& gn = *self.inputs[1];
        auto& bs = *self.inputs[2];
        const double* dy = self.grad.data();
        if (gn.tracked) {
          auto& gg = gn.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += dy[i * n + j] * normed[i * n + j];
        }
        if (bs.tracked) {
          auto& gb = bs.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += dy[i * n + j];
        }
        if (in.tracked) {
          auto& gx = in.ensure_grad();
          std::vector<double> dn(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_dn = 0.0, mean_dn_x = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dn[j] = dy[i * n + j] * gn.data[j];
              mean_dn += dn[j];
              mean_dn_x += dn[j] * normed[i * n + j];
            }
            mean_dn /= static_cast<double>(n);
            mean_dn_x /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              gx[i * n + j] += inv_std[i] * (dn[j] - mean_dn - normed[i * n + j] * mean_dn_x);
            }
          }
        }
      });
}

// ---- structural -----------------------------------------------------------

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::vector<NodePtr> inputs;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix_like(p, "concat_cols");
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row counts differ, " + shape_string(parts[0].shape()) +
                           " vs " + shape_string(p.shape()));
    }
    widths.push_back(p.cols());
    inputs.push_back(node_of(p));
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j)
        out[i * total + offset + j] = inputs[k]->data[i * widths[k] + j];
    offset += widths[k];
  }
  Shape shape = parts[0].rank() == 2 ? Shape{m, total} : Shape{total};
  return make_result(std::move(shape), std::move(out), inputs, "concat_cols",
                     [m, total, widths](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         auto& in = *self.inputs[k];
                         if (in.tracked) {
                           auto& g = in.ensure_grad();
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < widths[k]; ++j)
                               g[i * widths[k] + j] += self.grad[i * total + off + j];
                         }
                         off += widths[k];
                       }
                     });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::vector<NodePtr> inputs;
  std::vector<std::size_t> sizes;
  std::size_t rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    require_matrix_like(p, "concat_rows");
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column counts differ, " +
                           shape_string(parts[0].shape()) + " vs " + shape_string(p.shape()));
    }
    inputs.push_back(node_of(p));
    sizes.push_back(p.numel());
    rows += p.rows();
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return make_result({rows, n}, std::move(out), inputs, "concat_rows", [sizes](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      auto& in = *self.inputs[k];
      if (in.tracked) {
        auto& g = in.ensure_grad();
        for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[off + i];
      }
      off += sizes[k];
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix_like(x, "slice_rows");
  if (begin > end || end > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_string(x.shape()));
  }
  const std::size_t n = x.cols();
  const auto& nx = node_of(x);
  std::vector<double> out(nx->data.begin() + static_cast<std::ptrdiff_t>(begin * n),
                          nx->data.begin() + static_cast<std::ptrdiff_t>(end * n));
  return make_result({end - begin, n}, std::move(out), {nx}, "slice_rows",
                     [begin, n](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         g[begin * n + i] += self.grad[i];
                     });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix_like(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (begin > end || end > n) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_string(x.shape()));
  }
  const std::size_t w = end - begin;
  const auto& nx = node_of(x);
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = nx->data[i * n + begin + j];
  return make_result({m, w}, std::move(out), {nx}, "slice_cols", [m, n, w, begin](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  require_matrix_like(table, "gather_rows");
  const std::size_t n = table.cols();
  const auto& nt = node_of(table);
  std::vector<double> out(indices.size() * n);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= table.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[r]) +
                           " out of range for " + shape_string(table.shape()));
    }
    std::copy_n(nt->data.begin() + static_cast<std::ptrdiff_t>(indices[r] * n), n,
                out.begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_result({indices.size(), n}, std::move(out), {nt}, "gather_rows",
                     [idx = std::move(idx), n](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::size_t j = 0; j < n; ++j)
                           g[idx[r] * n + j] += self.grad[r * n + j];
                     });
}

Tensor repeat_row(const Tensor& row, std::size_t count) {
  if (row.rows() != 1) throw DimensionError("repeat_row: expected a row, got " + shape_string(row.shape()));
  const std::size_t n = row.cols();
  const auto& nr = node_of(row);
  std::vector<double> out(count * n);
  for (std::size_t r = 0; r < count; ++r)
    std::copy(nr->data.begin(), nr->data.end(), out.begin() + static_cast<std::ptrdiff_t>(r * n));
  return make_result({count, n}, std::move(out), {nr}, "repeat_row", [count, n](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < count; ++r)
      for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
  });
}

Tensor sum(const Tensor& x) {
  const auto& nx = node_of(x);
  double total = 0.0;
  for (double v : nx->data) total += v;
  return make_result({}, {total}, {nx}, "sum", [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

// ---- fused head and loss kernels -------------------------------------------

Tensor pairwise_relu_score(const Tensor& a, const Tensor& b, const Tensor& w) {
  require_matrix_like(a, "pairwise_relu_score");
  require_matrix_like(b, "pairwise_relu_score");
  const std::size_t m = a.rows(), n = b.rows(), h = a.cols();
  if (b.cols() != h || w.numel() != h) {
    throw DimensionError("pairwise_relu_score: shapes " + shape_string(a.shape()) + ", " +
                         shape_string(b.shape()) + ", " + shape_string(w.shape()) +
                         " disagree");
  }
  const auto& na = node_of(a);
  const auto& nb = node_of(b);
  const auto& nw = node_of(w);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = na->data.data() + i * h;
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = nb->data.data() + j * h;
      double acc = 0.0;
      for (std::size_t k = 0; k < h; ++k) {
        const double s = ar[k] + br[k];
        if (s > 0.0) acc += s * nw->data[k];
      }
      out[i * n + j] = acc;
    }
  }
  return make_result({m, n}, std::move(out), {na, nb, nw}, "pairwise_relu_score",
                     [m, n, h](Node& self) {
                       auto& xa = *self.inputs[0];
                       auto& xb = *self.inputs[1];
                       auto& xw = *self.inputs[2];
                       std::vector<double> dummy;
                       auto& ga = xa.tracked ? xa.ensure_grad() : dummy;
                       auto& gb = xb.tracked ? xb.ensure_grad() : dummy;
                       auto& gw = xw.tracked ? xw.ensure_grad() : dummy;
                       for (std::size_t i = 0; i < m; ++i) {
                         const double* ar = xa.data.data() + i * h;
                         for (std::size_t j = 0; j < n; ++j) {
                           const double g = self.grad[i * n + j];
                           if (g == 0.0) continue;
                           const double* br = xb.data.data() + j * h;
                           for (std::size_t k = 0; k < h; ++k) {
                             const double s = ar[k] + br[k];
                             if (s <= 0.0) continue;
                             if (xa.tracked) ga[i * h + k] += g * xw.data[k];
                             if (xb.tracked) gb[j * h + k] += g * xw.data[k];
                             if (xw.tracked) gw[k] += g * s;
                           }
                         }
                       }
                     });
}

Tensor binary_cross_entropy_rows(const Tensor& probs, std::span<const std::size_t> targets,
                                 std::span<const bool> row_mask) {
  require_matrix_like(probs, "binary_cross_entropy_rows");
  const std::size_t m = probs.rows(), n = probs.cols();
  if (targets.size() != m || row_mask.size() != m) {
    throw DimensionError("binary_cross_entropy_rows: " + std::to_string(targets.size()) +
                         " targets for " + shape_string(probs.shape()));
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (row_mask[i] && targets[i] >= n) {
      throw AnnotationError("boundary target " + std::to_string(targets[i]) +
                            " outside a sentence of length " + std::to_string(n));
    }
  }
  const auto& np = node_of(probs);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!row_mask[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      const double p = np->data[i * n + j];
      total -= (j == targets[i]) ? std::log(p) : std::log1p(-p);
    }
  }
  std::vector<std::size_t> t(targets.begin(), targets.end());
  std::vector<bool> mask(row_mask.begin(), row_mask.end());
  return make_result({}, {total}, {np}, "binary_cross_entropy_rows",
                     [m, n, t = std::move(t), mask = std::move(mask)](Node& self) {
                       auto& in = *self.inputs[0];
                       auto& g = in.ensure_grad();
                       const double up = self.grad[0];
                       for (std::size_t i = 0; i < m; ++i) {
                         if (!mask[i]) continue;
                         for (std::size_t j = 0; j < n; ++j) {
                           const double p = in.data[i * n + j];
                           g[i * n + j] += up * ((j == t[i]) ? -1.0 / p : 1.0 / (1.0 - p));
                         }
                       }
                     });
}

Tensor negative_log_likelihood_rows(const Tensor& probs, std::span<const std::size_t> labels) {
  require_matrix_like(probs, "negative_log_likelihood_rows");
  const std::size_t m = probs.rows(), n = probs.cols();
  if (labels.size() != m) {
    throw DimensionError("negative_log_likelihood_rows: " + std::to_string(labels.size()) +
                         " labels for " + shape_string(probs.shape()));
  }
  const auto& np = node_of(probs);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] >= n) {
      throw AnnotationError("class label " + std::to_string(labels[i]) + " outside " +
                            std::to_string(n) + " classes");
    }
    total -= std::log(np->data[i * n + labels[i]]);
  }
  std::vector<std::size_t> y(labels.begin(), labels.end());
  return make_result({}, {total}, {np}, "negative_log_likelihood_rows",
                     [n, y = std::move(y)](Node& self) {
                       auto& in = *self.inputs[0];
                       auto& g = in.ensure_grad();
                       for (std::size_t i = 0; i < y.size(); ++i)
                         g[i * n + y[i]] -= self.grad[0] / in.data[i * n + y[i]];
                     });
}

// ---- differentiation ------------------------------------------------------

namespace {

std::vector<Node*> topological_order(const NodePtr& root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS; (node, next input index).
  std::vector<std::pair<Node*, std::size_t>> stack;
  if (!root->tracked) return order;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->tracked && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

ComputationRecord record_of(const Tensor& result) {
  ComputationRecord record;
  for (Node* n : topological_order(node_of(result))) {
    RecordEntry entry{n->op, n, {}};
    for (const auto& in : n->inputs) entry.inputs.push_back(in.get());
    record.entries.push_back(std::move(entry));
  }
  return record;
}

void backward(const Tensor& loss) {
  const auto& root = node_of(loss);
  if (root->data.size() != 1) {
    throw DimensionError("backward: loss must be a scalar, got shape " +
                         shape_string(root->shape));
  }
  if (!root->tracked) throw std::invalid_argument("backward: loss is not tracked");
  const auto order = topological_order(root);
  // Interior gradients are per-sweep; leaves accumulate across calls.
  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
  }
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
  }
}

GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                           double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) {
    throw std::invalid_argument("grad_check: eps must be positive and finite");
  }
  for (auto& p : params) p.zero_grad();
  {
    const Tensor loss = loss_fn();
    if (!std::isfinite(loss.item())) throw NumericError("grad_check: loss is not finite");
    backward(loss);
  }
  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const std::vector<double> analytic =
        p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                     : std::vector<double>(p.numel(), 0.0);
    auto values = p.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = loss_fn().item();
      values[i] = saved - eps;
      const double minus = loss_fn().item();
      values[i] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("grad_check: non-finite evaluation at parameter " +
                           std::to_string(pi) + " index " + std::to_string(i));
      }
      const double numeric = (plus - minus) / (2.0 * eps);
      const double err =
          std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
      if (err > result.max_relative_error || (pi == 0 && i == 0)) {
        result = {err, pi, i, analytic[i], numeric};
      }
    }
  }
  return result;
}

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                           double eps) {
  Tensor x = point.clone(true);
  std::vector<Tensor> params{x};
  return grad_check([&] { return f(x); }, params, eps);
}

}  // namespace piqn
