#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// Tensors are rank 0, 1 or 2. A rank-1 tensor of length n behaves as a 1 x n
// row wherever an operation needs a matrix. Every operation whose inputs
// include a tracked tensor records a node holding its inputs and a backward
// rule; `backward` orders those nodes topologically and sweeps them once in
// reverse.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace piqn {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool tracked = false);
  static Tensor filled(Shape shape, double value, bool tracked = false);
  static Tensor from(Shape shape, std::vector<double> values, bool tracked = false);
  static Tensor scalar(double value, bool tracked = false);
  static Tensor normal(Shape shape, double mean, double stddev, std::mt19937_64& rng,
                       bool tracked = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  // Matrix view: rank-1 [n] is 1 x n, rank-0 is 1 x 1.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data();
  std::span<const double> data() const;
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return data()[r * cols() + c]; }
  double item() const;

  bool tracked() const;
  void set_tracked(bool tracked);

  bool has_grad() const;
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // A fresh untracked tensor sharing no storage with this one.
  Tensor detach() const;
  Tensor clone(bool tracked) const;

  bool defined() const { return node_ != nullptr; }
  const std::string& op_name() const;
  const void* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;

  friend struct TensorAccess;
};

// Disables recording for its lifetime on the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

// Elementwise binary ops. `b` may equal `a`'s shape, be a row vector of
// length cols(a) (broadcast over rows), or hold a single element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);

// Softmax over each row. Entries equal to -inf receive exactly zero weight.
Tensor row_softmax(const Tensor& x);

// Normalizes each row to zero mean and unit variance, then applies the
// per-column gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);
// Row `r` of the result is `row` for every r < count.
Tensor repeat_row(const Tensor& row, std::size_t count);

Tensor sum(const Tensor& x);

// out[i][j] = sum_k relu(a[i][k] + b[j][k]) * w[k]; a: m x h, b: n x h, w: h.
Tensor pairwise_relu_score(const Tensor& a, const Tensor& b, const Tensor& w);

// -sum over rows r with row_mask[r] and all columns c of
//   t log p + (1 - t) log(1 - p), where t = (c == targets[r]).
Tensor binary_cross_entropy_rows(const Tensor& probs, std::span<const std::size_t> targets,
                                 std::span<const bool> row_mask);

// -sum_r log probs[r][labels[r]].
Tensor negative_log_likelihood_rows(const Tensor& probs, std::span<const std::size_t> labels);

// ---- differentiation ------------------------------------------------------

struct RecordEntry {
  std::string op;
  const void* node;
  std::vector<const void*> inputs;
};

// Operations reachable from a result, in execution-compatible topological order.
struct ComputationRecord {
  std::vector<RecordEntry> entries;
};

ComputationRecord record_of(const Tensor& result);

// Accumulates d(loss)/d(leaf) into every tracked leaf reachable from `loss`.
void backward(const Tensor& loss);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_parameter = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares analytic gradients of `loss_fn` with respect to `params` against
// central differences. `loss_fn` must rebuild its graph from the current
// parameter values on every call. Parameter gradients are reset first.
GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                           double eps);

// Single-argument form: f is evaluated at `point` and at its perturbations.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                           double eps);

}  // namespace piqn
