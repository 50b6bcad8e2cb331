#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "scnaps/linalg.hpp"
#include "scnaps/tensor.hpp"

namespace scnaps::ad {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records primitive operations in execution order. backward() replays them in
// reverse, visiting each recorded operation at most once. A tape is owned by a
// single thread; build one per episode.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);

  // Seeds d(loss)/d(loss) = 1 and propagates. loss must be 1x1.
  void backward(const Var& loss);

  const Tensor& value(const Var& v) const { return nodes_[v.id_].value; }
  // Gradient of the last backward() w.r.t. v; zeros when v was unreachable.
  Tensor grad(const Var& v) const;
  bool requires_grad(const Var& v) const { return nodes_[v.id_].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Used by primitive implementations.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }
  void accumulate(const Var& v, const Tensor& g);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  Var push(Node node);

  std::deque<Node> nodes_;
};

// ---- primitives -----------------------------------------------------------
// Shapes are checked eagerly; a mismatch throws ShapeError naming the op.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);           // elementwise
Var add_row(const Var& a, const Var& row);     // n x m  +  1 x m
Var sub_row(const Var& a, const Var& row);     // n x m  -  1 x m
Var mul_row(const Var& a, const Var& row);     // n x m  .* 1 x m
Var scale(const Var& a, double s);
Var add_constant(const Var& a, const Tensor& c);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var outer(const Var& u, const Var& v);         // (1 x n)^T (1 x m) -> n x m

Var elu(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);
// Divides each row by its Euclidean norm; zero rows are an error.
Var normalize_rows(const Var& a);

// Mean over the set axis (rows) -> 1 x m. Each column is summed in sorted
// order, so the result is bit-identical under any permutation of the rows.
Var mean_over_rows(const Var& a);
Var sum_over_rows(const Var& a);  // -> 1 x m
Var sum_over_cols(const Var& a);  // -> n x 1
Var sum_all(const Var& a);        // -> 1 x 1

Var concat_cols(std::span<const Var> parts);
Var concat_cols(const Var& a, const Var& b);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);
Var gather_rows(const Var& a, std::span<const std::size_t> rows);

// Sum over rows of -log softmax(logits)[label]. logits: n x K.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

// X = A^{-1} B via Cholesky (with jitter escalation). The gradient w.r.t. A is
// the symmetrized -A^{-1} G X^T, so A is treated as a symmetric input.
Var spd_solve(const Var& a, const Var& b, const JitterPolicy& policy = {});
// Same, reusing a factor already computed from a's value.
Var spd_solve(const Var& a, const CholeskyFactor& factor, const Var& b);

double elu_value(double x);

}  // namespace scnaps::ad
