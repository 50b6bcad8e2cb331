#include "scnaps/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "scnaps/errors.hpp"

namespace scnaps::ad {

namespace {

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                   b.shape_string());
}

void require_same(const char* op, const Var& a, const Var& b) {
  if (a.value().shape() != b.value().shape()) shape_fail(op, a.value(), b.value());
}

void require_row(const char* op, const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) shape_fail(op, a.value(), row.value());
}

void require_same_tape(const char* op, const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw ShapeError(std::string(op) + ": operands live on different tapes");
}

Tape& tape_of(const Var& v) {
  if (!v.valid()) throw ShapeError("operation on an empty Var");
  return *v.tape();
}

double sorted_sum(std::vector<double>& values) {
  const bool has_nan = std::any_of(values.begin(), values.end(), [](double v) { return std::isnan(v); });
  if (!has_nan) std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

}  // namespace

// ---- Var / Tape -------------------------------------------------------------

const Tensor& Var::value() const { return tape_of(*this).value(*this); }
bool Var::requires_grad() const { return tape_of(*this).requires_grad(*this); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return push(Node{std::move(value), {}, false, {}}); }

Var Tape::leaf(Tensor value) { return push(Node{std::move(value), {}, true, {}}); }

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape() != this) throw ShapeError("record: input belongs to another tape");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  Node node{std::move(value), {}, needs, {}};
  if (needs) node.backward = std::move(fn);
  return push(std::move(node));
}

void Tape::accumulate(const Var& v, const Tensor& g) {
  Node& n = nodes_[v.id_];
  if (!n.requires_grad) return;
  if (n.grad.empty() && !n.value.empty()) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw ShapeError("backward: loss belongs to another tape");
  if (loss.value().size() != 1)
    throw ShapeError("backward: loss must be 1x1, got " + loss.value().shape_string());
  for (Node& n : nodes_) n.grad = Tensor();
  accumulate(loss, Tensor::scalar(1.0));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id_];
  if (n.grad.empty()) return Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

// ---- elementwise ------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_tape("add", a, b);
  require_same("add", a, b);
  return tape_of(a).record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_tape("sub", a, b);
  require_same("sub", a, b);
  return tape_of(a).record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g * -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_tape("mul", a, b);
  require_same("mul", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    Tensor ga = g, gb = g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] *= b.value()[i];
      gb[i] *= a.value()[i];
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

Var add_row(const Var& a, const Var& row) {
  require_same_tape("add_row", a, row);
  require_row("add_row", a, row);
  Tensor out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += row.value()(0, c);
  return tape_of(a).record(std::move(out), {a, row}, [a, row](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (row.requires_grad()) {
      Tensor gr(1, g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += g(r, c);
      t.accumulate(row, gr);
    }
  });
}

Var sub_row(const Var& a, const Var& row) {
  require_same_tape("sub_row", a, row);
  require_row("sub_row", a, row);
  Tensor out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) -= row.value()(0, c);
  return tape_of(a).record(std::move(out), {a, row}, [a, row](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (row.requires_grad()) {
      Tensor gr(1, g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) -= g(r, c);
      t.accumulate(row, gr);
    }
  });
}

Var mul_row(const Var& a, const Var& row) {
  require_same_tape("mul_row", a, row);
  require_row("mul_row", a, row);
  Tensor out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) *= row.value()(0, c);
  return tape_of(a).record(std::move(out), {a, row}, [a, row](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& rv = row.value();
    if (a.requires_grad()) {
      Tensor ga = g;
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) *= rv(0, c);
      t.accumulate(a, ga);
    }
    if (row.requires_grad()) {
      Tensor gr(1, g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += g(r, c) * av(r, c);
      t.accumulate(row, gr);
    }
  });
}

Var scale(const Var& a, double s) {
  return tape_of(a).record(a.value() * s, {a}, [a, s](Tape& t, const Tensor& g) {
    t.accumulate(a, g * s);
  });
}

Var add_constant(const Var& a, const Tensor& c) {
  if (a.value().shape() != c.shape()) shape_fail("add_constant", a.value(), c);
  return tape_of(a).record(a.value() + c, {a}, [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

// ---- linear algebra ---------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_same_tape("matmul", a, b);
  if (a.cols() != b.rows()) shape_fail("matmul", a.value(), b.value());
  return tape_of(a).record(scnaps::matmul(a.value(), b.value()), {a, b},
                           [a, b](Tape& t, const Tensor& g) {
                             if (a.requires_grad())
                               t.accumulate(a, scnaps::matmul(g, b.value().transposed()));
                             if (b.requires_grad())
                               t.accumulate(b, scnaps::matmul(a.value().transposed(), g));
                           });
}

Var transpose(const Var& a) {
  return tape_of(a).record(a.value().transposed(), {a}, [a](Tape& t, const Tensor& g) {
    t.accumulate(a, g.transposed());
  });
}

Var outer(const Var& u, const Var& v) {
  if (u.rows() != 1 || v.rows() != 1) shape_fail("outer", u.value(), v.value());
  return matmul(transpose(u), v);
}

// ---- nonlinearities ---------------------------------------------------------

double elu_value(double x) { return x > 0.0 ? x : std::expm1(x); }

Var elu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = elu_value(v);
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor ga = g;
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= x[i] > 0.0 ? 1.0 : std::exp(x[i]);
    t.accumulate(a, ga);
  });
}

Var square(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= v;
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= 2.0 * a.value()[i];
    t.accumulate(a, ga);
  });
}

Var abs(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::abs(v);
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double x = a.value()[i];
      ga[i] *= x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
    }
    t.accumulate(a, ga);
  });
}

Var normalize_rows(const Var& a) {
  const Tensor& x = a.value();
  Tensor out = x;
  std::vector<double> norms(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row_span(r)) s += v * v;
    norms[r] = std::sqrt(s);
    if (!(norms[r] > 0.0))
      throw NumericError("normalize_rows: row " + std::to_string(r) + " of " + x.shape_string() +
                         " has zero norm");
    for (double& v : out.row_span(r)) v /= norms[r];
  }
  Tensor y = out;
  return tape_of(a).record(std::move(out), {a}, [a, y, norms](Tape& t, const Tensor& g) {
    Tensor ga(g.rows(), g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) dot += y(r, c) * g(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) = (g(r, c) - y(r, c) * dot) / norms[r];
    }
    t.accumulate(a, ga);
  });
}

// ---- reductions -------------------------------------------------------------

Var mean_over_rows(const Var& a) {
  const Tensor& x = a.value();
  if (x.rows() == 0) throw ShapeError("mean_over_rows: empty set " + x.shape_string());
  const double n = static_cast<double>(x.rows());
  Tensor out(1, x.cols());
  std::vector<double> column(x.rows());
  for (std::size_t c = 0; c < x.cols(); ++c) {
    for (std::size_t r = 0; r < x.rows(); ++r) column[r] = x(r, c);
    out(0, c) = sorted_sum(column) / n;
  }
  const std::size_t rows = x.rows();
  return tape_of(a).record(std::move(out), {a}, [a, rows, n](Tape& t, const Tensor& g) {
    Tensor ga(rows, g.cols());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) = g(0, c) / n;
    t.accumulate(a, ga);
  });
}

Var sum_over_rows(const Var& a) {
  const Tensor& x = a.value();
  Tensor out(1, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(0, c) += x(r, c);
  const std::size_t rows = x.rows();
  return tape_of(a).record(std::move(out), {a}, [a, rows](Tape& t, const Tensor& g) {
    Tensor ga(rows, g.cols());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) = g(0, c);
    t.accumulate(a, ga);
  });
}

Var sum_over_cols(const Var& a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, 0) += x(r, c);
  const std::size_t cols = x.cols();
  return tape_of(a).record(std::move(out), {a}, [a, cols](Tape& t, const Tensor& g) {
    Tensor ga(g.rows(), cols);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < cols; ++c) ga(r, c) = g(r, 0);
    t.accumulate(a, ga);
  });
}

Var sum_all(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const auto shape = a.value().shape();
  return tape_of(a).record(Tensor::scalar(s), {a}, [a, shape](Tape& t, const Tensor& g) {
    t.accumulate(a, Tensor(shape[0], shape[1], g.item()));
  });
}

// ---- structural -------------------------------------------------------------

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    require_same_tape("concat_cols", parts[0], p);
    if (p.rows() != rows) shape_fail("concat_cols", parts[0].value(), p.value());
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) out(r, off + c) = p.value()(r, c);
    off += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape_of(parts[0]).record(std::move(out), parts, [inputs](Tape& t, const Tensor& g) {
    std::size_t o = 0;
    for (const Var& p : inputs) {
      if (p.requires_grad()) {
        Tensor gp(g.rows(), p.cols());
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < p.cols(); ++c) gp(r, c) = g(r, o + c);
        t.accumulate(p, gp);
      }
      o += p.cols();
    }
  });
}

Var concat_cols(const Var& a, const Var& b) {
  const Var parts[] = {a, b};
  return concat_cols(std::span<const Var>(parts));
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    require_same_tape("concat_rows", parts[0], p);
    if (p.cols() != cols) shape_fail("concat_rows", parts[0].value(), p.value());
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + off * cols);
    off += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape_of(parts[0]).record(std::move(out), parts, [inputs, cols](Tape& t, const Tensor& g) {
    std::size_t o = 0;
    for (const Var& p : inputs) {
      if (p.requires_grad()) {
        Tensor gp(p.rows(), cols);
        std::copy(g.data().begin() + o * cols, g.data().begin() + (o + p.rows()) * cols,
                  gp.data().begin());
        t.accumulate(p, gp);
      }
      o += p.rows();
    }
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  if (begin > end || end > x.cols())
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + x.shape_string());
  Tensor out(x.rows(), end - begin);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = x(r, c);
  const auto shape = x.shape();
  return tape_of(a).record(std::move(out), {a}, [a, shape, begin](Tape& t, const Tensor& g) {
    Tensor ga(shape[0], shape[1]);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, begin + c) = g(r, c);
    t.accumulate(a, ga);
  });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  if (begin > end || end > x.rows())
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + x.shape_string());
  const std::size_t cols = x.cols();
  Tensor out(end - begin, cols,
             std::vector<double>(x.data().begin() + begin * cols, x.data().begin() + end * cols));
  const auto shape = x.shape();
  return tape_of(a).record(std::move(out), {a}, [a, shape, begin, cols](Tape& t, const Tensor& g) {
    Tensor ga(shape[0], shape[1]);
    std::copy(g.data().begin(), g.data().end(), ga.data().begin() + begin * cols);
    t.accumulate(a, ga);
  });
}

Var gather_rows(const Var& a, std::span<const std::size_t> rows) {
  const Tensor& x = a.value();
  Tensor out(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows())
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                       x.shape_string());
    std::copy(x.row_span(rows[i]).begin(), x.row_span(rows[i]).end(), out.row_span(i).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  const auto shape = x.shape();
  return tape_of(a).record(std::move(out), {a}, [a, idx, shape](Tape& t, const Tensor& g) {
    Tensor ga(shape[0], shape[1]);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < shape[1]; ++c) ga(idx[i], c) += g(i, c);
    t.accumulate(a, ga);
  });
}

// ---- loss -------------------------------------------------------------------

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  if (labels.size() != z.rows())
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     z.shape_string());
  Tensor probs(z.rows(), z.cols());
  double loss = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= z.cols())
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(y) + " out of range for " +
                       z.shape_string());
    double mx = -INFINITY;
    for (double v : z.row_span(r)) mx = std::max(mx, v);
    double s = 0.0;
    for (std::size_t c = 0; c < z.cols(); ++c) {
      probs(r, c) = std::exp(z(r, c) - mx);
      s += probs(r, c);
    }
    for (std::size_t c = 0; c < z.cols(); ++c) probs(r, c) /= s;
    loss += -(z(r, static_cast<std::size_t>(y)) - mx - std::log(s));
  }
  std::vector<int> ys(labels.begin(), labels.end());
  return tape_of(logits).record(Tensor::scalar(loss), {logits},
                                [logits, probs, ys](Tape& t, const Tensor& g) {
                                  Tensor gz = probs;
                                  for (std::size_t r = 0; r < gz.rows(); ++r)
                                    gz(r, static_cast<std::size_t>(ys[r])) -= 1.0;
                                  t.accumulate(logits, gz * g.item());
                                });
}

// ---- SPD solve --------------------------------------------------------------

Var spd_solve(const Var& a, const Var& b, const JitterPolicy& policy) {
  if (a.rows() != a.cols() || a.rows() != b.rows()) shape_fail("spd_solve", a.value(), b.value());
  return spd_solve(a, factor_spd(a.value(), policy), b);
}

Var spd_solve(const Var& a, const CholeskyFactor& factor, const Var& b) {
  require_same_tape("spd_solve", a, b);
  if (a.rows() != a.cols() || a.rows() != b.rows() || factor.dim() != a.rows())
    shape_fail("spd_solve", a.value(), b.value());
  auto shared = std::make_shared<const CholeskyFactor>(factor);
  Tensor x = cholesky_solve(*shared, b.value());
  Tensor x_saved = x;
  return tape_of(a).record(std::move(x), {a, b}, [a, b, shared, x_saved](Tape& t, const Tensor& g) {
    // dB = A^{-1} G ; dA = -dB X^T, symmetrized.
    Tensor gb = cholesky_solve(*shared, g);
    if (a.requires_grad()) {
      Tensor ga = scnaps::matmul(gb, x_saved.transposed());
      const std::size_t n = ga.rows();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
          const double s = -0.5 * (ga(i, j) + ga(j, i));
          ga(i, j) = s;
          ga(j, i) = s;
        }
      t.accumulate(a, ga);
    }
    t.accumulate(b, gb);
  });
}

}  // namespace scnaps::ad
