#include "scnaps/gradcheck.hpp"

#include <cmath>

#include "scnaps/errors.hpp"

namespace scnaps {

namespace {

double evaluate(const LossBuilder& loss, const std::vector<Tensor>& values) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  leaves.reserve(values.size());
  for (const Tensor& v : values) leaves.push_back(tape.constant(v));
  const double out = loss(tape, leaves).value().item();
  if (!std::isfinite(out)) throw NumericError("finite_difference_check: loss is not finite");
  return out;
}

}  // namespace

GradCheckReport finite_difference_check(const LossBuilder& loss, std::span<const Tensor> params,
                                        double step, double floor) {
  std::vector<Tensor> values(params.begin(), params.end());

  std::vector<Tensor> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const Tensor& v : values) leaves.push_back(tape.leaf(v));
    ad::Var out = loss(tape, leaves);
    if (!std::isfinite(out.value().item()))
      throw NumericError("finite_difference_check: loss is not finite");
    tape.backward(out);
    for (const ad::Var& l : leaves) analytic.push_back(tape.grad(l));
  }

  GradCheckReport report;
  for (std::size_t p = 0; p < values.size(); ++p) {
    for (std::size_t i = 0; i < values[p].size(); ++i) {
      const double saved = values[p][i];
      values[p][i] = saved + step;
      const double up = evaluate(loss, values);
      values[p][i] = saved - step;
      const double down = evaluate(loss, values);
      values[p][i] = saved;

      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[p][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double err = std::abs(a - numeric) / denom;
      ++report.coordinates;
      if (err > report.max_relative_error || report.coordinates == 1) {
        report.max_relative_error = err;
        report.worst_parameter = p;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace scnaps
