#include "csn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace csn {

std::string GradCheckReport::summary() const {
  std::ostringstream out;
  out << (passed ? "pass" : "FAIL") << " max_rel_error=" << max_rel_error << " at " << worst_index
      << " (analytic " << analytic_at_worst << ", numeric " << numeric_at_worst << ", " << checked
      << " coords)";
  return out.str();
}

GradCheckReport grad_check_inplace(const std::function<Tensor()>& f, Tensor& target, double eps, double tol,
                                   double floor) {
  const bool saved_flag = target.requires_grad();
  target.set_requires_grad(true);
  target.zero_grad();
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor loss = f();
    tape.backward(loss);
    analytic = target.grad();
  }
  target.zero_grad();
  target.set_requires_grad(saved_flag);

  GradCheckReport report;
  auto& values = target.impl()->data;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double original = values[i];
    values[i] = original + eps;
    const double up = f().item();
    values[i] = original - eps;
    const double down = f().item();
    values[i] = original;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), floor});
    const double err = std::fabs(analytic[i] - numeric) / denom;
    if (i == 0 || err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = i;
      report.analytic_at_worst = analytic[i];
      report.numeric_at_worst = numeric;
    }
    ++report.checked;
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps, double tol,
                           double floor) {
  Tensor input = x.clone();
  return grad_check_inplace([&] { return f(input); }, input, eps, tol, floor);
}

}  // namespace csn
