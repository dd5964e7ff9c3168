#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tsan/core/ops.hpp"

namespace tsan {

// Central-difference gradient verification. Always runs in 64-bit: callers
// re-instantiate the function under test with T = double.
struct GradcheckReport {
  double max_rel_err = 0.0;
  int checked = 0;
  int skipped = 0;  // coordinates rejected by the curvature filter

  bool pass(double tol = 1e-4) const { return checked > 0 && max_rel_err < tol; }
};

// Compares analytic gradients against (f(x+h)-f(x-h))/2h for every coordinate
// pointed to by `coords`. Relative error uses max(|a|,|n|,1e-8) as the
// denominator. The perturbed evaluations run under the kink-signature
// tracker: a differing ReLU/MAE sign pattern between f(x+h) and f(x-h) means
// the step crossed a subgradient kink, where the central difference does not
// estimate the one-sided derivative. The step is then shrunk until both
// evaluations land in the same linear region; coordinates sitting directly on
// a kink are skipped and counted.
inline GradcheckReport check_coordinates(const std::function<double()>& f,
                                         const std::vector<double*>& coords,
                                         const std::vector<double>& analytic, double h = 1e-3) {
  contract(coords.size() == analytic.size(), "gradcheck: coords/analytic size mismatch");
  GradcheckReport rep;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    double* p = coords[i];
    const double saved = *p;
    double numeric = 0;
    bool valid = false;
    double step = h;
    for (int attempt = 0; attempt < 5 && !valid; ++attempt, step *= 0.25) {
      *p = saved + step;
      kinksig::begin();
      const double fp = f();
      const std::uint64_t sig_plus = kinksig::end();
      *p = saved - step;
      kinksig::begin();
      const double fm = f();
      const std::uint64_t sig_minus = kinksig::end();
      *p = saved;
      if (sig_plus == sig_minus) {
        numeric = (fp - fm) / (2.0 * step);
        valid = true;
      }
    }
    if (!valid) {
      ++rep.skipped;
      continue;
    }
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > rep.max_rel_err) rep.max_rel_err = rel;
    ++rep.checked;
  }
  return rep;
}

// Checks d(loss)/dx for every coordinate of x, where make_loss builds a
// scalar loss from an input leaf.
template <typename MakeLoss>
GradcheckReport gradcheck(MakeLoss&& make_loss, Tensor<double>& x, double h = 1e-3) {
  std::vector<double> analytic;
  {
    Tape<double> t;
    Value xv = t.leaf(x, true);
    Value loss = make_loss(t, xv);
    contract(t.shape(loss).rank() == 0, "gradcheck: loss must be scalar");
    t.backward(loss);
    analytic = t.grad(xv);
  }
  if (analytic.empty()) analytic.assign(x.data.size(), 0.0);

  auto f = [&]() {
    Tape<double> t;
    Value xv = t.leaf(x, false);
    Value loss = make_loss(t, xv);
    return t.val(loss).data[0];
  };
  std::vector<double*> coords;
  coords.reserve(x.data.size());
  for (auto& v : x.data) coords.push_back(&v);
  return check_coordinates(f, coords, analytic, h);
}

}  // namespace tsan
