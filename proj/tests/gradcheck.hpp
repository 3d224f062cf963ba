#pragma once

#include <planealign/autodiff.hpp>
#include <planealign/rng.hpp>

#include <functional>
#include <vector>

namespace planealign::testing {

/// Builds a scalar loss on `tape` from leaf variables holding `inputs`.
using LossBuilder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

struct GradCheck {
  double rel_err = 0.0;  // |analytic - numeric| / max(|analytic|, |numeric|, floor)
  double analytic_norm = 0.0;
  int coords = 0;
};

inline double evaluate(const LossBuilder& f, const std::vector<MatX>& inputs) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const MatX& x : inputs) vars.push_back(tape.constant(x));
  return f(tape, vars).item();
}

/// Central differences on up to `per_input` random coordinates of each
/// selected input; errors are compared norm-wise over the sampled set.
inline GradCheck check_gradient(const LossBuilder& f, std::vector<MatX> inputs,
                                const std::vector<bool>& differentiate, std::uint64_t seed,
                                int per_input = 24, double step = 1e-4) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    vars.push_back(differentiate[k] ? tape.variable(inputs[k]) : tape.constant(inputs[k]));
  tape.backward(f(tape, vars));

  Rng rng(seed, 0x9cad);
  VecX analytic(0), numeric(0);
  std::vector<double> a, n;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!differentiate[k]) continue;
    const MatX grad = vars[k].grad();
    const auto size = std::uint64_t(inputs[k].size());
    const int count = int(std::min<std::uint64_t>(size, std::uint64_t(per_input)));
    for (int c = 0; c < count; ++c) {
      const auto i = Eigen::Index(size <= std::uint64_t(per_input) ? std::uint64_t(c) : rng.below(size));
      const double orig = inputs[k].data()[i];
      inputs[k].data()[i] = orig + step;
      const double up = evaluate(f, inputs);
      inputs[k].data()[i] = orig - step;
      const double down = evaluate(f, inputs);
      inputs[k].data()[i] = orig;
      a.push_back(grad.data()[i]);
      n.push_back((up - down) / (2.0 * step));
    }
  }
  analytic = Eigen::Map<VecX>(a.data(), Eigen::Index(a.size()));
  numeric = Eigen::Map<VecX>(n.data(), Eigen::Index(n.size()));
  GradCheck out;
  out.coords = int(a.size());
  out.analytic_norm = analytic.norm();
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-8});
  out.rel_err = (analytic - numeric).norm() / scale;
  return out;
}

}  // namespace planealign::testing
