#include "ssm/learn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ssm/core.hpp"

namespace ssm::ad {

double grad(const LossFn& loss, ParamStore& store) {
  store.zero_grad();
  Tape tape;
  Var l = loss(tape, store);
  if (l.is_complex() || l.real().size() != 1) throw std::invalid_argument("grad: loss must be a real scalar");
  tape.backward(l);
  tape.accumulate(store);
  return l.item();
}

double evaluate(const LossFn& loss, const ParamStore& store) {
  Tape tape(false);
  return loss(tape, store).item();
}

GradCheckResult finite_diff_check(const LossFn& loss, ParamStore& store, const GradCheckOptions& opts,
                                  const std::function<void(ParamStore&)>& corrupt) {
  if (!(opts.eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  grad(loss, store);
  if (corrupt) corrupt(store);
  const std::vector<double> analytic(store.grads().begin(), store.grads().end());

  std::vector<std::size_t> coords(store.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (opts.max_coords > 0 && coords.size() > static_cast<std::size_t>(opts.max_coords)) {
    std::mt19937_64 rng(derive_seed(opts.seed, "gradcheck"));
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opts.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckResult res;
  auto w = store.values();
  for (std::size_t i : coords) {
    const double saved = w[i];
    w[i] = saved + opts.eps;
    const double lp = evaluate(loss, store);
    w[i] = saved - opts.eps;
    const double lm = evaluate(loss, store);
    w[i] = saved;
    const double num = (lp - lm) / (2.0 * opts.eps);
    const double den = std::max({std::abs(analytic[i]), std::abs(num), opts.abs_floor});
    const double rel = std::abs(analytic[i] - num) / den;
    ++res.checked;
    if (rel > res.max_rel_error || !std::isfinite(rel)) {
      res.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
      res.worst_index = i;
      res.analytic = analytic[i];
      res.numeric = num;
      for (const auto& seg : store.segments())
        if (i >= seg.offset && i < seg.offset + seg.size()) res.worst_param = seg.name;
    }
  }
  return res;
}

}  // namespace ssm::ad
