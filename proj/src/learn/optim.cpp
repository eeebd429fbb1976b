#include "ssm/learn/optim.hpp"

#include <cmath>

namespace ssm::ad {

double global_norm(std::span<const double> g) {
  double s = 0.0;
  for (double x : g) s += x * x;
  return std::sqrt(s);
}

double Adam::step(ParamStore& store) {
  auto g = store.grads();
  auto w = store.values();
  for (const auto& seg : store.segments())
    for (std::size_t i = seg.offset; i < seg.offset + seg.size(); ++i)
      if (!std::isfinite(g[i]))
        throw NonFiniteGradientError("non-finite gradient in parameter '" + seg.name + "' at step " +
                                         std::to_string(t_ + 1) + "; lower the learning rate or check the inputs",
                                     seg.name);
  if (m_.size() != w.size()) {
    m_.assign(w.size(), 0.0);
    v_.assign(w.size(), 0.0);
  }
  const double norm = global_norm(g);
  const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& seg : store.segments()) {
    const double lr = cfg_.lr * seg.lr_scale;
    for (std::size_t i = seg.offset; i < seg.offset + seg.size(); ++i) {
      const double gi = g[i] * clip;
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * gi;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mh = m_[i] / c1, vh = v_[i] / c2;
      w[i] -= lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * w[i]);
    }
  }
  ++store.step;
  return norm;
}

}  // namespace ssm::ad
