#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "sslgrade/error.hpp"
#include "sslgrade/model.hpp"

namespace sslgrade {

// theta <- theta - lr * g
template <class Real>
void sgd_step(std::span<Real> params, std::span<const Real> grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: parameter/gradient size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    params[i] = static_cast<Real>(params[i] - lr * grads[i]);
}

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moments mirror the parameter list; t counts completed steps.
template <class Real>
struct AdamState {
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
  std::size_t t = 0;
  AdamHyper hyper;

  AdamState() = default;
  explicit AdamState(const std::vector<std::size_t>& sizes, AdamHyper h = {}) : hyper(h) {
    for (auto n : sizes) {
      m.emplace_back(n, Real(0));
      v.emplace_back(n, Real(0));
    }
  }
};

// Bias-corrected Adam on one parameter tensor. `step` is the 1-based step
// number after increment.
template <class Real>
void adam_update(std::span<Real> params, std::span<const Real> grads, std::span<Real> m, std::span<Real> v,
                 std::size_t step, double lr, const AdamHyper& h) {
  if (params.size() != grads.size() || m.size() != params.size() || v.size() != params.size())
    throw ShapeError("adam_step: parameter/gradient/state size mismatch");
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double mi = h.beta1 * m[i] + (1.0 - h.beta1) * g;
    const double vi = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
    m[i] = static_cast<Real>(mi);
    v[i] = static_cast<Real>(vi);
    const double m_hat = mi / c1;
    const double v_hat = vi / c2;
    params[i] = static_cast<Real>(params[i] - lr * m_hat / (std::sqrt(v_hat) + h.epsilon));
  }
}

// Single-tensor convenience form.
template <class Real>
void adam_step(std::span<Real> params, std::span<const Real> grads, AdamState<Real>& state, double lr) {
  if (state.m.size() != 1) throw ShapeError("adam_step: state does not describe a single tensor");
  ++state.t;
  adam_update<Real>(params, grads, state.m[0], state.v[0], state.t, lr, state.hyper);
}

template <class Real>
AdamState<Real> make_adam_state(const ModelGraph<Real>& g, AdamHyper h = {}) {
  std::vector<std::size_t> sizes;
  for (const auto& p : parameters(g)) sizes.push_back(p.values.size());
  return AdamState<Real>(sizes, h);
}

template <class Real>
void sgd_step(ModelGraph<Real>& g, const GradientSet<Real>& grads, double lr) {
  auto params = parameters(g);
  if (params.size() != grads.size()) throw ShapeError("sgd_step: gradient set does not match graph");
  for (std::size_t i = 0; i < params.size(); ++i)
    sgd_step<Real>(params[i].values, std::span<const Real>(grads.values[i]), lr);
}

template <class Real>
void adam_step(ModelGraph<Real>& g, const GradientSet<Real>& grads, AdamState<Real>& state, double lr) {
  auto params = parameters(g);
  if (params.size() != grads.size() || state.m.size() != params.size())
    throw ShapeError("adam_step: gradient set or state does not match graph");
  ++state.t;
  for (std::size_t i = 0; i < params.size(); ++i)
    adam_update<Real>(params[i].values, std::span<const Real>(grads.values[i]), state.m[i], state.v[i], state.t, lr,
                      state.hyper);
}

// Rescales grads so their global L2 norm is at most max_norm. Returns the norm
// before clipping.
template <class Real>
double clip_by_global_norm(GradientSet<Real>& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) grads.scale(static_cast<Real>(max_norm / norm));
  return norm;
}

}  // namespace sslgrade
