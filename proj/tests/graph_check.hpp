#pragma once

// Whole-graph finite-difference check: every parameter tensor and the input
// gradient are compared against central differences of the scalar loss.

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "sslgrade/loss.hpp"
#include "sslgrade/model.hpp"

namespace gradcheck {

struct GraphReport {
  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
};

inline sslgrade::CaeConfig miniature_cae(std::size_t size = 16) {
  sslgrade::CaeConfig c;
  c.input_size = size;
  c.stem_channels = 4;
  c.block_channels = {4, 8};
  c.bottleneck_channels = 8;
  return c;
}

inline void note(GraphReport& r, const std::string& name, double err) {
  ++r.checked;
  if (err >= r.worst) {
    r.worst = err;
    r.worst_name = name;
  }
}

// Reconstruction objective: MSE against a fixed target.
inline GraphReport check_cae(sslgrade::ModelGraph<double>& g, sslgrade::Tensor4<double> x,
                             const sslgrade::Tensor4<double>& target) {
  using namespace sslgrade;
  const auto loss = [&] { return mse_loss(forward(g, x).output(), target).value; };
  const auto acts = forward(g, x);
  const auto grads = backward(g, acts, mse_loss(acts.output(), target).grad);
  GraphReport r;
  auto params = parameters(g);
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<double> values(params[i].values.begin(), params[i].values.end());
    const auto sync = [&] { std::copy(values.begin(), values.end(), params[i].values.begin()); };
    const auto num = numeric(values, [&] {
      sync();
      return loss();
    });
    sync();
    note(r, params[i].name, relative_error(grads.params.values[i], num));
  }
  note(r, "input", relative_error(grads.input.storage(), numeric(x.storage(), loss)));
  return r;
}

// Classification objective: cross-entropy of the softmax output, with the
// analytic gradient injected at the logits as training does.
inline GraphReport check_classifier(sslgrade::ModelGraph<double>& g, sslgrade::Tensor4<double> x,
                                    const std::vector<int>& labels) {
  using namespace sslgrade;
  const auto loss = [&] { return cross_entropy_loss(forward(g, x).output(), labels).value; };
  const auto acts = forward(g, x);
  const auto ce = cross_entropy_loss(acts.output(), labels);
  BackwardOptions opts;
  opts.start = std::string(kLogits);
  const auto grads = backward(g, acts, ce.grad, opts);
  GraphReport r;
  auto params = parameters(g);
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<double> values(params[i].values.begin(), params[i].values.end());
    const auto sync = [&] { std::copy(values.begin(), values.end(), params[i].values.begin()); };
    const auto num = numeric(values, [&] {
      sync();
      return loss();
    });
    sync();
    note(r, params[i].name, relative_error(grads.params.values[i], num));
  }
  note(r, "input", relative_error(grads.input.storage(), numeric(x.storage(), loss)));
  return r;
}

// Zero-initialised biases put exact zeros in front of relus wherever the
// incoming activations are dead, which a central difference straddles.
// Gradients are checked at a generic point instead.
inline void jitter_biases(sslgrade::ModelGraph<double>& g, sslgrade::Rng& rng, double scale = 0.1) {
  for (auto& p : sslgrade::parameters(g))
    if (p.name.ends_with(".bias"))
      for (auto& v : p.values) v = rng.uniform(-scale, scale);
}

inline sslgrade::Tensor4<double> random_images(std::size_t n, std::size_t size, sslgrade::Rng& rng) {
  sslgrade::Tensor4<double> t(n, 3, size, size);
  for (auto& v : t.storage()) v = rng.uniform();
  return t;
}

}  // namespace gradcheck
