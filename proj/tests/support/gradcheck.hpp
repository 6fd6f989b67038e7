#pragma once

// Central finite differences against tape gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "itpn/tensor.hpp"

namespace itpn::testing {

// ||a - n|| / (||a|| + ||n||); 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nn);
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

struct GradCheck {
  double worst = 0.0;  // largest relative error over inputs with a nonzero gradient
  std::string worst_input;
  std::size_t coords = 0;
  // Inputs whose analytic gradient vanishes (e.g. attention key biases under
  // softmax shift invariance). Their numeric gradient is compared with the
  // central-difference roundoff bound instead; zero_worst <= 1 means it stays within.
  std::size_t zero_inputs = 0;
  double zero_worst = 0.0;
};

// Roundoff of (L(x+h) - L(x-h)) / 2h with a 100x margin.
inline double fd_noise_bound(double loss_value, double h) {
  return 100.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(loss_value), 1.0) / h;
}

// `loss` must rebuild the graph from `inputs` on every call. At most
// `max_coords` coordinates per input are probed (0 = all).
inline GradCheck check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                                 const std::vector<std::string>& names = {}, double h = 1e-5,
                                 std::size_t max_coords = 0, std::uint64_t seed = 7) {
  for (auto& t : inputs) t.zero_grad();
  current_tape().clear();
  Tensor l0 = loss();
  const double base = l0.item();
  backward(l0);
  double global = 0.0;
  for (const auto& t : inputs)
    for (double g : t.grad()) global += g * g;
  global = std::sqrt(global);
  std::mt19937_64 rng(seed);
  GradCheck out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    const std::size_t n = t.numel();
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    if (max_coords > 0 && n > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    std::vector<double> analytic, numeric;
    const auto g = t.grad();
    for (auto i : coords) {
      analytic.push_back(g.empty() ? 0.0 : g[i]);
      NoGradGuard no_grad;
      auto d = t.data();
      const double orig = d[i];
      d[i] = orig + h;
      const double up = loss().item();
      d[i] = orig - h;
      const double down = loss().item();
      d[i] = orig;
      numeric.push_back((up - down) / (2.0 * h));
    }
    out.coords += coords.size();
    double an = 0.0, nn = 0.0;
    for (double a : analytic) an = std::max(an, std::abs(a));
    for (double x : numeric) nn = std::max(nn, std::abs(x));
    if (an <= 1e-12 * global) {
      ++out.zero_inputs;
      out.zero_worst = std::max(out.zero_worst, nn / fd_noise_bound(base, h));
      continue;
    }
    const double err = relative_error(analytic, numeric);
    if (err >= out.worst) {
      out.worst = err;
      out.worst_input = k < names.size() ? names[k] : "input " + std::to_string(k);
    }
  }
  return out;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = true) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = nd(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace itpn::testing
