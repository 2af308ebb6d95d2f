#pragma once

// Test-only finite-difference machinery. Independent of the analytic
// backward rules it checks: only forward evaluations are used.

#include <functional>

#include "advit/rng.hpp"
#include "advit/tensor.hpp"

namespace advit::testing {

// Central differences of a scalar-valued function of one tensor.
inline Tensor fd_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                      double step = 1e-5) {
  Tensor g(x.shape);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe.data[i];
    probe.data[i] = orig + step;
    const double up = f(probe);
    probe.data[i] = orig - step;
    const double down = f(probe);
    probe.data[i] = orig;
    g.data[i] = (up - down) / (2.0 * step);
  }
  return g;
}

inline Tensor random_tensor(advit::RngStream& rng, advit::Shape shape, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = lo + (hi - lo) * rng.next_double();
  return t;
}

// Fixed random probe direction turning a tensor-valued op into a scalar one.
inline Tensor random_probe(advit::RngStream& rng, const advit::Shape& shape) {
  return random_tensor(rng, shape, -1.0, 1.0);
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
  return s;
}

}  // namespace advit::testing
