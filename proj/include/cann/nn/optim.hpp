#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cann/error.hpp"

namespace cann::nn {

/// Adam with bias correction over a flat parameter vector.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(AdamState& s, std::span<double> params, std::span<const double> grads,
                      double lr) {
  if (params.size() != grads.size() || params.size() != s.m.size()) {
    throw ShapeError("adam_step: parameter, gradient and state sizes differ (" +
                     std::to_string(params.size()) + ", " + std::to_string(grads.size()) + ", " +
                     std::to_string(s.m.size()) + ")");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericalError("adam_step: non-finite gradient at index " + std::to_string(i));
    }
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
    const double mhat = s.m[i] / c1;
    const double vhat = s.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + s.eps);
  }
}

/// Reduce-on-plateau: after `patience` consecutive epochs without a strict
/// improvement of the validation loss, multiply the learning rate by `factor`.
struct PlateauScheduler {
  double current_lr;
  double factor;
  int patience = 2;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;

  PlateauScheduler(double lr, double factor_, int patience_ = 2)
      : current_lr(lr), factor(factor_), patience(patience_) {
    if (!(lr >= 0.0)) throw DataError("learning rate must be >= 0");
    if (!(factor > 0.0 && factor < 1.0)) throw DataError("plateau factor must be in (0, 1)");
    if (patience < 1) throw DataError("plateau patience must be >= 1");
  }

  /// Feeds one epoch's validation loss; returns true when the rate was cut.
  bool step(double epoch_val_loss) {
    if (epoch_val_loss < best_val_loss) {
      best_val_loss = epoch_val_loss;
      epochs_since_improvement = 0;
      return false;
    }
    if (++epochs_since_improvement >= patience) {
      current_lr *= factor;
      epochs_since_improvement = 0;
      return true;
    }
    return false;
  }
};

}  // namespace cann::nn
