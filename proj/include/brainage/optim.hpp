#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "brainage/tensor.hpp"

namespace brainage {

/// Adam moment accumulators for one parameter tensor.
template <typename Scalar>
struct AdamState {
  using Vector = typename Tensor<Scalar>::Vector;

  Vector m;
  Vector v;
  long long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(Index size) : m(Vector::Zero(size)), v(Vector::Zero(size)) {}
};

/// One bias-corrected Adam update of param from its accumulated gradient.
template <typename Scalar>
void adam_step(Tensor<Scalar>& param, AdamState<Scalar>& state, double lr) {
  if (!param.has_grad()) fail(ErrorKind::MissingGradient, "adam_step on a parameter without gradient");
  if (state.m.size() != param.size() || state.v.size() != param.size())
    fail(ErrorKind::ShapeMismatch, "Adam state does not match the parameter");
  state.t += 1;
  const auto b1 = static_cast<Scalar>(state.beta1);
  const auto b2 = static_cast<Scalar>(state.beta2);
  const auto& g = param.grad();
  state.m = b1 * state.m + (Scalar(1) - b1) * g;
  state.v = b2 * state.v + (Scalar(1) - b2) * g.cwiseAbs2();
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(state.beta1, static_cast<double>(state.t)));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(state.beta2, static_cast<double>(state.t)));
  const auto step = static_cast<Scalar>(lr);
  const auto eps = static_cast<Scalar>(state.epsilon);
  param.data().array() -=
      step * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + eps);
}

/// Linear decay from initial_lr at epoch 0 to floor at total_epochs.
struct LrSchedule {
  double initial_lr = 1e-3;
  int total_epochs = 80;
  double floor = 0.0;
};

inline double lr_at(const LrSchedule& schedule, int epoch) {
  if (epoch < 0 || epoch > schedule.total_epochs)
    fail(ErrorKind::EpochOutOfRange, "epoch " + std::to_string(epoch) + " outside [0, " +
                                         std::to_string(schedule.total_epochs) + "]");
  const double ramp = schedule.initial_lr *
                      (1.0 - static_cast<double>(epoch) / static_cast<double>(schedule.total_epochs));
  return std::max(schedule.floor, ramp);
}

}  // namespace brainage
