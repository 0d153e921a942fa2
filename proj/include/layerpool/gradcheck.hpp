#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "layerpool/autodiff.hpp"

namespace layerpool {

struct GradCheckOptions {
  Real step = 1e-5;
  Real tolerance = 1e-4;
  // Denominator floor for the relative error, so that gradients near zero
  // are compared absolutely.
  Real floor = 1e-5;
};

struct GradCheckResult {
  std::string name;
  Real max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

/// Compares the tape gradient of `loss_fn` with central differences
/// (f(x+h) - f(x-h)) / 2h, element by element over every parameter.
/// `loss_fn` must rebuild the graph deterministically on each call.
GradCheckResult check_gradients(const std::string& name, std::span<Parameter* const> params,
                                const std::function<Var(Tape&)>& loss_fn, const GradCheckOptions& opt = {});

/// Finite-difference checks over every parameterised piece of the model:
/// embeddings, attention blocks, the full encoder, both pooling heads, the
/// classifier and the regularised loss, each at `seeds` random draws.
std::vector<GradCheckResult> run_gradient_suite(std::size_t seeds, const GradCheckOptions& opt = {});

}  // namespace layerpool
