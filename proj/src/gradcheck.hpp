#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace vizecg {

struct GradCheckReport {
    std::string name;
    std::vector<double> max_rel_err_per_input;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Builds the tensor under test from leaf inputs. Must be deterministic and
// re-runnable: the checker re-evaluates it for every finite-difference probe.
using OpBuilder = std::function<TensorPtr(Graph&, const std::vector<TensorPtr>&)>;

// Central-difference check of the recorded adjoints against an independent
// numeric derivative. Non-scalar outputs are reduced with a fixed random
// projection so the full Jacobian is exercised. Relative error uses
// |analytic - numeric| / max(|analytic|, |numeric|, 1).
GradCheckReport gradcheck(const std::string& name, const OpBuilder& builder,
                          std::vector<TensorPtr> inputs, uint64_t seed, double step = 1e-6,
                          double tol = 1e-6);

// Checks every differentiable tensor op at a random point per seed.
// Inputs are resampled away from relu kinks / clamp edges so the sampled
// point is differentiable.
std::vector<GradCheckReport> gradcheck_tensor_ops(uint64_t seed, double step = 1e-6,
                                                  double tol = 1e-6);

} // namespace vizecg
