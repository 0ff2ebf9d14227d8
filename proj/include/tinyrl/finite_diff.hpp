#pragma once

// Central-difference gradient oracle used to check backward().

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "tinyrl/tensor.hpp"

namespace tinyrl {

// f is re-evaluated after each in-place perturbation of a parameter entry and
// must read the parameters through the pointers given. Entries are restored
// exactly afterwards. Throws NumericError if f is non-finite.
std::vector<Tensor> finite_diff_grad(const std::function<double()>& f, const std::vector<Tensor*>& params,
                                     double step = 1e-5);

// Same, restricted to the listed (tensor index, element index) coordinates.
std::vector<double> finite_diff_at(const std::function<double()>& f, const std::vector<Tensor*>& params,
                                   const std::vector<std::pair<std::size_t, std::size_t>>& coords,
                                   double step = 1e-5);

// ||a - b|| / max(||a||, ||b||), and 0 when both are zero.
double relative_error(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace tinyrl
