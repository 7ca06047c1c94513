#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace smseg {

using ScalarFn = std::function<double(std::span<const double>)>;

enum class Stencil {
  two_point,   // (f(x+h) - f(x-h)) / 2h
  five_point,  // (f(x-2h) - 8 f(x-h) + 8 f(x+h) - f(x+2h)) / 12h
};

/// Central-difference gradient along every coordinate.
std::vector<double> numeric_gradient(const ScalarFn& f, std::vector<double> x, double h,
                                     Stencil stencil = Stencil::five_point);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, 1e-8)
double max_relative_error(std::span<const double> numeric, std::span<const double> analytic);

struct GradCheckResult {
  std::string op;
  std::uint64_t seed = 0;
  double step = 1e-3;
  std::size_t parameters = 0;
  double max_rel_error = 0.0;
};

/// Builds a small random f64 fixture for `op` from `seed`, reduces the op's
/// output to a scalar and compares analytic against numeric gradients over
/// every input and parameter. Unknown ops throw ErrorCode::unsupported.
GradCheckResult grad_check(const std::string& op, std::uint64_t seed, double h = 1e-3,
                           Stencil stencil = Stencil::five_point);

/// Every op id accepted by grad_check.
const std::vector<std::string>& gradcheck_ops();

}  // namespace smseg
