#pragma once

// Weighted regression of -log p against log t or log^2 t, used to tell a
// log-rate decay (p ~ t^-C) from a log^2-rate one (p ~ exp(-C log^2 t)).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace voterlab {

enum class ScalingModel { kLog, kLogSquared };

inline std::string_view to_string(ScalingModel m) { return m == ScalingModel::kLog ? "log" : "log2"; }

inline ScalingModel parse_scaling_model(std::string_view s) {
  if (s == "log") return ScalingModel::kLog;
  if (s == "log2" || s == "log^2" || s == "log_squared") return ScalingModel::kLogSquared;
  throw std::invalid_argument("unknown scaling model: " + std::string(s));
}

struct ScalingPoint {
  double t = 0.0;
  double p_hat = 0.0;
  double std_error = 0.0;
};

struct ScalingFit {
  ScalingModel model = ScalingModel::kLog;
  double slope = 0.0;
  double slope_std_error = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::vector<std::pair<double, double>> points;  // (t, -log p_hat) actually used
  std::vector<double> residuals;                  // observed minus fitted, same order
  std::vector<std::string> warnings;

  std::size_t n_points() const noexcept { return points.size(); }
};

// Delta-method standard error of -log p from that of p.
inline double neg_log_std_error(double p_hat, double std_error) {
  if (!(p_hat > 0.0)) throw std::invalid_argument("neg_log_std_error: p_hat must be positive");
  return std_error / p_hat;
}

inline double scaling_regressor(ScalingModel model, double t) {
  const double l = std::log(t);
  return model == ScalingModel::kLog ? l : l * l;
}

struct LineFit {
  double slope = 0.0;
  double slope_std_error = 0.0;  // residual-scaled
  double intercept = 0.0;
  double r_squared = 0.0;        // weighted, clamped to [0, 1]
  std::vector<double> residuals;
};

// Weighted least-squares line y = a + b x.
inline LineFit fit_line(std::span<const double> xs, std::span<const double> ys, std::span<const double> ws) {
  const std::size_t n = xs.size();
  if (ys.size() != n || ws.size() != n) throw std::invalid_argument("fit_line: size mismatch");
  if (n < 3) throw std::invalid_argument("fit_line: need at least 3 points");
  double sw = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sw += ws[i];
    sx += ws[i] * xs[i];
    sy += ws[i] * ys[i];
  }
  const double mx = sx / sw;
  const double my = sy / sw;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxx += ws[i] * dx * dx;
    sxy += ws[i] * dx * dy;
    syy += ws[i] * dy * dy;
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("fit_line: all x values coincide");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  fit.residuals.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    fit.residuals[i] = ys[i] - (fit.intercept + fit.slope * xs[i]);
    ss_res += ws[i] * fit.residuals[i] * fit.residuals[i];
  }
  if (syy > 0.0)
    fit.r_squared = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  else
    fit.r_squared = ss_res == 0.0 ? 1.0 : 0.0;
  fit.slope_std_error = std::sqrt(ss_res / static_cast<double>(n - 2) / sxx);
  return fit;
}

// Weighted least squares with weights 1 / se(-log p)^2. When any point has a
// zero standard error (exact synthetic input) all weights are equal. Points
// with p_hat = 0 are dropped with a warning.
inline ScalingFit fit_scaling(std::span<const ScalingPoint> input, ScalingModel model) {
  ScalingFit fit;
  fit.model = model;
  std::vector<double> xs, ys, ws;
  bool any_zero_error = false;
  for (const auto& p : input) {
    if (!(p.t > 0.0)) throw std::invalid_argument("fit_scaling: t must be positive");
    if (p.p_hat <= 0.0) {
      fit.warnings.push_back("dropped t=" + std::to_string(p.t) + ": p_hat = 0 (Monte Carlo underflow)");
      continue;
    }
    const double se = neg_log_std_error(p.p_hat, p.std_error);
    any_zero_error = any_zero_error || se <= 0.0;
    xs.push_back(scaling_regressor(model, p.t));
    ys.push_back(-std::log(p.p_hat));
    ws.push_back(se > 0.0 ? 1.0 / (se * se) : 0.0);
    fit.points.emplace_back(p.t, ys.back());
  }
  if (xs.size() < 3) throw std::invalid_argument("fit_scaling: need at least 3 points with p_hat > 0");
  if (any_zero_error) ws.assign(xs.size(), 1.0);
  LineFit line;
  try {
    line = fit_line(xs, ys, ws);
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument("fit_scaling: all t values coincide");
  }
  fit.slope = line.slope;
  fit.slope_std_error = line.slope_std_error;
  fit.intercept = line.intercept;
  fit.r_squared = line.r_squared;
  fit.residuals = std::move(line.residuals);
  return fit;
}

// Residuals of a straight-line fit to a convex curve are positive at both
// ends and negative in the middle: signs +..+ -..- +..+ with exactly two
// sign changes. Exact zeros are not allowed.
inline bool convex_residual_pattern(std::span<const double> residuals) {
  if (residuals.size() < 3) return false;
  if (!(residuals.front() > 0.0 && residuals.back() > 0.0)) return false;
  int changes = 0;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    if (residuals[i] == 0.0) return false;
    if (i > 0 && (residuals[i] > 0.0) != (residuals[i - 1] > 0.0)) ++changes;
  }
  return changes == 2;
}

}  // namespace voterlab
