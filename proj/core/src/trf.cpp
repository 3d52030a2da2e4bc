#include "factorfit/trf.hpp"

#include "factorfit/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

namespace factorfit::trf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kMaxInnerSteps = 30;
constexpr double kIllConditioned = 1e12;

std::vector<double> to_std(const Vector& x) { return {x.data(), x.data() + x.size()}; }

struct Bounds {
  Vector lb;
  Vector ub;
};

Bounds resolve_bounds(const LeastSquaresProblem& p) {
  Bounds b{p.lower.size() ? p.lower : Vector::Constant(p.n_vars, -kInf),
           p.upper.size() ? p.upper : Vector::Constant(p.n_vars, kInf)};
  if (b.lb.size() != p.n_vars || b.ub.size() != p.n_vars)
    throw ConfigError("bounds must have n_vars = " + std::to_string(p.n_vars) + " entries");
  for (Index i = 0; i < p.n_vars; ++i)
    if (!(b.lb(i) < b.ub(i)))
      throw ConfigError("lower bound must be below upper bound for variable " + std::to_string(i));
  return b;
}

Vector eval_residual(const LeastSquaresProblem& p, const Vector& x) {
  Vector r = p.residual_fn(x);
  if (r.size() != p.n_residuals)
    throw ShapeError("residual_fn returned " + std::to_string(r.size()) + " entries, expected " +
                     std::to_string(p.n_residuals));
  if (!r.allFinite()) throw EvaluationError("residual_fn returned non-finite values", to_std(x));
  return r;
}

Matrix eval_jacobian(const LeastSquaresProblem& p, const Vector& x, const Vector& r,
                     const TrfConfig& c) {
  Matrix j = p.jacobian_fn ? p.jacobian_fn(x) : finite_difference_jacobian(p, x, r, c.finite_difference_step);
  if (j.rows() != p.n_residuals || j.cols() != p.n_vars)
    throw ShapeError("jacobian_fn returned " + std::to_string(j.rows()) + "x" +
                     std::to_string(j.cols()) + ", expected " + std::to_string(p.n_residuals) +
                     "x" + std::to_string(p.n_vars));
  if (!j.allFinite()) throw EvaluationError("jacobian_fn returned non-finite values", to_std(x));
  return j;
}

bool in_bounds(const Vector& x, const Bounds& b) {
  return ((x.array() >= b.lb.array()) && (x.array() <= b.ub.array())).all();
}

// Smallest t >= 0 with x + t s on a bound, and which variables hit it
// (-1 lower, +1 upper, 0 none).
double step_size_to_bound(const Vector& x, const Vector& s, const Bounds& b, Eigen::VectorXi* hits) {
  const Index n = x.size();
  Vector steps = Vector::Constant(n, kInf);
  for (Index i = 0; i < n; ++i)
    if (s(i) != 0.0) steps(i) = std::max((b.lb(i) - x(i)) / s(i), (b.ub(i) - x(i)) / s(i));
  const double m = steps.minCoeff();
  if (hits) {
    hits->setZero(n);
    for (Index i = 0; i < n; ++i)
      if (steps(i) == m) (*hits)(i) = s(i) > 0 ? 1 : (s(i) < 0 ? -1 : 0);
  }
  return m;
}

// Positive root t of ||x + t s|| = delta.
double to_trust_region(const Vector& x, const Vector& s, double delta) {
  const double a = s.squaredNorm();
  const double b = x.dot(s);
  const double c = std::min(x.squaredNorm() - delta * delta, 0.0);
  const double d = std::sqrt(b * b - a * c);
  const double q = -(b + std::copysign(d, b));
  const double t1 = q / a;
  const double t2 = c / q;
  return std::max(t1, t2);
}

// Nudges entries that sit on (or beyond) a bound to the nearest interior float.
Vector make_strictly_feasible(Vector x, const Bounds& b) {
  for (Index i = 0; i < x.size(); ++i) {
    if (x(i) <= b.lb(i)) x(i) = std::nextafter(b.lb(i), b.ub(i));
    if (x(i) >= b.ub(i)) x(i) = std::nextafter(b.ub(i), b.lb(i));
    if (x(i) < b.lb(i) || x(i) > b.ub(i)) x(i) = 0.5 * (b.lb(i) + b.ub(i));
  }
  return x;
}

// Coleman-Li scaling: distance to the bound the gradient points toward.
void scaling_vector(const Vector& x, const Vector& g, const Bounds& b, Vector& v, Vector& dv) {
  const Index n = x.size();
  v.setOnes(n);
  dv.setZero(n);
  for (Index i = 0; i < n; ++i) {
    if (g(i) < 0 && std::isfinite(b.ub(i))) {
      v(i) = b.ub(i) - x(i);
      dv(i) = -1;
    } else if (g(i) > 0 && std::isfinite(b.lb(i))) {
      v(i) = x(i) - b.lb(i);
      dv(i) = 1;
    }
  }
}

// Quadratic model 0.5 s^T (J^T J + diag) s + g^T s.
double evaluate_quadratic(const Matrix& j, const Vector& g, const Vector& s, const Vector& diag) {
  const double js = (j * s).squaredNorm();
  return 0.5 * (js + s.dot(diag.cwiseProduct(s))) + g.dot(s);
}

struct Quadratic1d {
  double a = 0, b = 0, c = 0;
};

// The model along s0 + t s as a t^2 + b t + c.
Quadratic1d quadratic_along(const Matrix& j, const Vector& g, const Vector& s, const Vector& diag,
                            const Vector* s0) {
  const Vector v = j * s;
  Quadratic1d q;
  q.a = 0.5 * (v.squaredNorm() + s.dot(diag.cwiseProduct(s)));
  q.b = g.dot(s);
  if (s0) {
    const Vector u = j * *s0;
    q.b += u.dot(v) + s0->dot(diag.cwiseProduct(s));
    q.c = 0.5 * u.squaredNorm() + g.dot(*s0) + 0.5 * s0->dot(diag.cwiseProduct(*s0));
  }
  return q;
}

std::pair<double, double> minimize_1d(const Quadratic1d& q, double lo, double hi) {
  double best_t = lo;
  double best_y = lo * (q.a * lo + q.b) + q.c;
  auto consider = [&](double t) {
    const double y = t * (q.a * t + q.b) + q.c;
    if (y < best_y) {
      best_y = y;
      best_t = t;
    }
  };
  consider(hi);
  if (q.a != 0.0) {
    const double e = -0.5 * q.b / q.a;
    if (lo < e && e < hi) consider(e);
  }
  return {best_t, best_y};
}

// min 0.5 p^T B p + g^T p subject to ||p|| <= delta, p in R^2.
Eigen::Vector2d solve_trust_region_2d(const Eigen::Matrix2d& B, const Eigen::Vector2d& g,
                                      double delta) {
  Eigen::LLT<Eigen::Matrix2d> llt(B);
  if (llt.info() == Eigen::Success) {
    const Eigen::Vector2d p = -llt.solve(g);
    if (p.squaredNorm() <= delta * delta) return p;
  }
  // Boundary solution: p = delta (2t/(1+t^2), (1-t^2)/(1+t^2)) turns the
  // stationarity condition into a quartic in t.
  const double a = B(0, 0) * delta * delta;
  const double b = B(0, 1) * delta * delta;
  const double c = B(1, 1) * delta * delta;
  const double d = g(0) * delta;
  const double f = g(1) * delta;
  std::vector<double> coeffs = {-b + d, 2 * (a - c + f), 6 * b, 2 * (-a + c + f), -b - d};
  const double scale = std::max({std::abs(coeffs[0]), std::abs(coeffs[1]), std::abs(coeffs[2]),
                                 std::abs(coeffs[3]), std::abs(coeffs[4])});
  std::vector<Eigen::Vector2d> candidates;
  candidates.emplace_back(0.0, -delta);  // t -> infinity
  std::size_t lead = 0;
  while (lead < coeffs.size() && std::abs(coeffs[lead]) <= 1e-14 * scale) ++lead;
  const int degree = static_cast<int>(coeffs.size() - lead) - 1;
  auto point = [&](double t) {
    const double den = 1 + t * t;
    return Eigen::Vector2d(delta * 2 * t / den, delta * (1 - t * t) / den);
  };
  if (degree >= 1) {
    Matrix companion = Matrix::Zero(degree, degree);
    for (int i = 0; i < degree; ++i)
      companion(0, i) = -coeffs[lead + 1 + static_cast<std::size_t>(i)] / coeffs[lead];
    for (int i = 1; i < degree; ++i) companion(i, i - 1) = 1.0;
    Eigen::EigenSolver<Matrix> es(companion, false);
    for (Index i = 0; i < es.eigenvalues().size(); ++i) {
      const auto z = es.eigenvalues()(i);
      if (std::abs(z.imag()) <= 1e-8 * (1.0 + std::abs(z.real()))) candidates.push_back(point(z.real()));
    }
  }
  Eigen::Vector2d best = candidates.front();
  double best_value = kInf;
  for (const auto& p : candidates) {
    const double value = 0.5 * p.dot(B * p) + g.dot(p);
    if (value < best_value) {
      best_value = value;
      best = p;
    }
  }
  return best;
}

// Gauss-Newton step of the augmented system [J_h; diag(sqrt(diag_h))] p = -[f; 0].
Vector gauss_newton_step(const Matrix& j_h, const Vector& diag_h, const Vector& f) {
  const Index m = j_h.rows();
  const Index n = j_h.cols();
  Matrix aug(m + n, n);
  aug.topRows(m) = j_h;
  aug.bottomRows(n) = diag_h.cwiseSqrt().asDiagonal();
  Vector rhs = Vector::Zero(m + n);
  rhs.head(m) = -f;
  Eigen::ColPivHouseholderQR<Matrix> qr(aug);
  const Vector r_diag = qr.matrixR().diagonal().cwiseAbs();
  const double rmax = r_diag.size() ? r_diag(0) : 0.0;
  const double rmin = r_diag.size() ? r_diag(r_diag.size() - 1) : 0.0;
  if (rmax > 0.0 && (rmin == 0.0 || rmax / rmin > kIllConditioned)) {
    // Levenberg damping caps the effective condition number.
    Matrix damped(m + 2 * n, n);
    damped.topRows(m + n) = aug;
    damped.bottomRows(n) = Matrix::Identity(n, n) * (rmax * 1e-6);
    Vector drhs = Vector::Zero(m + 2 * n);
    drhs.head(m) = -f;
    return damped.colPivHouseholderQr().solve(drhs);
  }
  return qr.solve(rhs);
}

struct Step {
  Vector step;
  Vector step_h;
  double predicted = 0.0;
};

Step select_step(const Vector& x, const Matrix& j_h, const Vector& diag_h, const Vector& g_h,
                 Vector p, Vector p_h, const Vector& d, double delta, const Bounds& b,
                 double theta) {
  if (in_bounds(x + p, b)) return {p, p_h, -evaluate_quadratic(j_h, g_h, p_h, diag_h)};

  Eigen::VectorXi hits;
  const double p_stride = step_size_to_bound(x, p, b, &hits);

  Vector r_h = p_h;
  for (Index i = 0; i < r_h.size(); ++i)
    if (hits(i) != 0) r_h(i) = -r_h(i);
  Vector r = d.cwiseProduct(r_h);

  p *= p_stride;
  p_h *= p_stride;
  const Vector x_on_bound = x + p;

  const double to_tr = to_trust_region(p_h, r_h, delta);
  const double to_bound = step_size_to_bound(x_on_bound, r, b, nullptr);

  double r_stride = std::min(to_bound, to_tr);
  double r_lo = 0.0;
  double r_hi = -1.0;
  if (r_stride > 0) {
    r_lo = (1 - theta) * p_stride / r_stride;
    r_hi = r_stride == to_bound ? theta * to_bound : to_tr;
  }
  double r_value = kInf;
  if (r_lo <= r_hi) {
    const auto q = quadratic_along(j_h, g_h, r_h, diag_h, &p_h);
    const auto [t, value] = minimize_1d(q, r_lo, r_hi);
    r_value = value;
    r_h = p_h + t * r_h;
    r = d.cwiseProduct(r_h);
  }

  p *= theta;
  p_h *= theta;
  const double p_value = evaluate_quadratic(j_h, g_h, p_h, diag_h);

  Vector ag_h = -g_h;
  Vector ag = d.cwiseProduct(ag_h);
  const double ag_to_tr = delta / ag_h.norm();
  const double ag_to_bound = step_size_to_bound(x, ag, b, nullptr);
  const double ag_stride_max = ag_to_bound < ag_to_tr ? theta * ag_to_bound : ag_to_tr;
  const auto [ag_stride, ag_value] =
      minimize_1d(quadratic_along(j_h, g_h, ag_h, diag_h, nullptr), 0.0, ag_stride_max);
  ag_h *= ag_stride;
  ag *= ag_stride;

  if (p_value < r_value && p_value < ag_value) return {p, p_h, -p_value};
  if (r_value < p_value && r_value < ag_value) return {r, r_h, -r_value};
  return {ag, ag_h, -ag_value};
}

std::pair<double, double> update_radius(double delta, double actual, double predicted,
                                        double step_norm, bool bound_hit) {
  double ratio = 0.0;
  if (predicted > 0)
    ratio = actual / predicted;
  else if (predicted == 0 && actual == 0)
    ratio = 1.0;
  if (ratio < 0.25)
    delta = 0.25 * step_norm;
  else if (ratio > 0.75 && bound_hit)
    delta *= 2.0;
  return {delta, ratio};
}

double projected_gradient_norm(const Vector& x, const Vector& g, const Bounds& b) {
  const Vector moved = (x - g).cwiseMax(b.lb).cwiseMin(b.ub);
  return (x - moved).cwiseAbs().maxCoeff();
}

void validate(const TrfConfig& c) {
  if (c.max_iterations < 0) throw ConfigError("max_iterations must be >= 0");
  if (!(c.gradient_tolerance > 0) || !(c.step_tolerance > 0) || !(c.cost_tolerance > 0))
    throw ConfigError("solver tolerances must be > 0");
  if (!(c.initial_trust_radius > 0)) throw ConfigError("initial_trust_radius must be > 0");
  if (!(c.finite_difference_step > 0)) throw ConfigError("finite_difference_step must be > 0");
}

}  // namespace

std::string_view to_string(Termination t) noexcept {
  switch (t) {
    case Termination::gradient: return "gradient";
    case Termination::step: return "step";
    case Termination::cost: return "cost";
    case Termination::max_iterations: return "max_iterations";
  }
  return "unknown";
}

Matrix finite_difference_jacobian(const LeastSquaresProblem& problem, const Vector& x,
                                  const Vector& r, double relative_step) {
  const Bounds b = resolve_bounds(problem);
  Matrix j(problem.n_residuals, problem.n_vars);
  Vector xp = x;
  for (Index i = 0; i < problem.n_vars; ++i) {
    double h = relative_step * std::max(1.0, std::abs(x(i)));
    if (x(i) + h > b.ub(i)) h = -h;
    xp(i) = x(i) + h;
    h = xp(i) - x(i);
    j.col(i) = (eval_residual(problem, xp) - r) / h;
    xp(i) = x(i);
  }
  return j;
}

double check_jacobian(const LeastSquaresProblem& problem, const Vector& x) {
  const Bounds b = resolve_bounds(problem);
  if (x.size() != problem.n_vars) throw ShapeError("x has the wrong length");
  for (Index i = 0; i < x.size(); ++i)
    if (!(x(i) > b.lb(i) && x(i) < b.ub(i)))
      throw InvalidInputError("check_jacobian needs a strictly feasible x");
  const Vector r = eval_residual(problem, x);
  if (!problem.jacobian_fn) throw ConfigError("problem has no analytic Jacobian to check");
  const Matrix analytic = problem.jacobian_fn(x);
  if (analytic.rows() != problem.n_residuals || analytic.cols() != problem.n_vars)
    throw ShapeError("jacobian_fn returned the wrong shape");

  Matrix fd(problem.n_residuals, problem.n_vars);
  Vector xp = x;
  for (Index i = 0; i < problem.n_vars; ++i) {
    double h = 1e-3 * std::max(1.0, std::abs(x(i)));
    h = std::min({h, 0.5 * (x(i) - b.lb(i)), 0.5 * (b.ub(i) - x(i))});
    auto central = [&](double step) {
      xp(i) = x(i) + step;
      const Vector fwd = eval_residual(problem, xp);
      xp(i) = x(i) - step;
      const Vector bwd = eval_residual(problem, xp);
      xp(i) = x(i);
      return Vector((fwd - bwd) / (2 * step));
    };
    fd.col(i) = (4.0 * central(0.5 * h) - central(h)) / 3.0;
  }
  const double floor = 1e-8 * std::max(1.0, fd.cwiseAbs().maxCoeff());
  double worst = 0.0;
  for (Index i = 0; i < problem.n_vars; ++i) {
    const double num = (analytic.col(i) - fd.col(i)).cwiseAbs().maxCoeff();
    const double den = std::max(fd.col(i).cwiseAbs().maxCoeff(), floor);
    worst = std::max(worst, num / den);
  }
  return worst;
}

SolveResult solve(const LeastSquaresProblem& problem, const Vector& x0, const TrfConfig& config) {
  validate(config);
  if (!problem.residual_fn) throw ConfigError("problem has no residual_fn");
  if (x0.size() != problem.n_vars)
    throw ShapeError("x0 has " + std::to_string(x0.size()) + " entries, expected " +
                     std::to_string(problem.n_vars));
  const Bounds b = resolve_bounds(problem);

  Vector x = make_strictly_feasible(x0.cwiseMax(b.lb).cwiseMin(b.ub), b);
  Vector f = eval_residual(problem, x);
  Matrix J = eval_jacobian(problem, x, f, config);
  double cost = 0.5 * f.squaredNorm();
  Vector g = J.transpose() * f;

  SolveResult result;
  result.cost_history.push_back(cost);

  Vector v, dv;
  scaling_vector(x, g, b, v, dv);
  double delta = (x.array() / v.array().sqrt()).matrix().norm();
  if (delta == 0.0 || !std::isfinite(delta)) delta = 1.0;
  delta *= config.initial_trust_radius;

  std::optional<Termination> status;
  int iteration = 0;
  while (true) {
    scaling_vector(x, g, b, v, dv);
    const double g_norm = g.cwiseProduct(v).cwiseAbs().maxCoeff();
    if (g_norm < config.gradient_tolerance) status = Termination::gradient;
    if (status || iteration >= config.max_iterations) break;

    const Vector d = v.cwiseSqrt();
    const Vector diag_h = g.cwiseProduct(dv);
    const Vector g_h = d.cwiseProduct(g);
    const Matrix j_h = J * d.asDiagonal();

    // Orthonormal basis of span{g_h, gauss-newton step}.
    const Vector gn_h = gauss_newton_step(j_h, diag_h, f);
    Matrix basis(problem.n_vars, 2);
    basis.col(0) = g_h / g_h.norm();
    Vector second = gn_h - basis.col(0).dot(gn_h) * basis.col(0);
    const double second_norm = second.norm();
    const bool two_d = problem.n_vars > 1 && second_norm > 1e-12 * std::max(1.0, gn_h.norm());
    if (two_d) basis.col(1) = second / second_norm;
    const Matrix S = two_d ? basis : Matrix(basis.leftCols(1));
    const Matrix JS = j_h * S;
    const Matrix B_S = JS.transpose() * JS + S.transpose() * diag_h.asDiagonal() * S;
    const Vector g_S = S.transpose() * g_h;

    const double theta = std::max(0.995, 1.0 - g_norm);

    double actual = -1.0;
    Vector x_new, f_new;
    double cost_new = cost;
    for (int inner = 0; inner < kMaxInnerSteps && actual <= 0; ++inner) {
      Vector p_S;
      if (two_d) {
        p_S = solve_trust_region_2d(B_S, g_S, delta);
      } else {
        const double bb = B_S(0, 0);
        const double gg = g_S(0);
        double t = bb > 0 ? -gg / bb : -std::copysign(delta, gg);
        p_S = Vector::Constant(1, std::clamp(t, -delta, delta));
      }
      const Vector p_h = S * p_S;
      const Vector p = d.cwiseProduct(p_h);
      const Step st = select_step(x, j_h, diag_h, g_h, p, p_h, d, delta, b, theta);

      x_new = x + st.step;
      for (Index i = 0; i < x_new.size(); ++i) {
        if (x_new(i) <= b.lb(i)) x_new(i) = std::nextafter(b.lb(i), b.ub(i));
        if (x_new(i) >= b.ub(i)) x_new(i) = std::nextafter(b.ub(i), b.lb(i));
      }
      f_new = eval_residual(problem, x_new);
      const double step_h_norm = st.step_h.norm();
      cost_new = 0.5 * f_new.squaredNorm();
      actual = cost - cost_new;
      const auto [delta_new, ratio] =
          update_radius(delta, actual, st.predicted, step_h_norm, step_h_norm > 0.95 * delta);

      const double step_norm = st.step.norm();
      const bool ftol_ok = actual < config.cost_tolerance * cost && ratio > 0.25;
      const bool xtol_ok =
          step_norm < config.step_tolerance * (config.step_tolerance + x.norm());
      if (ftol_ok)
        status = Termination::cost;
      else if (xtol_ok)
        status = Termination::step;
      if (status) break;
      delta = delta_new;
    }

    if (actual > 0) {
      x = std::move(x_new);
      f = std::move(f_new);
      cost = cost_new;
      J = eval_jacobian(problem, x, f, config);
      g = J.transpose() * f;
      result.cost_history.push_back(cost);
    }
    ++iteration;
  }

  // Snap variables that converged onto a bound they are pressed against.
  {
    Vector snapped = x;
    bool changed = false;
    for (Index i = 0; i < x.size(); ++i) {
      const double tol_lo = config.step_tolerance * std::max(1.0, std::abs(b.lb(i)));
      const double tol_hi = config.step_tolerance * std::max(1.0, std::abs(b.ub(i)));
      if (std::isfinite(b.lb(i)) && g(i) > 0 && x(i) - b.lb(i) <= tol_lo) {
        snapped(i) = b.lb(i);
        changed = true;
      } else if (std::isfinite(b.ub(i)) && g(i) < 0 && b.ub(i) - x(i) <= tol_hi) {
        snapped(i) = b.ub(i);
        changed = true;
      }
    }
    if (changed) {
      Vector fs = eval_residual(problem, snapped);
      const double cs = 0.5 * fs.squaredNorm();
      if (cs <= cost) {
        x = std::move(snapped);
        f = std::move(fs);
        if (cs < cost) result.cost_history.push_back(cs);
        cost = cs;
        J = eval_jacobian(problem, x, f, config);
        g = J.transpose() * f;
      }
    }
  }

  result.x = std::move(x);
  result.cost = cost;
  result.projected_gradient_norm = projected_gradient_norm(result.x, g, b);
  result.iterations = iteration;
  result.termination_reason = status.value_or(Termination::max_iterations);
  return result;
}

}  // namespace factorfit::trf
