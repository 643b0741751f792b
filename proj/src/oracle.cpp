#include "comadice/oracle.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "comadice/textio.hpp"

namespace comadice {

namespace {

using SparseCol = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

void check_shape(const MultiAgentMDP& env, const Eigen::MatrixXd& m, const char* what) {
  if (m.rows() != env.n_states || m.cols() != env.n_joint()) {
    throw std::invalid_argument(std::string(what) + ": expected a " +
                                std::to_string(env.n_states) + " x " +
                                std::to_string(env.n_joint()) + " table");
  }
}

/// P * v as an (n_states x n_joint) table.
Eigen::MatrixXd expected_next(const MultiAgentMDP& env, const Eigen::VectorXd& v) {
  const Eigen::VectorXd pv = env.transition * v;
  return Eigen::Map<const Eigen::MatrixXd>(pv.data(), env.n_joint(), env.n_states).transpose();
}

/// Supported (s, a) pairs in row-major order.
struct Support {
  std::vector<int> s, a;
  std::vector<double> mass;
};

Support support_of(const MultiAgentMDP& env, const OccupancyMeasure& rho_mu) {
  check_shape(env, rho_mu.rho, "behavior occupancy");
  Support sup;
  for (int s = 0; s < env.n_states; ++s) {
    for (int a = 0; a < env.n_joint(); ++a) {
      const double m = rho_mu.rho(s, a);
      if (m < 0.0 || !std::isfinite(m)) {
        throw std::invalid_argument("behavior occupancy has a negative or non-finite entry");
      }
      if (m >= kSupportFloor) {
        sup.s.push_back(s);
        sup.a.push_back(a);
        sup.mass.push_back(m);
      }
    }
  }
  if (sup.s.empty()) throw std::invalid_argument("behavior occupancy has empty support");
  return sup;
}

Eigen::VectorXd policy_values(const MultiAgentMDP& env, const std::vector<int>& act) {
  const int n = env.n_states;
  std::vector<Triplet> trip;
  Eigen::VectorXd r(n);
  for (int s = 0; s < n; ++s) {
    trip.emplace_back(s, s, 1.0);
    const Eigen::Index row = env.row(s, act[s]);
    for (SparseRowMatrix::InnerIterator it(env.transition, row); it; ++it) {
      trip.emplace_back(s, static_cast<int>(it.col()), -env.discount * it.value());
    }
    r(s) = env.reward(s, act[s]);
  }
  SparseCol m(n, n);
  m.setFromTriplets(trip.begin(), trip.end());
  Eigen::SparseLU<SparseCol> lu;
  lu.compute(m);
  if (lu.info() != Eigen::Success) throw std::runtime_error("policy evaluation: singular system");
  return lu.solve(r);
}

}  // namespace

OccupancyMeasure occupancy_measure(const MultiAgentMDP& env, const Eigen::MatrixXd& joint_pi) {
  check_shape(env, joint_pi, "occupancy_measure");
  const int n = env.n_states;
  const int na = env.n_joint();
  // Columns of M = I - gamma P_pi^T.
  std::vector<Triplet> trip;
  for (int s = 0; s < n; ++s) {
    trip.emplace_back(s, s, 1.0);
    for (int a = 0; a < na; ++a) {
      const double p = joint_pi(s, a);
      if (p == 0.0) continue;
      for (SparseRowMatrix::InnerIterator it(env.transition, env.row(s, a)); it; ++it) {
        trip.emplace_back(static_cast<int>(it.col()), s, -env.discount * p * it.value());
      }
    }
  }
  SparseCol m(n, n);
  m.setFromTriplets(trip.begin(), trip.end());
  Eigen::SparseLU<SparseCol> lu;
  lu.compute(m);
  if (lu.info() != Eigen::Success) throw std::runtime_error("occupancy_measure: singular system");
  const Eigen::VectorXd d = lu.solve((1.0 - env.discount) * env.initial_dist);
  OccupancyMeasure out;
  out.rho = joint_pi.array().colwise() * d.array();
  return out;
}

Eigen::MatrixXd policy_from_occupancy(const Eigen::MatrixXd& rho) {
  Eigen::MatrixXd pi(rho.rows(), rho.cols());
  for (Eigen::Index s = 0; s < rho.rows(); ++s) {
    const double z = rho.row(s).sum();
    if (z > 0.0) {
      pi.row(s) = rho.row(s) / z;
    } else {
      pi.row(s).setConstant(1.0 / static_cast<double>(rho.cols()));
    }
  }
  return pi;
}

double occupancy_return(const MultiAgentMDP& env, const OccupancyMeasure& rho) {
  check_shape(env, rho.rho, "occupancy_return");
  return rho.rho.cwiseProduct(env.reward).sum() / (1.0 - env.discount);
}

double policy_return(const MultiAgentMDP& env, const Eigen::MatrixXd& joint_pi) {
  return occupancy_return(env, occupancy_measure(env, joint_pi));
}

Eigen::VectorXd optimal_values(const MultiAgentMDP& env) {
  const int n = env.n_states;
  std::vector<int> act(static_cast<std::size_t>(n), 0);
  Eigen::VectorXd v = policy_values(env, act);
  for (int iter = 0; iter < 10000; ++iter) {
    const Eigen::MatrixXd q = env.reward + env.discount * expected_next(env, v);
    bool changed = false;
    for (int s = 0; s < n; ++s) {
      Eigen::Index best = 0;
      const double top = q.row(s).maxCoeff(&best);
      // Switch only on a clear improvement so ties cannot cycle.
      if (top > q(s, act[s]) + 1e-12 * (1.0 + std::abs(top))) {
        act[s] = static_cast<int>(best);
        changed = true;
      }
    }
    if (!changed) return v;
    v = policy_values(env, act);
  }
  throw std::runtime_error("optimal_values: policy iteration did not converge");
}

double optimal_return(const MultiAgentMDP& env) { return env.initial_dist.dot(optimal_values(env)); }

double check_flow(const Eigen::MatrixXd& rho, const MultiAgentMDP& env) {
  check_shape(env, rho, "check_flow");
  const Eigen::MatrixXd rt = rho.transpose();  // column-major: row(s, a) order
  const Eigen::Map<const Eigen::VectorXd> flat(rt.data(), rt.size());
  const Eigen::VectorXd inflow = env.transition.transpose() * flat;
  const Eigen::VectorXd res = rho.rowwise().sum() - (1.0 - env.discount) * env.initial_dist -
                              env.discount * inflow;
  return res.cwiseAbs().maxCoeff();
}

OccupancyMeasure empirical_occupancy(const OfflineDataset& ds, const MultiAgentMDP& env,
                                     VisitWeighting weighting) {
  if (ds.transitions.empty()) throw std::invalid_argument("empirical_occupancy: empty dataset");
  const int na = env.n_joint();
  OccupancyMeasure out;
  out.rho = Eigen::MatrixXd::Zero(env.n_states, na);
  double scale = 1.0;
  for (const auto& t : ds.transitions) {
    if (t.s < 0 || t.s >= env.n_states || t.a.flat < 0 || t.a.flat >= na) {
      throw std::invalid_argument("empirical_occupancy: transition does not fit the environment");
    }
    if (t.is_initial) scale = 1.0;
    const double w = weighting == VisitWeighting::Discounted ? scale : 1.0;
    out.rho(t.s, t.a.flat) += w;
    scale *= env.discount;
    // The discounted tail after absorption stays in the absorbing state; its
    // actions are irrelevant, so the mass is spread evenly over them.
    if (weighting == VisitWeighting::Discounted && t.terminal && env.is_terminal(t.s_next)) {
      out.rho.row(t.s_next).array() += scale / (1.0 - env.discount) / na;
    }
  }
  out.rho /= out.rho.sum();
  return out;
}

double total_variation(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols()) {
    throw std::invalid_argument("total_variation: shape mismatch");
  }
  return 0.5 * (p - q).cwiseAbs().sum();
}

Eigen::MatrixXd exact_advantage(const MultiAgentMDP& env, const Eigen::VectorXd& nu) {
  if (nu.size() != env.n_states) throw std::invalid_argument("exact_advantage: nu size mismatch");
  Eigen::MatrixXd adv = env.reward + env.discount * expected_next(env, nu);
  adv.colwise() -= nu;
  return adv;
}

double primal_objective(const MultiAgentMDP& env, const OccupancyMeasure& rho_mu, double alpha,
                        const FDivergence& div, const Eigen::MatrixXd& rho) {
  check_shape(env, rho, "primal_objective");
  const Support sup = support_of(env, rho_mu);
  double obj = 0.0;
  for (std::size_t k = 0; k < sup.s.size(); ++k) {
    const double x = rho(sup.s[k], sup.a[k]);
    obj += env.reward(sup.s[k], sup.a[k]) * x - alpha * sup.mass[k] * f_value(div, x / sup.mass[k]);
  }
  return obj;
}

double dual_objective(const MultiAgentMDP& env, const OccupancyMeasure& rho_mu, double alpha,
                      const FDivergence& div, const Eigen::VectorXd& nu, Eigen::VectorXd* grad) {
  if (!(alpha > 0.0)) throw std::domain_error("dual_objective: alpha must be positive");
  const Support sup = support_of(env, rho_mu);
  const Eigen::MatrixXd adv = exact_advantage(env, nu);
  double val = (1.0 - env.discount) * env.initial_dist.dot(nu);
  if (grad) *grad = (1.0 - env.discount) * env.initial_dist;
  for (std::size_t k = 0; k < sup.s.size(); ++k) {
    const double y = adv(sup.s[k], sup.a[k]) / alpha;
    val += sup.mass[k] * alpha * f_conjugate(div, y);
    if (grad) {
      const double c = sup.mass[k] * f_conjugate_prime(div, y);
      (*grad)(sup.s[k]) -= c;
      for (SparseRowMatrix::InnerIterator it(env.transition, env.row(sup.s[k], sup.a[k])); it; ++it) {
        (*grad)(it.col()) += c * env.discount * it.value();
      }
    }
  }
  return val;
}

Eigen::MatrixXd dual_ratio(const MultiAgentMDP& env, const OccupancyMeasure& rho_mu, double alpha,
                           const FDivergence& div, const Eigen::VectorXd& nu) {
  const Support sup = support_of(env, rho_mu);
  const Eigen::MatrixXd adv = exact_advantage(env, nu);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(env.n_states, env.n_joint());
  for (std::size_t k = 0; k < sup.s.size(); ++k) {
    w(sup.s[k], sup.a[k]) = w_star(div, adv(sup.s[k], sup.a[k]), alpha);
  }
  return w;
}

DualSolution solve_dual_tabular(const MultiAgentMDP& env, const OccupancyMeasure& rho_mu,
                                double alpha, const FDivergence& div, const SolverOptions& opts) {
  if (!(alpha > 0.0)) throw std::domain_error("solve_dual_tabular: alpha must be positive");
  const Support sup = support_of(env, rho_mu);
  const int n = env.n_states;
  const double g = env.discount;

  DualSolution sol;
  sol.nu = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd grad;
  double val = dual_objective(env, rho_mu, alpha, div, sol.nu, &grad);
  double damping = 1e-10;
  Eigen::SimplicialLDLT<SparseCol> ldlt;
  std::vector<Triplet> trip;
  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    sol.grad_norm = grad.cwiseAbs().maxCoeff();
    sol.iterations = iter;
    if (sol.grad_norm <= opts.tolerance) {
      sol.value = val;
      return sol;
    }
    const Eigen::MatrixXd adv = exact_advantage(env, sol.nu);
    trip.clear();
    double diag_scale = 0.0;
    for (std::size_t k = 0; k < sup.s.size(); ++k) {
      const double h = sup.mass[k] * f_conjugate_second(div, adv(sup.s[k], sup.a[k]) / alpha) / alpha;
      if (h == 0.0) continue;
      // outer product of (gamma P_k - e_s)
      std::vector<std::pair<int, double>> v{{sup.s[k], -1.0}};
      for (SparseRowMatrix::InnerIterator it(env.transition, env.row(sup.s[k], sup.a[k])); it; ++it) {
        v.emplace_back(static_cast<int>(it.col()), g * it.value());
      }
      for (const auto& [i, vi] : v) {
        for (const auto& [j, vj] : v) trip.emplace_back(i, j, h * vi * vj);
      }
      diag_scale = std::max(diag_scale, h);
    }
    bool stepped = false;
    while (!stepped) {
      std::vector<Triplet> full = trip;
      const double lambda = damping * std::max(1.0, diag_scale);
      for (int s = 0; s < n; ++s) full.emplace_back(s, s, lambda);
      SparseCol h(n, n);
      h.setFromTriplets(full.begin(), full.end());
      ldlt.compute(h);
      if (ldlt.info() != Eigen::Success) {
        damping *= 100.0;
        continue;
      }
      const Eigen::VectorXd dir = -ldlt.solve(grad);
      const double slope = grad.dot(dir);
      double t = 1.0;
      while (t > 1e-12) {
        const Eigen::VectorXd trial = sol.nu + t * dir;
        Eigen::VectorXd trial_grad;
        const double trial_val = dual_objective(env, rho_mu, alpha, div, trial, &trial_grad);
            if (std::isfinite(trial_val) && trial_val <= val + 1e-4 * t * slope) {
          sol.nu = trial;
          val = trial_val;
          grad = trial_grad;
          stepped = true;
          break;
        }
        // Near the optimum the decrease is below the rounding of the value, so
        // a step that shrinks the gradient is accepted on that alone.
        const double noise = 64.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(val));
        if (std::isfinite(trial_val) && trial_val <= val + noise &&
            trial_grad.cwiseAbs().maxCoeff() < grad.cwiseAbs().maxCoeff()) {
          sol.nu = trial;
          val = trial_val;
          grad = trial_grad;
          stepped = true;
          break;
        }
        t *= 0.5;
      }
      if (stepped) {
        if (t == 1.0) damping = std::max(1e-12, damping * 0.1);
      } else {
        damping *= 100.0;
        if (damping > 1e12) {
          throw std::runtime_error("solve_dual_tabular: no descent at gradient norm " +
                                   format_real(grad.cwiseAbs().maxCoeff()));
        }
      }
    }
  }
  throw std::runtime_error("solve_dual_tabular: iteration cap reached at gradient norm " +
                           format_real(grad.cwiseAbs().maxCoeff()));
}

PrimalSolution solve_regularized_primal(const MultiAgentMDP& env, const OccupancyMeasure& rho_mu,
                                        double alpha, const FDivergence& div,
                                        const SolverOptions& opts) {
  if (!(alpha > 0.0)) throw std::domain_error("solve_regularized_primal: alpha must be positive");
  const Support sup = support_of(env, rho_mu);
  const int n = env.n_states;
  const int nk = static_cast<int>(sup.s.size());
  const double g = env.discount;

  // Flow constraints A x = b over supported pairs, keeping only states that
  // some pair touches.
  std::vector<char> has_own(static_cast<std::size_t>(n), 0), touched(static_cast<std::size_t>(n), 0);
  for (int k = 0; k < nk; ++k) {
    has_own[sup.s[k]] = touched[sup.s[k]] = 1;
    for (SparseRowMatrix::InnerIterator it(env.transition, env.row(sup.s[k], sup.a[k])); it; ++it) {
      if (it.value() != 0.0) touched[it.col()] = 1;
    }
  }
  std::vector<int> row_of(static_cast<std::size_t>(n), -1);
  int m = 0;
  for (int s = 0; s < n; ++s) {
    if (env.initial_dist(s) > 0.0 && !has_own[s]) {
      throw std::runtime_error("solve_regularized_primal: initial state " + std::to_string(s) +
                               " lies outside the behavior support");
    }
    if (touched[s] && !has_own[s]) {
      throw std::runtime_error("solve_regularized_primal: state " + std::to_string(s) +
                               " is reachable but has no supported action; flow is infeasible");
    }
    if (touched[s]) row_of[s] = m++;
  }
  std::vector<Triplet> trip;
  for (int k = 0; k < nk; ++k) {
    trip.emplace_back(row_of[sup.s[k]], k, 1.0);
    for (SparseRowMatrix::InnerIterator it(env.transition, env.row(sup.s[k], sup.a[k])); it; ++it) {
      trip.emplace_back(row_of[it.col()], k, -g * it.value());
    }
  }
  SparseCol a_mat(m, nk);
  a_mat.setFromTriplets(trip.begin(), trip.end());
  const SparseCol a_t = a_mat.transpose();
  Eigen::VectorXd b(m);
  for (int s = 0; s < n; ++s) {
    if (row_of[s] >= 0) b(row_of[s]) = (1.0 - g) * env.initial_dist(s);
  }
  Eigen::VectorXd r(nk), mass(nk);
  for (int k = 0; k < nk; ++k) {
    r(k) = env.reward(sup.s[k], sup.a[k]);
    mass(k) = sup.mass[k];
  }

  // Minimize F(x) = -r.x + alpha sum m f(x/m) - mu sum log x.
  auto dual_residual = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& y, double mu) {
    Eigen::VectorXd rd(nk);
    for (int k = 0; k < nk; ++k) {
      rd(k) = -r(k) + alpha * f_prime(div, x(k) / mass(k)) - mu / x(k);
    }
    return Eigen::VectorXd(rd + a_t * y);
  };
  auto residual_norm = [&](const Eigen::VectorXd& rd, const Eigen::VectorXd& rp) {
    return std::sqrt(rd.squaredNorm() + rp.squaredNorm());
  };

  Eigen::VectorXd x = mass;
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  double mu = 1e-3 / nk;
  const double mu_final = 1e-13 / nk;
  Eigen::SimplicialLDLT<SparseCol> ldlt;
  int iterations = 0;
  double scale = 1.0 + r.cwiseAbs().maxCoeff() + alpha;
  PrimalSolution sol;
  while (true) {
    const double stage_tol = 1e-12 * scale;
    for (int inner = 0;; ++inner) {
      if (iterations++ >= opts.max_iterations || inner > 500) {
        throw std::runtime_error("solve_regularized_primal: no convergence at barrier weight " +
                                 std::to_string(mu));
      }
      Eigen::VectorXd rd = dual_residual(x, y, mu);
      Eigen::VectorXd rp = a_mat * x - b;
      const double norm0 = residual_norm(rd, rp);
      if (rd.cwiseAbs().maxCoeff() <= stage_tol && rp.cwiseAbs().maxCoeff() <= 1e-14) break;
      Eigen::VectorXd hinv(nk);
      for (int k = 0; k < nk; ++k) {
        hinv(k) = 1.0 / (alpha * f_second(div, x(k) / mass(k)) / mass(k) + mu / (x(k) * x(k)));
      }
      const SparseCol schur = a_mat * hinv.asDiagonal() * a_t;
      ldlt.compute(schur);
      if (ldlt.info() != Eigen::Success) {
        throw std::runtime_error("solve_regularized_primal: singular Newton system");
      }
      const Eigen::VectorXd dy = ldlt.solve(rp - a_mat * hinv.cwiseProduct(rd));
      const Eigen::VectorXd dx = -hinv.cwiseProduct(rd + a_t * dy);
      double t = 1.0;
      for (int k = 0; k < nk; ++k) {
        if (dx(k) < 0.0) t = std::min(t, -0.99 * x(k) / dx(k));
      }
      bool moved = false;
      while (t > 1e-14) {
        const Eigen::VectorXd xt = x + t * dx;
        const Eigen::VectorXd yt = y + t * dy;
        const double nt = residual_norm(dual_residual(xt, yt, mu), a_mat * xt - b);
        if (nt <= (1.0 - 0.01 * t) * norm0) {
          x = xt;
          y = yt;
          moved = true;
          break;
        }
        t *= 0.5;
      }
      if (!moved) {
        // At the rounding floor: accept when already tight enough.
        if (rd.cwiseAbs().maxCoeff() <= 1e3 * stage_tol && rp.cwiseAbs().maxCoeff() <= 1e-12) break;
        throw std::runtime_error("solve_regularized_primal: line search failed, residual " +
                                 std::to_string(norm0));
      }
    }
    if (mu <= mu_final) break;
    mu = std::max(mu_final, mu * 0.1);
  }
  const Eigen::VectorXd rd = dual_residual(x, y, mu);
  sol.kkt_residual =
      std::max({rd.cwiseAbs().maxCoeff(), (a_mat * x - b).cwiseAbs().maxCoeff(), mu * nk});
  sol.iterations = iterations;
  sol.rho = Eigen::MatrixXd::Zero(n, env.n_joint());
  for (int k = 0; k < nk; ++k) sol.rho(sup.s[k], sup.a[k]) = x(k);
  sol.objective = primal_objective(env, rho_mu, alpha, div, sol.rho);
  return sol;
}

}  // namespace comadice
