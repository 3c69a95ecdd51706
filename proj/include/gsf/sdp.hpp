#pragma once

// Dense semidefinite programming in LMI form:
//
//   minimize    c^T y
//   subject to  S(y) = F0 + sum_i y_i A_i  >= 0   (block diagonal)
//               E y = d
//
// solved by an infeasible-start primal-dual path-following method with
// Nesterov-Todd scaling and a Mehrotra-style centering heuristic. Problem
// sizes here are small (blocks up to ~60, up to a few thousand scalar
// variables), so everything is dense Eigen.

#include <Eigen/Dense>
#include <cmath>
#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsf::sdp {

/// Smallest eigenvalue of a symmetric matrix (symmetrized within tolerance).
inline double min_eig(const Eigen::MatrixXd& m, double sym_tol = 1e-9) {
  if (m.rows() != m.cols()) throw std::invalid_argument("min_eig: not square");
  if ((m - m.transpose()).cwiseAbs().maxCoeff() >
      sym_tol * std::max(1.0, m.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("min_eig: matrix not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
      0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

struct SdpProblem {
  /// Sparse entry of a symmetric coefficient matrix; (row,col) with
  /// row <= col, the mirrored entry is implied.
  struct Entry {
    int block, row, col;
    double value;
  };

  std::vector<int> block_sizes;
  std::vector<Eigen::MatrixXd> F0;         // one per block
  std::vector<std::vector<Entry>> A;       // per decision variable
  Eigen::VectorXd c;                       // empty => feasibility (c = 0)
  Eigen::MatrixXd E;                       // equality lhs (0 rows allowed)
  Eigen::VectorXd d;

  int num_vars() const { return int(A.size()); }

  int add_block(int n) {
    if (n <= 0) throw std::invalid_argument("block size must be positive");
    block_sizes.push_back(n);
    F0.emplace_back(Eigen::MatrixXd::Zero(n, n));
    return int(block_sizes.size()) - 1;
  }

  int add_variable() {
    A.emplace_back();
    return int(A.size()) - 1;
  }

  void add_entry(int var, int block, int row, int col, double value) {
    if (row > col) std::swap(row, col);
    A[var].push_back({block, row, col, value});
  }

  /// Dense symmetric coefficient matrix for one variable/block; rejects
  /// non-symmetric input.
  void set_dense(int var, int block, const Eigen::MatrixXd& m) {
    if ((m - m.transpose()).cwiseAbs().maxCoeff() >
        1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff()))
      throw std::invalid_argument("set_dense: coefficient matrix not symmetric");
    for (int i = 0; i < m.rows(); ++i)
      for (int j = i; j < m.cols(); ++j)
        if (m(i, j) != 0.0) add_entry(var, block, i, j, m(i, j));
  }

  void set_F0(int block, const Eigen::MatrixXd& m) {
    if ((m - m.transpose()).cwiseAbs().maxCoeff() >
        1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff()))
      throw std::invalid_argument("set_F0: matrix not symmetric");
    F0[block] = 0.5 * (m + m.transpose());
  }

  void validate() const {
    for (size_t b = 0; b < block_sizes.size(); ++b)
      if (F0[b].rows() != block_sizes[b])
        throw std::invalid_argument("F0 block size mismatch");
    for (const auto& mats : A)
      for (const auto& e : mats) {
        if (e.block < 0 || e.block >= int(block_sizes.size()))
          throw std::invalid_argument("entry references unknown block");
        if (e.col >= block_sizes[e.block] || e.row < 0)
          throw std::invalid_argument("entry index out of range");
      }
    if (E.rows() > 0 && E.cols() != num_vars())
      throw std::invalid_argument("equality constraint width mismatch");
  }

  /// S(y) = F0 + sum y_i A_i, per block.
  std::vector<Eigen::MatrixXd> lmi_value(const Eigen::VectorXd& y) const {
    std::vector<Eigen::MatrixXd> S = F0;
    for (int i = 0; i < num_vars(); ++i)
      for (const auto& e : A[i]) {
        S[e.block](e.row, e.col) += y[i] * e.value;
        if (e.row != e.col) S[e.block](e.col, e.row) += y[i] * e.value;
      }
    return S;
  }

  /// Plain text dump (block, i, j, var-index, value), var index 0 = F0 row.
  std::string dump() const {
    std::string out;
    auto line = [&](int blk, int i, int j, int v, double val) {
      char buf[96];
      std::snprintf(buf, sizeof(buf), "%d %d %d %d %.17g\n", blk, i, j, v, val);
      out += buf;
    };
    for (size_t b = 0; b < block_sizes.size(); ++b)
      for (int i = 0; i < F0[b].rows(); ++i)
        for (int j = i; j < F0[b].cols(); ++j)
          if (F0[b](i, j) != 0.0) line(int(b), i, j, 0, F0[b](i, j));
    for (int v = 0; v < num_vars(); ++v)
      for (const auto& e : A[v]) line(e.block, e.row, e.col, v + 1, e.value);
    return out;
  }
};

enum class SdpStatus { Optimal, Infeasible, MaxIterations };

struct SdpSolution {
  Eigen::VectorXd y;
  SdpStatus status = SdpStatus::MaxIterations;
  double objective = 0.0;
  double dual_objective = 0.0;
  double primal_residual = 0.0;  // ||F0 + A*(y) - S|| plus equality residual
  double dual_residual = 0.0;
  double gap = 0.0;
  std::vector<double> block_min_eig;  // of F0 + A*(y)
  int iterations = 0;
  std::string message;
};

struct SdpOptions {
  double feas_tol = 1e-7;
  double gap_tol = 1e-7;
  int max_iter = 200;
  bool verbose = false;
};

namespace detail {

inline Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m, bool inverse) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-300);
  Eigen::VectorXd s(ev.size());
  for (int i = 0; i < ev.size(); ++i)
    s[i] = inverse ? 1.0 / std::sqrt(ev[i]) : std::sqrt(ev[i]);
  return es.eigenvectors() * s.asDiagonal() * es.eigenvectors().transpose();
}

/// Largest alpha in (0, 1] with X + alpha dX > 0 (fraction to boundary).
inline double step_to_boundary(const Eigen::MatrixXd& X,
                               const Eigen::MatrixXd& dX, double frac) {
  Eigen::LLT<Eigen::MatrixXd> llt(X);
  if (llt.info() != Eigen::Success) return 0.0;
  Eigen::MatrixXd L = llt.matrixL();
  Eigen::MatrixXd T = L.triangularView<Eigen::Lower>().solve(dX);
  T = L.triangularView<Eigen::Lower>().solve(T.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (T + T.transpose()),
                                                    Eigen::EigenvaluesOnly);
  double lmin = es.eigenvalues().minCoeff();
  if (lmin >= 0) return 1.0;
  return std::min(1.0, -frac / lmin);
}

}  // namespace detail

inline SdpSolution solve(const SdpProblem& prob, const SdpOptions& opts = {}) {
  prob.validate();
  const int m = prob.num_vars();
  const int nb = int(prob.block_sizes.size());
  const int q = int(prob.E.rows());
  int ntot = 0;
  for (int n : prob.block_sizes) ntot += n;

  Eigen::VectorXd c =
      prob.c.size() ? prob.c : Eigen::VectorXd::Zero(m);

  // scale-aware starting point
  double f0n = 1.0;
  for (const auto& F : prob.F0) f0n = std::max(f0n, F.cwiseAbs().maxCoeff());
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  if (q > 0) y = prob.E.colPivHouseholderQr().solve(prob.d);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(q);
  std::vector<Eigen::MatrixXd> X, S;
  for (int n : prob.block_sizes) {
    X.push_back(Eigen::MatrixXd::Identity(n, n) *
                std::max(1.0, c.cwiseAbs().maxCoeff()));
    S.push_back(Eigen::MatrixXd::Identity(n, n) * 10.0 * f0n);
  }

  auto adjoint = [&](const Eigen::VectorXd& yy) {
    return prob.lmi_value(yy);  // includes F0
  };
  auto Aop = [&](const std::vector<Eigen::MatrixXd>& XX) {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(m);
    for (int i = 0; i < m; ++i) {
      double s = 0.0;
      for (const auto& e : prob.A[i])
        s += (e.row == e.col ? 1.0 : 2.0) * e.value * XX[e.block](e.row, e.col);
      r[i] = s;
    }
    return r;
  };

  SdpSolution sol;
  sol.y = y;

  if (opts.verbose) {
    size_t nnz = 0;
    for (const auto& mats : prob.A) nnz += mats.size();
    std::printf("sdp: %d vars, %d blocks (max %d), %d equalities, %zu entries\n",
                m, nb, ntot == 0 ? 0 : *std::max_element(
                    prob.block_sizes.begin(), prob.block_sizes.end()),
                q, nnz);
  }

  Eigen::MatrixXd M(m, m);
  std::vector<Eigen::MatrixXd> W(nb), V(nb);
  std::vector<std::vector<Eigen::MatrixXd>> WAW;  // per var, per block (dense)

  // Late iterations can destroy the iterate numerically (steps collapse to
  // zero, duals drift), so keep the best iterate seen and fall back to it.
  double best_merit = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_y = y;
  double best_dobj = 0.0, best_rp = 0.0, best_rd = 0.0, best_gap = 0.0;
  int best_iter = 0, stall = 0;
  double mu0 = 1.0;

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    // residuals
    std::vector<Eigen::MatrixXd> Sy = adjoint(y);
    std::vector<Eigen::MatrixXd> Rs(nb);
    double rs_norm = 0.0;
    for (int b = 0; b < nb; ++b) {
      Rs[b] = Sy[b] - S[b];
      rs_norm += Rs[b].squaredNorm();
    }
    rs_norm = std::sqrt(rs_norm);
    Eigen::VectorXd Re =
        q > 0 ? Eigen::VectorXd(prob.d - prob.E * y) : Eigen::VectorXd(0);
    Eigen::VectorXd rd = c - Aop(X);
    if (q > 0) rd -= prob.E.transpose() * v;

    double xs = 0.0;
    for (int b = 0; b < nb; ++b) xs += (X[b].array() * S[b].array()).sum();
    double mu = xs / ntot;
    if (iter == 0) mu0 = std::max(mu, 1e-300);

    double pobj = c.dot(y);
    // dual objective of the LMI form: d^T v - <F0, X>
    double dobj = q > 0 ? v.dot(prob.d) : 0.0;
    for (int b = 0; b < nb; ++b) dobj -= (prob.F0[b].array() * X[b].array()).sum();

    double rel_rs = rs_norm / (1.0 + f0n);
    double rel_re = q > 0 ? Re.norm() / (1.0 + prob.d.norm()) : 0.0;
    double rel_rd = rd.norm() / (1.0 + c.norm());
    double rel_gap = std::abs(xs) / (1.0 + std::abs(pobj) + std::abs(dobj));

    sol.iterations = iter;
    sol.dual_objective = dobj;
    sol.primal_residual = std::max(rel_rs, rel_re);
    sol.dual_residual = rel_rd;
    sol.gap = rel_gap;

    double merit = std::max({rel_rs, rel_re, rel_rd, rel_gap});
    if (std::isfinite(merit) && merit < best_merit) {
      best_merit = merit;
      best_y = y;
      best_dobj = dobj;
      best_rp = std::max(rel_rs, rel_re);
      best_rd = rel_rd;
      best_gap = rel_gap;
      best_iter = iter;
    }

    if (rel_rs <= opts.feas_tol && rel_re <= opts.feas_tol &&
        rel_rd <= opts.feas_tol && rel_gap <= opts.gap_tol) {
      sol.status = SdpStatus::Optimal;
      break;
    }

    // primal infeasibility: dual improving ray. X >= 0, A(X) + E^T v ~ 0
    // with -<F0,X> - d^T v bounded away from zero after normalization.
    {
      double xnorm = 0.0;
      for (int b = 0; b < nb; ++b) xnorm += X[b].squaredNorm();
      xnorm = std::sqrt(xnorm) + v.norm();
      Eigen::VectorXd ray = Aop(X);
      if (q > 0) ray += prob.E.transpose() * v;
      double improve = dobj;
      if (xnorm > 1e8 && ray.norm() / xnorm < 1e-10 && improve / xnorm > 1e-10) {
        sol.status = SdpStatus::Infeasible;
        sol.message = "dual improving ray detected";
        break;
      }
    }

    // NT scaling W_b with W S W = X
    for (int b = 0; b < nb; ++b) {
      Eigen::MatrixXd Xh = detail::sym_sqrt(X[b], false);
      Eigen::MatrixXd T = Xh * S[b] * Xh;
      Eigen::MatrixXd Tmh = detail::sym_sqrt(0.5 * (T + T.transpose()), true);
      W[b] = Xh * Tmh * Xh;
      W[b] = 0.5 * (W[b] + W[b].transpose()).eval();
    }

    // Schur complement M_ij = <A_i, W A_j W>
    WAW.assign(m, std::vector<Eigen::MatrixXd>());
    for (int j = 0; j < m; ++j) {
      std::vector<Eigen::MatrixXd> per(nb);
      std::vector<bool> used(nb, false);
      for (const auto& e : prob.A[j]) {
        if (!used[e.block]) {
          per[e.block] = Eigen::MatrixXd::Zero(prob.block_sizes[e.block],
                                               prob.block_sizes[e.block]);
          used[e.block] = true;
        }
        per[e.block] += e.value * (W[e.block].col(e.row) *
                                   W[e.block].row(e.col));
        if (e.row != e.col)
          per[e.block] += e.value * (W[e.block].col(e.col) *
                                     W[e.block].row(e.row));
      }
      WAW[j] = std::move(per);
    }
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        double s = 0.0;
        for (const auto& e : prob.A[i]) {
          if (WAW[j][e.block].size() == 0) continue;
          double w = WAW[j][e.block](e.row, e.col);
          s += (e.row == e.col ? 1.0 : 2.0) * e.value * w;
        }
        M(i, j) = s;
      }
    M = 0.5 * (M + M.transpose()).eval();

    // KKT matrix [[M, -E^T],[E, 0]]
    Eigen::MatrixXd K(m + q, m + q);
    K.setZero();
    K.topLeftCorner(m, m) = M;
    if (q > 0) {
      K.topRightCorner(m, q) = -prob.E.transpose();
      K.bottomLeftCorner(q, m) = prob.E;
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(K);

    auto solve_dir = [&](const std::vector<Eigen::MatrixXd>& Rc,
                         std::vector<Eigen::MatrixXd>& dX,
                         std::vector<Eigen::MatrixXd>& dS, Eigen::VectorXd& dy,
                         Eigen::VectorXd& dv) {
      Eigen::VectorXd rhs(m + q);
      std::vector<Eigen::MatrixXd> tmp(nb);
      for (int b = 0; b < nb; ++b) tmp[b] = Rc[b] - W[b] * Rs[b] * W[b];
      rhs.head(m) = Aop(tmp) - rd;
      if (q > 0) rhs.tail(q) = Re;
      Eigen::VectorXd sol_v = lu.solve(rhs);
      dy = sol_v.head(m);
      if (q > 0) dv = sol_v.tail(q);
      std::vector<Eigen::MatrixXd> Ady(nb);
      for (int b = 0; b < nb; ++b)
        Ady[b] = Eigen::MatrixXd::Zero(prob.block_sizes[b], prob.block_sizes[b]);
      for (int i = 0; i < m; ++i)
        for (const auto& e : prob.A[i]) {
          Ady[e.block](e.row, e.col) += dy[i] * e.value;
          if (e.row != e.col) Ady[e.block](e.col, e.row) += dy[i] * e.value;
        }
      dX.resize(nb);
      dS.resize(nb);
      for (int b = 0; b < nb; ++b) {
        dS[b] = Ady[b] + Rs[b];
        dX[b] = Rc[b] - W[b] * dS[b] * W[b];
        dX[b] = 0.5 * (dX[b] + dX[b].transpose()).eval();
      }
    };

    // predictor (affine scaling)
    std::vector<Eigen::MatrixXd> Rc(nb), dX, dS;
    Eigen::VectorXd dy, dv;
    for (int b = 0; b < nb; ++b) Rc[b] = -X[b];
    solve_dir(Rc, dX, dS, dy, dv);

    double frac = iter < 3 ? 0.9 : 0.98;
    double ap = 1.0, ad = 1.0;
    for (int b = 0; b < nb; ++b) {
      ap = std::min(ap, detail::step_to_boundary(X[b], dX[b], frac));
      ad = std::min(ad, detail::step_to_boundary(S[b], dS[b], frac));
    }
    double xs_aff = 0.0;
    for (int b = 0; b < nb; ++b)
      xs_aff += ((X[b] + ap * dX[b]).array() * (S[b] + ad * dS[b]).array()).sum();
    double sigma = std::pow(std::max(0.0, xs_aff / xs), 3.0);
    sigma = std::min(1.0, std::max(sigma, 1e-8));

    // corrector (recentered)
    for (int b = 0; b < nb; ++b) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S[b]);
      Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-300);
      Eigen::MatrixXd Sinv = es.eigenvectors() *
                             ev.cwiseInverse().asDiagonal() *
                             es.eigenvectors().transpose();
      Rc[b] = sigma * mu * Sinv - X[b];
    }
    solve_dir(Rc, dX, dS, dy, dv);
    ap = 1.0, ad = 1.0;
    for (int b = 0; b < nb; ++b) {
      ap = std::min(ap, detail::step_to_boundary(X[b], dX[b], frac));
      ad = std::min(ad, detail::step_to_boundary(S[b], dS[b], frac));
    }

    for (int b = 0; b < nb; ++b) {
      X[b] += ap * dX[b];
      X[b] = 0.5 * (X[b] + X[b].transpose()).eval();
      S[b] += ad * dS[b];
      S[b] = 0.5 * (S[b] + S[b].transpose()).eval();
    }
    y += ad * dy;
    // v belongs to the X-side equation A(X) + E^T v = c, so it takes the
    // primal step
    if (q > 0) v += ap * dv;

    if (opts.verbose) {
      std::printf("it %3d mu %9.2e rs %8.1e re %8.1e rd %8.1e gap %8.1e "
                  "ap %.2f ad %.2f sig %.2f\n",
                  iter, mu, rel_rs, rel_re, rel_rd, rel_gap, ap, ad, sigma);
    }

    if (std::max(ap, ad) < 1e-3 && mu < 1e-9 * mu0) {
      if (++stall >= 3) break;
    } else {
      stall = 0;
    }
  }

  if (sol.status == SdpStatus::MaxIterations) {
    y = best_y;
    sol.dual_objective = best_dobj;
    sol.primal_residual = best_rp;
    sol.dual_residual = best_rd;
    sol.gap = best_gap;
    sol.iterations = best_iter;
    if (best_merit <= 10.0 * std::max(opts.feas_tol, opts.gap_tol)) {
      sol.status = SdpStatus::Optimal;
      sol.message = "accepted near-optimal iterate";
    } else {
      sol.message = stall >= 3
                        ? "progress stalled before meeting tolerances"
                        : "iteration cap reached without meeting tolerances";
    }
  }
  sol.y = y;
  sol.objective = c.dot(y);
  auto Sy = prob.lmi_value(y);
  sol.block_min_eig.clear();
  for (const auto& blk : Sy) sol.block_min_eig.push_back(min_eig(blk));
  return sol;
}

}  // namespace gsf::sdp
