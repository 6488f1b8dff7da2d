#include "span/cobyla.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace span::dfo {

namespace {

// Constraint violations at or below this are treated as feasible when
// ranking evaluated points.
constexpr double kFeasibilityTol = 1e-10;

// Starting weight of the constraint violation in the merit function.
constexpr double kInitialPenalty = 1.0;

// Stand-in for non-finite objective values inside the linear models.
constexpr double kNonFiniteObjective = 1e30;

// The subproblem and simplex bookkeeping below keep 1-based indices so the
// arithmetic lines up with Powell's formulation; these wrappers hide the
// offset.
class Vec1 {
 public:
  explicit Vec1(int n = 0) : v_(static_cast<std::size_t>(n) + 1, 0.0) {}
  double& operator()(int i) { return v_[static_cast<std::size_t>(i)]; }
  double operator()(int i) const { return v_[static_cast<std::size_t>(i)]; }

 private:
  std::vector<double> v_;
};

class IVec1 {
 public:
  explicit IVec1(int n = 0) : v_(static_cast<std::size_t>(n) + 1, 0) {}
  int& operator()(int i) { return v_[static_cast<std::size_t>(i)]; }
  int operator()(int i) const { return v_[static_cast<std::size_t>(i)]; }

 private:
  std::vector<int> v_;
};

class Mat1 {
 public:
  Mat1(int rows, int cols) : rows_(rows), m_(static_cast<std::size_t>(rows * cols), 0.0) {}
  double& operator()(int i, int j) { return m_[idx(i, j)]; }
  double operator()(int i, int j) const { return m_[idx(i, j)]; }

 private:
  std::size_t idx(int i, int j) const {
    return static_cast<std::size_t>((i - 1) + (j - 1) * rows_);
  }
  int rows_;
  std::vector<double> m_;
};

// Rounding-error guard used throughout the subproblem: a quantity whose
// magnitude is negligible relative to the absolute sum of its terms is zero.
bool negligible(double value, double abs_sum) {
  const double acca = abs_sum + 0.1 * std::abs(value);
  const double accb = abs_sum + 0.2 * std::abs(value);
  return abs_sum >= acca || acca >= accb;
}

// Trust-region step for the linearized problem.
//
// Stage one finds the shortest dx minimizing the greatest violation of
// a_k^T dx >= b_k (k = 1..m) subject to |dx| <= rho. If the bound is not
// reached, stage two uses the remaining freedom to minimize -a_{m+1}^T dx
// without increasing that greatest violation. Columns of `a` are the
// constraint gradients followed by minus the objective gradient.
// Returns false when degeneracy kept dx short of the trust-region boundary.
bool trust_region_step(int n, int m, const Mat1& a, const Vec1& b, double rho, Vec1& dx) {
  Mat1 z(n, n);
  Vec1 zdota(n);
  Vec1 vmultc(m + 1);
  Vec1 vmultd(m + 1);
  Vec1 sdirn(n);
  Vec1 dxnew(n);
  IVec1 iact(m + 1);

  bool full = true;
  int mcon = m;
  int nact = 0;
  int icon = 0;
  double resmax = 0.0;
  double optold = 0.0;
  int icount = 0;

  for (int i = 1; i <= n; ++i) {
    z(i, i) = 1.0;
    dx(i) = 0.0;
  }
  for (int k = 1; k <= m; ++k) {
    if (b(k) > resmax) {
      resmax = b(k);
      icon = k;
    }
  }
  for (int k = 1; k <= m; ++k) {
    iact(k) = k;
    vmultc(k) = resmax - b(k);
  }

  auto start_stage_two = [&] {
    mcon = m + 1;
    icon = mcon;
    iact(mcon) = mcon;
    vmultc(mcon) = 0.0;
    optold = 0.0;
    icount = 0;
  };

  // Givens rotation of columns k and k+1 of Z that moves the active
  // constraint iact(k+1) into position k.
  auto rotate_down = [&](int k, int kw) {
    const int kp = k + 1;
    double sp = 0.0;
    for (int i = 1; i <= n; ++i) sp += z(i, k) * a(i, kw);
    const double temp = std::sqrt(sp * sp + zdota(kp) * zdota(kp));
    const double alpha = zdota(kp) / temp;
    const double beta = sp / temp;
    zdota(kp) = alpha * zdota(k);
    zdota(k) = temp;
    for (int i = 1; i <= n; ++i) {
      const double t = alpha * z(i, kp) + beta * z(i, k);
      z(i, kp) = alpha * z(i, k) - beta * z(i, kp);
      z(i, k) = t;
    }
  };

  // Moves active constraint `icon` to the end of the active list.
  auto cycle_to_end = [&] {
    if (icon >= nact) return;
    const int isave = iact(icon);
    const double vsave = vmultc(icon);
    int k = icon;
    while (k < nact) {
      const int kp = k + 1;
      const int kw = iact(kp);
      rotate_down(k, kw);
      iact(k) = kw;
      vmultc(k) = vmultc(kp);
      k = kp;
    }
    iact(k) = isave;
    vmultc(k) = vsave;
  };

  if (resmax == 0.0) {
    start_stage_two();
  } else {
    for (int i = 1; i <= n; ++i) sdirn(i) = 0.0;
  }

  // Ends the current stage. Returns true when the whole calculation is done.
  auto end_stage = [&]() -> bool {
    if (mcon == m) {
      start_stage_two();
      return false;
    }
    full = false;
    return true;
  };

  int nactx = 0;
  while (true) {
    // Stop a stage after three consecutive iterations that neither improve
    // the stage objective nor grow the active set; this prevents cycling.
    double optnew = 0.0;
    if (mcon == m) {
      optnew = resmax;
    } else {
      for (int i = 1; i <= n; ++i) optnew -= dx(i) * a(i, mcon);
    }
    if (icount == 0 || optnew < optold) {
      optold = optnew;
      nactx = nact;
      icount = 3;
    } else if (nact > nactx) {
      nactx = nact;
      icount = 3;
    } else {
      --icount;
      if (icount == 0) {
        if (end_stage()) return full;
        continue;
      }
    }

    if (icon > nact) {
      // Add constraint iact(icon) to the active set, rotating Z so that its
      // trailing columns stay orthogonal to the new gradient.
      const int kk = iact(icon);
      for (int i = 1; i <= n; ++i) dxnew(i) = a(i, kk);
      double tot = 0.0;
      for (int k = n; k > nact; --k) {
        double sp = 0.0;
        double spabs = 0.0;
        for (int i = 1; i <= n; ++i) {
          const double t = z(i, k) * dxnew(i);
          sp += t;
          spabs += std::abs(t);
        }
        if (negligible(sp, spabs)) sp = 0.0;
        if (tot == 0.0) {
          tot = sp;
        } else {
          const int kp = k + 1;
          const double t = std::sqrt(sp * sp + tot * tot);
          const double alpha = sp / t;
          const double beta = tot / t;
          tot = t;
          for (int i = 1; i <= n; ++i) {
            const double zi = alpha * z(i, k) + beta * z(i, kp);
            z(i, kp) = alpha * z(i, kp) - beta * z(i, k);
            z(i, k) = zi;
          }
        }
      }

      if (tot != 0.0) {
        ++nact;
        zdota(nact) = tot;
        vmultc(icon) = vmultc(nact);
        vmultc(nact) = 0.0;
      } else {
        // The new gradient depends linearly on the active ones: find the
        // multipliers of that combination and drop one constraint.
        double ratio = -1.0;
        for (int k = nact; k >= 1; --k) {
          double zdotv = 0.0;
          double zdvabs = 0.0;
          for (int i = 1; i <= n; ++i) {
            const double t = z(i, k) * dxnew(i);
            zdotv += t;
            zdvabs += std::abs(t);
          }
          if (!negligible(zdotv, zdvabs)) {
            const double t = zdotv / zdota(k);
            if (t > 0.0 && iact(k) <= m) {
              const double tempa = vmultc(k) / t;
              if (ratio < 0.0 || tempa < ratio) ratio = tempa;
            }
            if (k >= 2) {
              const int kw = iact(k);
              for (int i = 1; i <= n; ++i) dxnew(i) -= t * a(i, kw);
            }
            vmultd(k) = t;
          } else {
            vmultd(k) = 0.0;
          }
        }
        if (ratio < 0.0) {
          if (end_stage()) return full;
          continue;
        }
        for (int k = 1; k <= nact; ++k) {
          vmultc(k) = std::max(0.0, vmultc(k) - ratio * vmultd(k));
        }
        cycle_to_end();
        double t = 0.0;
        for (int i = 1; i <= n; ++i) t += z(i, nact) * a(i, kk);
        if (t == 0.0) {
          if (end_stage()) return full;
          continue;
        }
        zdota(nact) = t;
        vmultc(icon) = 0.0;
        vmultc(nact) = ratio;
      }

      // Keep the objective as the last active constraint during stage two.
      iact(icon) = iact(nact);
      iact(nact) = kk;
      if (mcon > m && kk != mcon) {
        const int k = nact - 1;
        double sp = 0.0;
        for (int i = 1; i <= n; ++i) sp += z(i, k) * a(i, kk);
        const double t = std::sqrt(sp * sp + zdota(nact) * zdota(nact));
        const double alpha = zdota(nact) / t;
        const double beta = sp / t;
        zdota(nact) = alpha * zdota(k);
        zdota(k) = t;
        for (int i = 1; i <= n; ++i) {
          const double zi = alpha * z(i, nact) + beta * z(i, k);
          z(i, nact) = alpha * z(i, k) - beta * z(i, nact);
          z(i, k) = zi;
        }
        iact(nact) = iact(k);
        iact(k) = kk;
        std::swap(vmultc(k), vmultc(nact));
      }

      if (mcon == m) {
        const int kl = iact(nact);
        double t = 0.0;
        for (int i = 1; i <= n; ++i) t += sdirn(i) * a(i, kl);
        t = (t - 1.0) / zdota(nact);
        for (int i = 1; i <= n; ++i) sdirn(i) -= t * z(i, nact);
      }
    } else {
      // Delete constraint iact(icon) from the active set.
      cycle_to_end();
      --nact;
      if (mcon == m) {
        double t = 0.0;
        for (int i = 1; i <= n; ++i) t += sdirn(i) * z(i, nact + 1);
        for (int i = 1; i <= n; ++i) sdirn(i) -= t * z(i, nact + 1);
      }
    }

    if (mcon > m) {
      const double t = 1.0 / zdota(nact);
      for (int i = 1; i <= n; ++i) sdirn(i) = t * z(i, nact);
    }

    // Step to the trust-region boundary, or the step that removes the
    // greatest violation in stage one.
    double dd = rho * rho;
    double sd = 0.0;
    double ss = 0.0;
    for (int i = 1; i <= n; ++i) {
      if (std::abs(dx(i)) >= 1e-6 * rho) dd -= dx(i) * dx(i);
      sd += dx(i) * sdirn(i);
      ss += sdirn(i) * sdirn(i);
    }
    if (dd <= 0.0) {
      if (end_stage()) return full;
      continue;
    }
    double temp = std::sqrt(ss * dd);
    if (std::abs(sd) >= 1e-6 * temp) temp = std::sqrt(ss * dd + sd * sd);
    const double stpful = dd / (temp + sd);
    double step = stpful;
    if (mcon == m) {
      if (negligible(resmax, step)) {
        start_stage_two();
        continue;
      }
      step = std::min(step, resmax);
    }

    for (int i = 1; i <= n; ++i) dxnew(i) = dx(i) + step * sdirn(i);
    double resold = 0.0;
    if (mcon == m) {
      resold = resmax;
      resmax = 0.0;
      for (int k = 1; k <= nact; ++k) {
        const int kk = iact(k);
        double r = b(kk);
        for (int i = 1; i <= n; ++i) r -= a(i, kk) * dxnew(i);
        resmax = std::max(resmax, r);
      }
    }

    // Multipliers the active set would have at dxnew.
    for (int k = nact; k >= 1; --k) {
      double zdotw = 0.0;
      double zdwabs = 0.0;
      for (int i = 1; i <= n; ++i) {
        const double t = z(i, k) * dxnew(i);
        zdotw += t;
        zdwabs += std::abs(t);
      }
      if (negligible(zdotw, zdwabs)) zdotw = 0.0;
      vmultd(k) = zdotw / zdota(k);
      if (k >= 2) {
        const int kk = iact(k);
        for (int i = 1; i <= n; ++i) dxnew(i) -= vmultd(k) * a(i, kk);
      }
    }
    if (mcon > m) vmultd(nact) = std::max(0.0, vmultd(nact));

    // Residuals of the inactive constraints at dxnew.
    for (int i = 1; i <= n; ++i) dxnew(i) = dx(i) + step * sdirn(i);
    for (int k = nact + 1; k <= mcon; ++k) {
      const int kk = iact(k);
      double sum = resmax - b(kk);
      double sumabs = resmax + std::abs(b(kk));
      for (int i = 1; i <= n; ++i) {
        const double t = a(i, kk) * dxnew(i);
        sum += t;
        sumabs += std::abs(t);
      }
      if (negligible(sum, sumabs)) sum = 0.0;
      vmultd(k) = sum;
    }

    // Fraction of the step that keeps every multiplier and residual >= 0.
    double ratio = 1.0;
    icon = 0;
    for (int k = 1; k <= mcon; ++k) {
      if (vmultd(k) < 0.0) {
        const double t = vmultc(k) / (vmultc(k) - vmultd(k));
        if (t < ratio) {
          ratio = t;
          icon = k;
        }
      }
    }

    const double keep = 1.0 - ratio;
    for (int i = 1; i <= n; ++i) dx(i) = keep * dx(i) + ratio * dxnew(i);
    for (int k = 1; k <= mcon; ++k) {
      vmultc(k) = std::max(0.0, keep * vmultc(k) + ratio * vmultd(k));
    }
    if (mcon == m) resmax = resold + ratio * (resmax - resold);

    if (icon > 0) continue;
    if (step == stpful) return full;
    start_stage_two();
  }
}

// Orders candidate points: feasible beats infeasible, then lower objective
// (or lower violation when both infeasible), then lexicographically smaller x.
struct Candidate {
  Eigen::VectorXd x;
  double f = std::numeric_limits<double>::infinity();
  double violation = std::numeric_limits<double>::infinity();
  bool valid = false;

  [[nodiscard]] bool feasible() const { return violation <= kFeasibilityTol; }

  [[nodiscard]] bool better_than(const Candidate& other) const {
    if (!other.valid) return true;
    if (feasible() != other.feasible()) return feasible();
    const double key = feasible() ? f : violation;
    const double other_key = other.feasible() ? other.f : other.violation;
    if (key != other_key) return key < other_key;
    return std::lexicographical_compare(x.begin(), x.end(), other.x.begin(), other.x.end());
  }
};

class Solver {
 public:
  Solver(const OptProblem& problem, const SolverConfig& cfg)
      : problem_(problem),
        cfg_(cfg),
        n_(static_cast<int>(problem.x0.size())),
        m_(problem.num_constraints),
        con_values_(problem.num_constraints) {}

  OptResult run();

 private:
  // Evaluates objective and constraints at x into con(1..m+2):
  // constraints, then f, then the greatest violation.
  void evaluate(const Vec1& x, Vec1& con);

  const OptProblem& problem_;
  const SolverConfig& cfg_;
  int n_;
  int m_;
  Eigen::VectorXd con_values_;
  Eigen::VectorXd x_eval_;
  int evals_ = 0;
  Candidate best_;
  std::vector<double> trace_;
};

void Solver::evaluate(const Vec1& x, Vec1& con) {
  x_eval_.resize(n_);
  for (int i = 1; i <= n_; ++i) x_eval_(i - 1) = x(i);
  const double f = problem_.objective(x_eval_);
  double resmax = 0.0;
  if (m_ > 0) {
    problem_.constraints(x_eval_, con_values_);
    for (int k = 1; k <= m_; ++k) {
      con(k) = con_values_(k - 1);
      resmax = std::max(resmax, -con(k));
    }
  }
  con(m_ + 1) = std::isfinite(f) ? f : kNonFiniteObjective;
  con(m_ + 2) = resmax;
  ++evals_;

  Candidate c{x_eval_, f, resmax, true};
  if (!std::isfinite(f)) c.f = std::numeric_limits<double>::infinity();
  if (c.better_than(best_)) best_ = std::move(c);
  trace_.push_back(best_.valid && best_.feasible() ? best_.f
                                                   : std::numeric_limits<double>::infinity());
}

OptResult Solver::run() {
  const int n = n_;
  const int m = m_;
  const int np = n + 1;
  const int mp = m + 1;
  const int mpp = m + 2;

  constexpr double kAlpha = 0.25;  // simplex acceptability: min sigma / rho
  constexpr double kBeta = 2.1;    // simplex acceptability: max edge / rho
  constexpr double kGamma = 0.5;   // geometry step length / rho
  constexpr double kDelta = 1.1;   // edge length that forces a vertex drop

  Status status = Status::converged;
  double rho = cfg_.rho_begin;
  double parmu = kInitialPenalty;

  // sim: columns 1..n hold vertex displacements from the pole, column n+1
  // holds the pole itself (the best vertex). simi inverts the leading block.
  Mat1 sim(n, np);
  Mat1 simi(n, n);
  Mat1 datmat(mpp, np);
  Mat1 a(n, mp);
  Vec1 con(mpp);
  Vec1 x(n);
  Vec1 dx(n);
  Vec1 vsig(n);
  Vec1 veta(n);
  Vec1 sigbar(n);
  Vec1 w(n);

  for (int i = 1; i <= n; ++i) {
    x(i) = problem_.x0(i - 1);
    sim(i, np) = x(i);
    sim(i, i) = rho;
    simi(i, i) = 1.0 / rho;
  }

  auto budget_left = [&] { return evals_ < cfg_.max_evals; };
  auto store_column = [&](int j) {
    for (int k = 1; k <= mpp; ++k) datmat(k, j) = con(k);
  };

  // Initial simplex: the start point plus one step of rho along each axis.
  bool done = false;
  evaluate(x, con);
  store_column(np);
  for (int jdrop = 1; jdrop <= n && !done; ++jdrop) {
    if (!budget_left()) {
      status = Status::budget_exhausted;
      done = true;
      break;
    }
    x(jdrop) += rho;
    evaluate(x, con);
    store_column(jdrop);
    if (datmat(mp, np) <= con(mp)) {
      x(jdrop) = sim(jdrop, np);
    } else {
      // The new vertex becomes the pole.
      sim(jdrop, np) = x(jdrop);
      for (int k = 1; k <= mpp; ++k) {
        datmat(k, jdrop) = datmat(k, np);
        datmat(k, np) = con(k);
      }
      for (int k = 1; k <= jdrop; ++k) {
        sim(jdrop, k) = -rho;
        double t = 0.0;
        for (int i = k; i <= jdrop; ++i) t -= simi(i, k);
        simi(jdrop, k) = t;
      }
    }
  }

  bool geometry_pending = false;
  int iflag = 1;
  double prerec = 0.0;
  double prerem = 0.0;
  double parsig = 0.0;

  while (!done) {
    // Move the vertex with least merit into pole position.
    {
      double phimin = datmat(mp, np) + parmu * datmat(mpp, np);
      int nbest = np;
      for (int j = 1; j <= n; ++j) {
        const double t = datmat(mp, j) + parmu * datmat(mpp, j);
        if (t < phimin) {
          nbest = j;
          phimin = t;
        } else if (t == phimin && parmu == 0.0 && datmat(mpp, j) < datmat(mpp, nbest)) {
          nbest = j;
        }
      }
      if (nbest <= n) {
        for (int i = 1; i <= mpp; ++i) std::swap(datmat(i, np), datmat(i, nbest));
        for (int i = 1; i <= n; ++i) {
          const double t = sim(i, nbest);
          sim(i, nbest) = 0.0;
          sim(i, np) += t;
          double tempa = 0.0;
          for (int k = 1; k <= n; ++k) {
            sim(i, k) -= t;
            tempa -= simi(k, i);
          }
          simi(nbest, i) = tempa;
        }
      }
    }

    {
      double error = 0.0;
      for (int i = 1; i <= n; ++i) {
        for (int j = 1; j <= n; ++j) {
          double t = (i == j) ? -1.0 : 0.0;
          for (int k = 1; k <= n; ++k) t += simi(i, k) * sim(k, j);
          error = std::max(error, std::abs(t));
        }
      }
      if (error > 0.1) {
        status = Status::rounding_errors;
        break;
      }
    }

    // Linear models: constraint gradients, then minus the objective gradient.
    for (int k = 1; k <= mp; ++k) {
      con(k) = -datmat(k, np);
      for (int j = 1; j <= n; ++j) w(j) = datmat(k, j) + con(k);
      for (int i = 1; i <= n; ++i) {
        double t = 0.0;
        for (int j = 1; j <= n; ++j) t += w(j) * simi(j, i);
        a(i, k) = (k == mp) ? -t : t;
      }
    }

    iflag = 1;
    parsig = kAlpha * rho;
    const double pareta = kBeta * rho;
    for (int j = 1; j <= n; ++j) {
      double wsig = 0.0;
      double weta = 0.0;
      for (int i = 1; i <= n; ++i) {
        wsig += simi(j, i) * simi(j, i);
        weta += sim(i, j) * sim(i, j);
      }
      vsig(j) = 1.0 / std::sqrt(wsig);
      veta(j) = std::sqrt(weta);
      if (vsig(j) < parsig || veta(j) > pareta) iflag = 0;
    }

    if (geometry_pending && iflag == 0) {
      geometry_pending = false;
      // Replace the vertex that most spoils the simplex shape.
      int jdrop = 0;
      double t = pareta;
      for (int j = 1; j <= n; ++j) {
        if (veta(j) > t) {
          jdrop = j;
          t = veta(j);
        }
      }
      if (jdrop == 0) {
        for (int j = 1; j <= n; ++j) {
          if (vsig(j) < t) {
            jdrop = j;
            t = vsig(j);
          }
        }
      }

      t = kGamma * rho * vsig(jdrop);
      for (int i = 1; i <= n; ++i) dx(i) = t * simi(jdrop, i);
      double cvmaxp = 0.0;
      double cvmaxm = 0.0;
      double sum = 0.0;
      for (int k = 1; k <= mp; ++k) {
        sum = 0.0;
        for (int i = 1; i <= n; ++i) sum += a(i, k) * dx(i);
        if (k < mp) {
          const double c0 = datmat(k, np);
          cvmaxp = std::max(cvmaxp, -sum - c0);
          cvmaxm = std::max(cvmaxm, sum - c0);
        }
      }
      const double dxsign = (parmu * (cvmaxp - cvmaxm) > sum + sum) ? -1.0 : 1.0;

      t = 0.0;
      for (int i = 1; i <= n; ++i) {
        dx(i) *= dxsign;
        sim(i, jdrop) = dx(i);
        t += simi(jdrop, i) * dx(i);
      }
      for (int i = 1; i <= n; ++i) simi(jdrop, i) /= t;
      for (int j = 1; j <= n; ++j) {
        if (j != jdrop) {
          double s = 0.0;
          for (int i = 1; i <= n; ++i) s += simi(j, i) * dx(i);
          for (int i = 1; i <= n; ++i) simi(j, i) -= s * simi(jdrop, i);
        }
        x(j) = sim(j, np) + dx(j);
      }
      if (!budget_left()) {
        status = Status::budget_exhausted;
        break;
      }
      evaluate(x, con);
      store_column(jdrop);
      continue;
    }
    geometry_pending = false;

    bool reduce_rho = false;
    const bool full = trust_region_step(n, m, a, con, rho, dx);
    if (!full) {
      double dxsq = 0.0;
      for (int i = 1; i <= n; ++i) dxsq += dx(i) * dx(i);
      if (dxsq < 0.25 * rho * rho) reduce_rho = true;
    }

    if (!reduce_rho) {
      // Predicted change of f (sum) and greatest violation (resnew).
      double resnew = 0.0;
      con(mp) = 0.0;
      double sum = 0.0;
      for (int k = 1; k <= mp; ++k) {
        sum = con(k);
        for (int i = 1; i <= n; ++i) sum -= a(i, k) * dx(i);
        if (k < mp) resnew = std::max(resnew, sum);
      }

      double barmu = 0.0;
      prerec = datmat(mpp, np) - resnew;
      if (prerec > 0.0) barmu = sum / prerec;
      if (parmu < 1.5 * barmu) {
        parmu = 2.0 * barmu;
        const double phi = datmat(mp, np) + parmu * datmat(mpp, np);
        bool pole_changed = false;
        for (int j = 1; j <= n; ++j) {
          const double t = datmat(mp, j) + parmu * datmat(mpp, j);
          if (t < phi || (t == phi && parmu == 0.0 && datmat(mpp, j) < datmat(mpp, np))) {
            pole_changed = true;
            break;
          }
        }
        if (pole_changed) continue;
      }
      prerem = parmu * prerec - sum;

      for (int i = 1; i <= n; ++i) x(i) = sim(i, np) + dx(i);
      if (!budget_left()) {
        status = Status::budget_exhausted;
        break;
      }
      evaluate(x, con);

      const double f = con(mp);
      const double resmax = con(mpp);
      const double vmold = datmat(mp, np) + parmu * datmat(mpp, np);
      const double vmnew = f + parmu * resmax;
      double trured = vmold - vmnew;
      if (parmu == 0.0 && f == datmat(mp, np)) {
        prerem = prerec;
        trured = datmat(mpp, np) - resmax;
      }

      // Choose the vertex that the trial point replaces (mandatory when the
      // merit function improved).
      double ratio = (trured <= 0.0) ? 1.0 : 0.0;
      int jdrop = 0;
      for (int j = 1; j <= n; ++j) {
        double t = 0.0;
        for (int i = 1; i <= n; ++i) t += simi(j, i) * dx(i);
        t = std::abs(t);
        if (t > ratio) {
          jdrop = j;
          ratio = t;
        }
        sigbar(j) = t * vsig(j);
      }

      double edgmax = kDelta * rho;
      int l = 0;
      for (int j = 1; j <= n; ++j) {
        if (sigbar(j) >= parsig || sigbar(j) >= vsig(j)) {
          double t = veta(j);
          if (trured > 0.0) {
            t = 0.0;
            for (int i = 1; i <= n; ++i) t += (dx(i) - sim(i, j)) * (dx(i) - sim(i, j));
            t = std::sqrt(t);
          }
          if (t > edgmax) {
            l = j;
            edgmax = t;
          }
        }
      }
      if (l > 0) jdrop = l;

      if (jdrop != 0) {
        double t = 0.0;
        for (int i = 1; i <= n; ++i) {
          sim(i, jdrop) = dx(i);
          t += simi(jdrop, i) * dx(i);
        }
        for (int i = 1; i <= n; ++i) simi(jdrop, i) /= t;
        for (int j = 1; j <= n; ++j) {
          if (j == jdrop) continue;
          double s = 0.0;
          for (int i = 1; i <= n; ++i) s += simi(j, i) * dx(i);
          for (int i = 1; i <= n; ++i) simi(j, i) -= s * simi(jdrop, i);
        }
        store_column(jdrop);
        if (trured > 0.0 && trured >= 0.1 * prerem) continue;
      }
    }

    if (iflag == 0) {
      geometry_pending = true;
      continue;
    }

    if (rho <= cfg_.rho_end) break;
    rho *= 0.5;
    if (rho <= 1.5 * cfg_.rho_end) rho = cfg_.rho_end;
    if (parmu > 0.0) {
      double denom = 0.0;
      double cmin = 0.0;
      double cmax = 0.0;
      for (int k = 1; k <= mp; ++k) {
        cmin = datmat(k, np);
        cmax = cmin;
        for (int i = 1; i <= n; ++i) {
          cmin = std::min(cmin, datmat(k, i));
          cmax = std::max(cmax, datmat(k, i));
        }
        if (k <= m && cmin < 0.5 * cmax) {
          const double t = std::max(cmax, 0.0) - cmin;
          denom = (denom <= 0.0) ? t : std::min(denom, t);
        }
      }
      if (denom == 0.0) {
        parmu = 0.0;
      } else if (cmax - cmin < parmu * denom) {
        parmu = (cmax - cmin) / denom;
      }
    }
  }

  OptResult result;
  result.x = best_.x;
  result.f = best_.f;
  result.max_violation = best_.violation;
  result.feasible = best_.feasible();
  result.evals = evals_;
  result.status = status;
  result.best_trace = std::move(trace_);
  return result;
}

}  // namespace

OptProblem OptProblem::box(Objective objective, const Eigen::VectorXd& lower,
                           const Eigen::VectorXd& upper, Eigen::VectorXd x0) {
  if (lower.size() != upper.size() || lower.size() != x0.size()) {
    throw std::invalid_argument("box bounds and start point must have equal length");
  }
  if ((lower.array() > upper.array()).any()) {
    throw std::invalid_argument("box lower bound exceeds upper bound");
  }
  const auto n = lower.size();
  OptProblem p;
  p.objective = std::move(objective);
  p.num_constraints = static_cast<int>(2 * n);
  p.constraints = [lower, upper, n](const Eigen::VectorXd& x, Eigen::VectorXd& c) {
    c.head(n) = x - lower;
    c.tail(n) = upper - x;
  };
  p.x0 = std::move(x0);
  return p;
}

OptResult minimize(const OptProblem& problem, const SolverConfig& cfg) {
  if (problem.x0.size() < 1) throw std::invalid_argument("optimization needs n >= 1");
  if (!problem.x0.allFinite()) throw std::invalid_argument("start point must be finite");
  if (!(cfg.rho_end > 0.0) || !(cfg.rho_begin >= cfg.rho_end)) {
    throw std::invalid_argument("need 0 < rho_end <= rho_begin");
  }
  if (cfg.max_evals < problem.x0.size() + 2) {
    throw std::invalid_argument("max_evals must be at least n + 2");
  }
  if (!problem.objective) throw std::invalid_argument("objective is empty");
  if (problem.num_constraints > 0 && !problem.constraints) {
    throw std::invalid_argument("constraint callback is empty");
  }
  Solver solver(problem, cfg);
  return solver.run();
}

}  // namespace span::dfo
