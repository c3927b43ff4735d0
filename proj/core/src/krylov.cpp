#include "hikedim/krylov.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "hikedim/errors.hpp"
#include "hikedim/random.hpp"

namespace hikedim {

LinearOp dense_operator(Eigen::MatrixXd a, bool symmetric) {
  if (a.rows() != a.cols()) throw InvalidArgument("dense operator must be square");
  auto mat = std::make_shared<Eigen::MatrixXd>(std::move(a));
  LinearOp op;
  op.n = static_cast<std::size_t>(mat->rows());
  op.symmetric = symmetric;
  op.apply = [mat](const Eigen::VectorXd& x) -> Eigen::VectorXd { return *mat * x; };
  return op;
}

LinearOp hmatrix_operator(const HMatrix& h) {
  LinearOp op;
  op.n = h.size();
  op.symmetric = true;
  op.apply = [&h](const Eigen::VectorXd& x) { return h.matvec(x); };
  return op;
}

LinearOp diag_scaled_operator(Eigen::VectorXd scale, LinearOp inner) {
  if (static_cast<std::size_t>(scale.size()) != inner.n)
    throw InvalidArgument("scale length does not match operator size");
  auto s = std::make_shared<Eigen::VectorXd>(std::move(scale));
  LinearOp op;
  op.n = inner.n;
  op.symmetric = inner.symmetric;
  op.apply = [s, in = std::move(inner)](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return s->cwiseProduct(in.apply(s->cwiseProduct(x)));
  };
  return op;
}

namespace {

// Second Gram-Schmidt pass when the projection removed most of the vector's
// mass; one corrective pass restores orthogonality to machine level.
constexpr double kReorthThreshold = 0.717;
constexpr double kBreakdownRel = 1e-14;

void gs_step(const Eigen::MatrixXd& x, std::size_t cols, const Eigen::VectorXd& z,
             Eigen::VectorXd& h, Eigen::VectorXd& r) {
  const double znorm = z.norm();
  const auto xb = x.leftCols(static_cast<Eigen::Index>(cols));
  h = xb.transpose() * z;
  r = z - xb * h;
  if (h.norm() > kReorthThreshold * znorm) {
    const Eigen::VectorXd c = xb.transpose() * r;
    r -= xb * c;
    h += c;
  }
}

bool residual_collapsed(double beta, const Eigen::MatrixXd& h, std::size_t m) {
  const double scale = h.topLeftCorner(static_cast<Eigen::Index>(m),
                                       static_cast<Eigen::Index>(m)).norm();
  return beta <= kBreakdownRel * scale;
}

}  // namespace

ArnoldiFactorization arnoldi_factorization(const LinearOp& a, const Eigen::VectorXd& x0,
                                           std::size_t k) {
  if (!a.apply || a.n == 0) throw InvalidArgument("operator is empty");
  if (static_cast<std::size_t>(x0.size()) != a.n)
    throw InvalidArgument("start vector length does not match operator");
  if (k < 1 || k > a.n) throw InvalidArgument("need 1 <= k <= n");
  const double xn = x0.norm();
  if (!(xn > 0.0) || !std::isfinite(xn)) throw InvalidArgument("start vector must be nonzero");

  ArnoldiFactorization f;
  f.symmetric = a.symmetric;
  f.x.resize(static_cast<Eigen::Index>(a.n), 1);
  f.x.col(0) = x0 / xn;
  const Eigen::VectorXd z = a.apply(f.x.col(0));
  Eigen::VectorXd h, r;
  gs_step(f.x, 1, z, h, r);
  f.h = Eigen::MatrixXd::Constant(1, 1, h(0));
  f.r = r;
  f.m = 1;
  if (residual_collapsed(f.r.norm(), f.h, 1)) f.invariant_subspace = true;
  if (k > 1) extend_factorization(a, f, k, false);
  return f;
}

void extend_factorization(const LinearOp& a, ArnoldiFactorization& f, std::size_t steps,
                          bool continue_on_breakdown, std::uint64_t seed,
                          std::size_t* matvec_count) {
  if (!a.apply || f.m == 0) throw InvalidArgument("factorization not initialized");
  if (static_cast<std::size_t>(f.x.rows()) != a.n)
    throw InvalidArgument("factorization does not match operator size");
  if (steps > a.n) throw InvalidArgument("steps cannot exceed n");
  if (steps <= f.m) return;

  const Eigen::Index n = static_cast<Eigen::Index>(a.n);
  const std::size_t old = f.m;
  f.x.conservativeResize(n, static_cast<Eigen::Index>(steps));
  {
    Eigen::MatrixXd grown = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(steps),
                                                  static_cast<Eigen::Index>(steps));
    grown.topLeftCorner(static_cast<Eigen::Index>(old), static_cast<Eigen::Index>(old)) =
        f.h.topLeftCorner(static_cast<Eigen::Index>(old), static_cast<Eigen::Index>(old));
    f.h = std::move(grown);
  }

  Eigen::VectorXd h, r;
  for (std::size_t j = old; j < steps; ++j) {
    const double beta = f.r.norm();
    double coupling = beta;
    if (residual_collapsed(beta, f.h, j)) {
      f.invariant_subspace = true;
      if (!continue_on_breakdown) {
        f.x.conservativeResize(n, static_cast<Eigen::Index>(j));
        Eigen::MatrixXd hs =
            f.h.topLeftCorner(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j));
        f.h = std::move(hs);
        f.m = j;
        return;
      }
      // Restart the recurrence in the orthogonal complement; the zero
      // coupling below keeps the completed block locked.
      std::mt19937_64 g(mix_seed(seed, 0xB0057ULL + j));
      Eigen::VectorXd v(n);
      double vnorm = 0.0;
      for (int attempt = 0; attempt < 16; ++attempt) {
        for (Eigen::Index i = 0; i < n; ++i) v(i) = uniform_in(g, -1.0, 1.0);
        const auto xb = f.x.leftCols(static_cast<Eigen::Index>(j));
        v -= xb * (xb.transpose() * v).eval();
        v -= xb * (xb.transpose() * v).eval();
        vnorm = v.norm();
        if (vnorm > 1e-6) break;
      }
      if (!(vnorm > 0.0)) throw DegenerateInput("cannot extend past an invariant subspace");
      f.x.col(static_cast<Eigen::Index>(j)) = v / vnorm;
      coupling = 0.0;
    } else {
      f.x.col(static_cast<Eigen::Index>(j)) = f.r / beta;
    }
    f.h(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j - 1)) = coupling;
    if (f.symmetric)
      f.h(static_cast<Eigen::Index>(j - 1), static_cast<Eigen::Index>(j)) = coupling;

    const Eigen::VectorXd z = a.apply(f.x.col(static_cast<Eigen::Index>(j)));
    if (matvec_count) ++*matvec_count;
    gs_step(f.x, j + 1, z, h, r);
    if (f.symmetric) {
      // Three-term recurrence: store the band only, off-band stays exactly 0.
      f.h(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) = h(static_cast<Eigen::Index>(j));
    } else {
      f.h.col(static_cast<Eigen::Index>(j)).head(static_cast<Eigen::Index>(j + 1)) = h;
    }
    f.r = std::move(r);
    f.m = j + 1;
  }
}

namespace {

void apply_rotation_left(Eigen::MatrixXd& m, std::size_t i, double c, double s) {
  const Eigen::Index cols = m.cols();
  for (Eigen::Index col = 0; col < cols; ++col) {
    const double t1 = m(static_cast<Eigen::Index>(i), col);
    const double t2 = m(static_cast<Eigen::Index>(i + 1), col);
    m(static_cast<Eigen::Index>(i), col) = c * t1 + s * t2;
    m(static_cast<Eigen::Index>(i + 1), col) = -s * t1 + c * t2;
  }
}

void apply_rotation_right(Eigen::MatrixXd& m, std::size_t i, double c, double s) {
  const Eigen::Index rows = m.rows();
  for (Eigen::Index row = 0; row < rows; ++row) {
    const double t1 = m(row, static_cast<Eigen::Index>(i));
    const double t2 = m(row, static_cast<Eigen::Index>(i + 1));
    m(row, static_cast<Eigen::Index>(i)) = c * t1 + s * t2;
    m(row, static_cast<Eigen::Index>(i + 1)) = -s * t1 + c * t2;
  }
}

// One implicitly shifted QR sweep on the unreduced Hessenberg block [l, u],
// chasing the bulge down the subdiagonal. Rotations accumulate into q.
void bulge_sweep(Eigen::MatrixXd& h, Eigen::MatrixXd& q, std::size_t l, std::size_t u,
                 double mu) {
  double x = h(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(l)) - mu;
  double z = h(static_cast<Eigen::Index>(l + 1), static_cast<Eigen::Index>(l));
  for (std::size_t i = l; i < u; ++i) {
    double c = 1.0, s = 0.0;
    if (z != 0.0) {
      const double r = std::hypot(x, z);
      c = x / r;
      s = z / r;
    }
    apply_rotation_left(h, i, c, s);
    apply_rotation_right(h, i, c, s);
    apply_rotation_right(q, i, c, s);
    if (i + 1 < u) {
      x = h(static_cast<Eigen::Index>(i + 1), static_cast<Eigen::Index>(i));
      z = h(static_cast<Eigen::Index>(i + 2), static_cast<Eigen::Index>(i));
    }
  }
}

}  // namespace

ArnoldiFactorization implicit_restart(const ArnoldiFactorization& f,
                                      std::span<const double> shifts) {
  if (f.m == 0) throw InvalidArgument("factorization not initialized");
  const std::size_t m = f.m;
  const std::size_t p = shifts.size();
  if (p == 0) return f;
  if (p >= m) throw InvalidArgument("shift count must be < m");
  for (double mu : shifts)
    if (!std::isfinite(mu)) throw InvalidArgument("non-finite shift");
  const std::size_t k = m - p;
  const double eps = std::numeric_limits<double>::epsilon();

  Eigen::MatrixXd h = f.h.topLeftCorner(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  Eigen::MatrixXd q = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(m),
                                                static_cast<Eigen::Index>(m));

  for (double mu : shifts) {
    // Negligible couplings are zeroed first: each unreduced block is swept on
    // its own, so converged (locked) blocks are never corrupted by the chase.
    for (std::size_t i = 0; i + 1 < m; ++i) {
      const Eigen::Index ii = static_cast<Eigen::Index>(i);
      if (std::abs(h(ii + 1, ii)) <= eps * (std::abs(h(ii, ii)) + std::abs(h(ii + 1, ii + 1))))
        h(ii + 1, ii) = 0.0;
    }
    std::size_t l = 0;
    while (l < m) {
      std::size_t u = l;
      while (u + 1 < m &&
             h(static_cast<Eigen::Index>(u + 1), static_cast<Eigen::Index>(u)) != 0.0)
        ++u;
      if (u > l) bulge_sweep(h, q, l, u, mu);
      l = u + 1;
    }
    // The chase leaves roundoff below the first subdiagonal.
    for (std::size_t i = 2; i < m; ++i)
      for (std::size_t j = 0; j + 1 < i; ++j)
        h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 0.0;
    if (f.symmetric) {
      // Restore the exact three-term structure.
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 2; j < m; ++j)
          h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 0.0;
      for (std::size_t i = 0; i + 1 < m; ++i) {
        const Eigen::Index ii = static_cast<Eigen::Index>(i);
        const double b = 0.5 * (h(ii + 1, ii) + h(ii, ii + 1));
        h(ii + 1, ii) = b;
        h(ii, ii + 1) = b;
      }
    }
  }

  ArnoldiFactorization out;
  out.symmetric = f.symmetric;
  out.m = k;
  out.x = f.x.leftCols(static_cast<Eigen::Index>(m)) * q.leftCols(static_cast<Eigen::Index>(k));
  out.h = h.topLeftCorner(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  const Eigen::VectorXd xk =
      f.x.leftCols(static_cast<Eigen::Index>(m)) * q.col(static_cast<Eigen::Index>(k));
  out.r = xk * h(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k - 1)) +
          f.r * q(static_cast<Eigen::Index>(m - 1), static_cast<Eigen::Index>(k - 1));
  return out;
}

namespace {

std::vector<std::size_t> order_by_which(const Eigen::VectorXd& theta, Which which) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(theta.size()));
  std::iota(idx.begin(), idx.end(), 0);
  const auto cmp = [&](std::size_t a, std::size_t b) {
    const double ta = theta(static_cast<Eigen::Index>(a));
    const double tb = theta(static_cast<Eigen::Index>(b));
    switch (which) {
      case Which::kLargestMagnitude:
        if (std::abs(ta) != std::abs(tb)) return std::abs(ta) > std::abs(tb);
        break;
      case Which::kLargestAlgebraic:
        if (ta != tb) return ta > tb;
        break;
      case Which::kSmallestAlgebraic:
        if (ta != tb) return ta < tb;
        break;
    }
    return a < b;
  };
  std::sort(idx.begin(), idx.end(), cmp);
  return idx;
}

}  // namespace

EigResult eigsh(const LinearOp& a, const EigshOptions& opt) {
  if (!a.apply || a.n == 0) throw InvalidArgument("operator is empty");
  if (!a.symmetric) throw InvalidArgument("eigsh needs a symmetric operator");
  if (opt.k < 1 || opt.k >= a.n) throw InvalidArgument("need 1 <= k < n");
  if (!(opt.tol > 0.0)) throw InvalidArgument("tol must be > 0");

  const std::size_t n = a.n;
  const std::size_t k = opt.k;
  const std::size_t m = opt.subspace
                            ? std::clamp(opt.subspace, k + 1, n)
                            : std::min(n, std::max(2 * k + 1, static_cast<std::size_t>(20)));
  const double eps23 = std::pow(std::numeric_limits<double>::epsilon(), 2.0 / 3.0);

  EigResult res;
  std::mt19937_64 g(opt.seed);
  Eigen::VectorXd x0(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x0.size(); ++i) x0(i) = uniform_in(g, -1.0, 1.0);
  if (x0.norm() == 0.0) x0(0) = 1.0;

  ArnoldiFactorization f = arnoldi_factorization(a, x0, 1);
  res.matvecs = 1;
  extend_factorization(a, f, m, true, opt.seed, &res.matvecs);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  Eigen::VectorXd theta;
  Eigen::MatrixXd svec;
  std::vector<std::size_t> ord;

  for (std::size_t iter = 0;; ++iter) {
    es.compute(f.h.topLeftCorner(static_cast<Eigen::Index>(f.m), static_cast<Eigen::Index>(f.m)));
    theta = es.eigenvalues();
    svec = es.eigenvectors();
    ord = order_by_which(theta, opt.which);
    const double beta = f.r.norm();

    std::size_t nconv = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t wi = ord[i];
      const double bound =
          std::abs(beta * svec(static_cast<Eigen::Index>(f.m - 1), static_cast<Eigen::Index>(wi)));
      const double target = std::abs(theta(static_cast<Eigen::Index>(wi)));
      if (bound <= opt.tol * std::max(target, eps23)) ++nconv;
    }
    if (nconv == k) {
      res.converged = true;
      break;
    }
    if (iter >= opt.max_restarts) break;

    std::vector<double> shifts;
    shifts.reserve(ord.size() - k);
    for (std::size_t i = k; i < ord.size(); ++i)
      shifts.push_back(theta(static_cast<Eigen::Index>(ord[i])));
    f = implicit_restart(f, shifts);
    extend_factorization(a, f, m, true, mix_seed(opt.seed, iter + 1), &res.matvecs);
    res.iterations = iter + 1;
  }

  res.values.resize(k);
  res.residuals.resize(k);
  res.vectors.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t wi = ord[i];
    Eigen::VectorXd v =
        f.x.leftCols(static_cast<Eigen::Index>(f.m)) * svec.col(static_cast<Eigen::Index>(wi));
    const double vn = v.norm();
    if (vn > 0.0) v /= vn;
    res.values[i] = theta(static_cast<Eigen::Index>(wi));
    const Eigen::VectorXd av = a.apply(v);
    ++res.matvecs;
    res.residuals[i] = (av - res.values[i] * v).norm();
    res.vectors.col(static_cast<Eigen::Index>(i)) = v;
  }
  return res;
}

}  // namespace hikedim
