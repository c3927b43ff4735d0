#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "hikedim/hmatrix.hpp"

namespace hikedim {

// Matrix-free linear operator. apply must be deterministic and linear; when
// symmetric is set the eigensolver uses the three-term (Lanczos) recurrence
// and keeps H tridiagonal.
struct LinearOp {
  std::size_t n = 0;
  bool symmetric = false;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> apply;

  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const { return apply(x); }
};

LinearOp dense_operator(Eigen::MatrixXd a, bool symmetric);
LinearOp hmatrix_operator(const HMatrix& h);  // h must outlive the operator
// x -> scale .* inner(scale .* x); symmetric whenever inner is.
LinearOp diag_scaled_operator(Eigen::VectorXd scale, LinearOp inner);

// Length-m factorization  A X = X H + r e_m^T  with X^T X = I, X^T r = 0.
// H is m x m upper Hessenberg; on the symmetric path it is exactly
// tridiagonal (off-band entries are stored zeros).
struct ArnoldiFactorization {
  Eigen::MatrixXd x;  // n x m, orthonormal columns
  Eigen::MatrixXd h;  // m x m
  Eigen::VectorXd r;  // residual
  std::size_t m = 0;
  bool symmetric = true;
  // Set when a step produced a (numerically) zero residual: the built basis
  // spans an invariant subspace and its Ritz pairs are exact.
  bool invariant_subspace = false;
};

// Builds a fresh k-step factorization from start vector x0 (nonzero, length
// A.n, 1 <= k <= A.n). Orthogonalization is full Gram-Schmidt with a second
// corrective pass whenever the projection removed most of the vector's mass
// (||proj|| > 0.717 ||z||). Stops early with invariant_subspace set if the
// residual vanishes.
ArnoldiFactorization arnoldi_factorization(const LinearOp& a, const Eigen::VectorXd& x0,
                                           std::size_t k);

// Grows f in place to `steps` total columns. On residual breakdown: stops if
// continue_on_breakdown is false, otherwise restarts the recurrence with a
// seeded random vector orthogonal to the current basis (the zero coupling is
// recorded in H, so locked blocks stay locked). matvec_count, when given, is
// incremented per operator application.
void extend_factorization(const LinearOp& a, ArnoldiFactorization& f, std::size_t steps,
                          bool continue_on_breakdown = false, std::uint64_t seed = 0,
                          std::size_t* matvec_count = nullptr);

// Implicitly shifted restart: applies one bulge-chasing QR sweep per shift
// (restricted to unreduced diagonal blocks; negligible couplings are zeroed
// first, which deflates converged pairs instead of corrupting them) and
// truncates to length m - shifts.size(). Each retained Ritz value of a shifted
// sweep is filtered away from the compressed factorization. Passing no shifts
// returns f unchanged bit-for-bit. Requires shifts.size() < f.m.
ArnoldiFactorization implicit_restart(const ArnoldiFactorization& f,
                                      std::span<const double> shifts);

enum class Which {
  kLargestMagnitude,
  kLargestAlgebraic,
  kSmallestAlgebraic,
};

struct EigshOptions {
  std::size_t k = 5;
  Which which = Which::kLargestAlgebraic;
  double tol = 1e-10;
  std::size_t max_restarts = 300;
  std::size_t subspace = 0;  // 0 picks min(n, max(2k + 1, 20))
  std::uint64_t seed = 0;
};

struct EigResult {
  std::vector<double> values;       // sorted by the selection criterion, best first
  Eigen::MatrixXd vectors;          // n x k, unit columns
  std::vector<double> residuals;    // ||A v - lambda v|| per returned pair
  std::size_t iterations = 0;       // restart cycles performed
  std::size_t matvecs = 0;
  bool converged = false;
};

// Symmetric eigensolver: restarted Lanczos with exact shifts. A Ritz pair is
// accepted when its bound |beta_m y_m| <= tol * max(|theta|, eps^(2/3)).
// Returns the best available pairs with converged=false when the restart
// budget runs out (residuals are still reported honestly).
EigResult eigsh(const LinearOp& a, const EigshOptions& opt);

}  // namespace hikedim
