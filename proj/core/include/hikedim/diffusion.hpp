#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "hikedim/hmatrix.hpp"
#include "hikedim/krylov.hpp"
#include "hikedim/point_cloud.hpp"

namespace hikedim {

enum class Backend { kDense, kLanczosDense, kLanczosHMatrix };

const char* backend_name(Backend b);
Backend parse_backend(std::string_view name);  // throws InvalidArgument

struct DiffusionParams {
  double sigma = 0.0;   // <= 0 requests the median heuristic over min(n, 1000) points
  double alpha = 1.0;   // density normalization exponent in [0, 1]
  unsigned t = 1;       // diffusion time (eigenvalue power)
  std::size_t k = 5;    // eigenpairs kept, k >= 2
  double delta = 0.1;   // spectral-gap threshold in (0, 1)
  Backend backend = Backend::kDense;
  CompressionParams compression;  // hmatrix backend only
  double eig_tol = 1e-10;
  std::size_t max_restarts = 300;
  std::uint64_t seed = 0;
  std::size_t dense_limit = kDenseLimitDefault;

  void validate() const;  // throws InvalidArgument
};

struct DiffusionModel {
  std::vector<double> eigenvalues;  // k transition-operator eigenvalues, descending
  Eigen::MatrixXd psi;              // n x k right eigenvectors, unit norm, psi_0 constant
  Eigen::MatrixXd coords;           // n x (k-1): lambda_r^t * psi_r, columns by decreasing weight
  std::size_t d_t = 0;              // intrinsic dimension at time t
  Eigen::VectorXd degrees;          // raw kernel row sums Q
  std::vector<double> residuals;    // eigensolver residuals (zeros for the dense backend)
  bool converged = true;
  double sigma_used = 0.0;
  std::size_t matvecs = 0;
  double build_seconds = 0.0;       // operator assembly (dense fill or compression)
  double eig_seconds = 0.0;
  CompressionReport compression;    // populated by the hmatrix backend
};

// Density normalization W_alpha = D_Q^-alpha W D_Q^-alpha with Q = W 1.
// Throws DegenerateInput when any degree is <= 0.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> alpha_normalize(const Eigen::MatrixXd& w,
                                                            double alpha);
struct AlphaNormalizedOp {
  LinearOp w_alpha;
  Eigen::VectorXd q;  // raw degrees
};
AlphaNormalizedOp alpha_normalize(const LinearOp& w, double alpha);

// Symmetric conjugate A = D^-1/2 W_alpha D^-1/2 of the transition operator
// P = D^-1 W_alpha, where D = diag(q_alpha) and q_alpha = W_alpha 1. A and P
// share eigenvalues; right eigenvectors of P are D^-1/2 times eigenvectors
// of A. Throws DegenerateInput when any q_alpha entry is <= 0.
Eigen::MatrixXd markov_symmetrized(const Eigen::MatrixXd& w_alpha,
                                   const Eigen::VectorXd& q_alpha);
LinearOp markov_symmetrized(const LinearOp& w_alpha, const Eigen::VectorXd& q_alpha);

// Full pipeline: bandwidth selection, kernel (dense or compressed),
// normalization, spectral decomposition, embedding. Requires n >= k + 1; the
// dense backends additionally require n <= dense_limit.
DiffusionModel diffusion_map(const PointCloud& pc, const DiffusionParams& params);

// Largest l >= 1 with eigenvalues[l]^t > delta * eigenvalues[1]^t, for a
// descending spectrum; 0 when fewer than two eigenvalues or eigenvalues[1] <= 0.
std::size_t intrinsic_dimension(std::span<const double> eigenvalues, unsigned t, double delta);

// Writes <prefix>.eigenvalues.csv, <prefix>.eigenvectors.csv,
// <prefix>.coords.csv and <prefix>.summary.json.
void export_model(const DiffusionModel& model, const DiffusionParams& params,
                  const std::filesystem::path& prefix);

}  // namespace hikedim
