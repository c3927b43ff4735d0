#include "hikedim/diffusion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include <Eigen/Dense>
#include <json.hpp>

#include "hikedim/errors.hpp"
#include "hikedim/kernel.hpp"

namespace hikedim {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Exact integer power; eigenvalue weights must not pick up pow() slack.
double powi(double x, unsigned t) {
  double r = 1.0;
  while (t) {
    if (t & 1u) r *= x;
    x *= x;
    t >>= 1;
  }
  return r;
}

void check_positive(const Eigen::VectorXd& q, const char* what) {
  for (Eigen::Index i = 0; i < q.size(); ++i)
    if (!(q(i) > 0.0) || !std::isfinite(q(i)))
      throw DegenerateInput(std::string(what) + " must be strictly positive (row " +
                            std::to_string(i) + ")");
}

}  // namespace

void DiffusionParams::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must be in [0, 1]");
  if (t < 1) throw InvalidArgument("diffusion time t must be >= 1");
  if (k < 2) throw InvalidArgument("need k >= 2 eigenpairs");
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("delta must be in (0, 1)");
  if (!(eig_tol > 0.0)) throw InvalidArgument("eig_tol must be > 0");
  if (dense_limit < 1) throw InvalidArgument("dense_limit must be >= 1");
  if (sigma > 0.0 && !std::isfinite(sigma)) throw InvalidArgument("sigma must be finite");
  compression.validate();
}

std::pair<Eigen::MatrixXd, Eigen::VectorXd> alpha_normalize(const Eigen::MatrixXd& w,
                                                            double alpha) {
  if (w.rows() != w.cols()) throw InvalidArgument("kernel matrix must be square");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must be in [0, 1]");
  Eigen::VectorXd q = w.rowwise().sum();
  check_positive(q, "kernel degrees");
  if (alpha == 0.0) return {w, std::move(q)};
  const Eigen::VectorXd qa = q.array().pow(-alpha);
  Eigen::MatrixXd wa = qa.asDiagonal() * w * qa.asDiagonal();
  return {std::move(wa), std::move(q)};
}

AlphaNormalizedOp alpha_normalize(const LinearOp& w, double alpha) {
  if (!w.apply || w.n == 0) throw InvalidArgument("kernel operator is empty");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must be in [0, 1]");
  Eigen::VectorXd q = w.apply(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(w.n)));
  check_positive(q, "kernel degrees");
  AlphaNormalizedOp out;
  if (alpha == 0.0) {
    out.w_alpha = w;
  } else {
    out.w_alpha = diag_scaled_operator(q.array().pow(-alpha), w);
  }
  out.q = std::move(q);
  return out;
}

Eigen::MatrixXd markov_symmetrized(const Eigen::MatrixXd& w_alpha,
                                   const Eigen::VectorXd& q_alpha) {
  if (w_alpha.rows() != w_alpha.cols() || w_alpha.rows() != q_alpha.size())
    throw InvalidArgument("normalized kernel and degree sizes do not match");
  check_positive(q_alpha, "normalized degrees");
  const Eigen::VectorXd dh = q_alpha.array().rsqrt();
  return dh.asDiagonal() * w_alpha * dh.asDiagonal();
}

LinearOp markov_symmetrized(const LinearOp& w_alpha, const Eigen::VectorXd& q_alpha) {
  if (!w_alpha.apply || static_cast<std::size_t>(q_alpha.size()) != w_alpha.n)
    throw InvalidArgument("normalized kernel and degree sizes do not match");
  check_positive(q_alpha, "normalized degrees");
  return diag_scaled_operator(q_alpha.array().rsqrt(), w_alpha);
}

std::size_t intrinsic_dimension(std::span<const double> eigenvalues, unsigned t, double delta) {
  if (eigenvalues.size() < 2) return 0;
  const double l1 = eigenvalues[1];
  if (!(l1 > 0.0)) return 0;
  const double threshold = delta * powi(l1, t);
  std::size_t d = 0;
  for (std::size_t l = 1; l < eigenvalues.size(); ++l)
    if (powi(eigenvalues[l], t) > threshold) d = l;
  return d;
}

DiffusionModel diffusion_map(const PointCloud& pc, const DiffusionParams& params) {
  params.validate();
  const std::size_t n = pc.size();
  if (n < params.k + 1) throw InvalidArgument("need n >= k + 1 points");

  DiffusionModel model;
  double sigma = params.sigma;
  if (!(sigma > 0.0)) sigma = median_sigma(pc, std::min<std::size_t>(n, 1000));
  model.sigma_used = sigma;

  const std::size_t k = params.k;
  EigResult eig;
  Eigen::VectorXd to_psi;  // D^-1/2, maps symmetrized eigenvectors to psi
  const auto t0 = Clock::now();

  if (params.backend == Backend::kDense || params.backend == Backend::kLanczosDense) {
    if (n > params.dense_limit)
      throw InvalidArgument("dense backends need n <= dense_limit (" +
                            std::to_string(params.dense_limit) + ")");
    Eigen::MatrixXd w = gaussian_kernel(pc, sigma).entries;
    auto [wa, q] = alpha_normalize(w, params.alpha);
    w.resize(0, 0);
    model.degrees = std::move(q);
    const Eigen::VectorXd qa = wa.rowwise().sum();
    check_positive(qa, "normalized degrees");
    Eigen::MatrixXd amat = markov_symmetrized(wa, qa);
    wa.resize(0, 0);
    to_psi = qa.array().rsqrt();
    model.build_seconds = seconds_since(t0);

    const auto t1 = Clock::now();
    if (params.backend == Backend::kDense) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(amat);
      if (es.info() != Eigen::Success) throw DataError("dense eigendecomposition failed");
      eig.values.resize(k);
      eig.vectors.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
      eig.residuals.assign(k, 0.0);
      const Eigen::Index nn = static_cast<Eigen::Index>(n);
      for (std::size_t r = 0; r < k; ++r) {
        eig.values[r] = es.eigenvalues()(nn - 1 - static_cast<Eigen::Index>(r));
        eig.vectors.col(static_cast<Eigen::Index>(r)) =
            es.eigenvectors().col(nn - 1 - static_cast<Eigen::Index>(r));
      }
      eig.converged = true;
    } else {
      const LinearOp aop = dense_operator(std::move(amat), true);
      EigshOptions opt;
      opt.k = k;
      opt.which = Which::kLargestAlgebraic;
      opt.tol = params.eig_tol;
      opt.max_restarts = params.max_restarts;
      opt.seed = params.seed;
      eig = eigsh(aop, opt);
    }
    model.eig_seconds = seconds_since(t1);
  } else {
    const GaussianKernel kern(pc, sigma);
    auto [h, report] = compress(kern, params.compression, params.seed);
    model.compression = std::move(report);
    const LinearOp wop = hmatrix_operator(h);
    const AlphaNormalizedOp an = alpha_normalize(wop, params.alpha);
    model.degrees = an.q;
    const Eigen::VectorXd qa =
        an.w_alpha.apply(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n)));
    check_positive(qa, "normalized degrees");
    const LinearOp aop = markov_symmetrized(an.w_alpha, qa);
    to_psi = qa.array().rsqrt();
    model.build_seconds = seconds_since(t0);

    const auto t1 = Clock::now();
    EigshOptions opt;
    opt.k = k;
    opt.which = Which::kLargestAlgebraic;
    opt.tol = params.eig_tol;
    opt.max_restarts = params.max_restarts;
    opt.seed = params.seed;
    eig = eigsh(aop, opt);
    model.eig_seconds = seconds_since(t1);
  }

  model.eigenvalues = eig.values;
  model.residuals = eig.residuals;
  model.converged = eig.converged;
  model.matvecs = eig.matvecs;

  // psi_r = D^-1/2 v_r, unit norm, sign fixed by the largest-magnitude entry.
  model.psi.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  for (std::size_t r = 0; r < k; ++r) {
    Eigen::VectorXd psi = to_psi.cwiseProduct(eig.vectors.col(static_cast<Eigen::Index>(r)));
    const double norm = psi.norm();
    if (norm > 0.0) psi /= norm;
    Eigen::Index imax = 0;
    psi.cwiseAbs().maxCoeff(&imax);
    if (psi(imax) < 0.0) psi = -psi;
    model.psi.col(static_cast<Eigen::Index>(r)) = psi;
  }

  // Embedding columns: lambda_r^t psi_r for r >= 1, heaviest weight first.
  std::vector<std::size_t> cols(k - 1);
  std::iota(cols.begin(), cols.end(), 1);
  std::vector<double> weight(k);
  for (std::size_t r = 0; r < k; ++r) weight[r] = powi(model.eigenvalues[r], params.t);
  std::stable_sort(cols.begin(), cols.end(),
                   [&](std::size_t a, std::size_t b) { return weight[a] > weight[b]; });
  model.coords.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k - 1));
  for (std::size_t c = 0; c < k - 1; ++c)
    model.coords.col(static_cast<Eigen::Index>(c)) =
        weight[cols[c]] * model.psi.col(static_cast<Eigen::Index>(cols[c]));

  model.d_t = intrinsic_dimension(model.eigenvalues, params.t, params.delta);
  return model;
}

namespace {

void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  char buf[64];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::string line;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const int len = std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      if (j) line += ',';
      line.append(buf, static_cast<std::size_t>(len));
    }
    line += '\n';
    out << line;
  }
  if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::kDense:
      return "dense";
    case Backend::kLanczosDense:
      return "lanczos-dense";
    case Backend::kLanczosHMatrix:
      return "lanczos-hmatrix";
  }
  return "unknown";
}

Backend parse_backend(std::string_view name) {
  if (name == "dense") return Backend::kDense;
  if (name == "lanczos-dense") return Backend::kLanczosDense;
  if (name == "lanczos-hmatrix") return Backend::kLanczosHMatrix;
  throw InvalidArgument("unknown backend '" + std::string(name) +
                        "' (expected dense, lanczos-dense or lanczos-hmatrix)");
}

void export_model(const DiffusionModel& model, const DiffusionParams& params,
                  const std::filesystem::path& prefix) {
  const std::string base = prefix.string();
  Eigen::MatrixXd vals(static_cast<Eigen::Index>(model.eigenvalues.size()), 1);
  for (std::size_t i = 0; i < model.eigenvalues.size(); ++i)
    vals(static_cast<Eigen::Index>(i), 0) = model.eigenvalues[i];
  write_matrix_csv(base + ".eigenvalues.csv", vals);
  write_matrix_csv(base + ".eigenvectors.csv", model.psi);
  write_matrix_csv(base + ".coords.csv", model.coords);

  nlohmann::json j;
  j["n"] = model.psi.rows();
  j["k"] = model.eigenvalues.size();
  j["t"] = params.t;
  j["alpha"] = params.alpha;
  j["delta"] = params.delta;
  j["sigma"] = model.sigma_used;
  j["backend"] = backend_name(params.backend);
  j["eigenvalues"] = model.eigenvalues;
  j["intrinsic_dimension"] = model.d_t;
  j["converged"] = model.converged;
  j["residuals"] = model.residuals;
  j["matvecs"] = model.matvecs;
  j["build_seconds"] = model.build_seconds;
  j["eig_seconds"] = model.eig_seconds;
  if (params.backend == Backend::kLanczosHMatrix) {
    j["compression"] = {{"est_rel_error", model.compression.est_rel_error},
                        {"compress_seconds", model.compression.compress_seconds},
                        {"stored_scalars", model.compression.stored_scalars},
                        {"ranks_per_level", model.compression.ranks_per_level}};
  }
  std::ofstream out(base + ".summary.json", std::ios::trunc);
  if (!out) throw IoError("cannot open " + base + ".summary.json for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failure on " + base + ".summary.json");
}

}  // namespace hikedim
