// hikedim: hierarchical kernel compression and diffusion-map toolkit.
//
// Subcommands:
//   gen       synthetic point clouds (scurve, swiss, uniform)
//   compress  gaussian kernel -> compressed operator file, report on stdout
//   eigs      spectrum of the diffusion transition operator
//   dmap      full diffusion-map pipeline with file export
//   bench     strong/weak scaling harness
//
// Every command prints a single JSON object on stdout. Exit codes:
//   0  success
//   1  usage error, unparseable/invalid/degenerate input
//   2  the eigensolver ran out of restarts before converging
//   3  I/O failure

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <json.hpp>

#include "hikedim/bench.hpp"
#include "hikedim/diffusion.hpp"
#include "hikedim/errors.hpp"
#include "hikedim/hmatrix.hpp"
#include "hikedim/kernel.hpp"
#include "hikedim/krylov.hpp"
#include "hikedim/parallel.hpp"
#include "hikedim/point_cloud.hpp"

using json = nlohmann::json;
using namespace hikedim;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitNoConvergence = 2;
constexpr int kExitIo = 3;

PointFormat resolve_format(const std::string& name, const std::filesystem::path& path) {
  if (name == "csv") return PointFormat::kCsv;
  if (name == "f64") return PointFormat::kRawF64;
  return guess_point_format(path);
}

PointCloud load_cloud(const std::string& path, const std::string& format, std::size_t skip) {
  return load_points(path, resolve_format(format, path), skip);
}

double resolve_sigma(const PointCloud& pc, double sigma) {
  if (sigma > 0.0) return sigma;
  return median_sigma(pc, std::min<std::size_t>(pc.size(), 1000));
}

struct GenArgs {
  std::string shape;
  std::size_t n = 1000;
  std::size_t dim = 3;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "auto";
  bool dim_given = false;
};

int cmd_gen(const GenArgs& a) {
  PointCloud pc = [&] {
    if (a.shape == "scurve") {
      if (a.dim_given && a.dim != 3) throw InvalidArgument("scurve is always 3-dimensional");
      return generate_scurve(a.n, a.noise, a.seed);
    }
    if (a.shape == "swiss") {
      if (a.dim_given && a.dim != 3) throw InvalidArgument("swiss is always 3-dimensional");
      return generate_swiss_roll(a.n, a.noise, a.seed);
    }
    return generate_uniform(a.n, a.dim, a.seed);
  }();

  const PointFormat fmt = resolve_format(a.format, a.out);
  save_points(pc, a.out, fmt);

  json j;
  j["op"] = "gen";
  j["shape"] = a.shape;
  j["n"] = pc.size();
  j["dim"] = pc.dim();
  j["noise"] = a.noise;
  j["seed"] = a.seed;
  j["format"] = fmt == PointFormat::kCsv ? "csv" : "f64";
  j["out"] = a.out;
  std::cout << j.dump(2) << '\n';
  return 0;
}

struct CompressArgs {
  std::string points;
  std::string format = "auto";
  std::size_t skip_header = 0;
  double sigma = 0.0;
  CompressionParams params;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_compress(const CompressArgs& a) {
  const PointCloud pc = load_cloud(a.points, a.format, a.skip_header);
  const double sigma = resolve_sigma(pc, a.sigma);
  const GaussianKernel kernel(pc, sigma);
  auto [h, report] = compress(kernel, a.params, a.seed);
  save_hmatrix(h, a.out);

  json j;
  j["op"] = "compress";
  j["n"] = pc.size();
  j["dim"] = pc.dim();
  j["sigma"] = sigma;
  j["leaf"] = a.params.leaf_size_max;
  j["rank"] = a.params.rank_max;
  j["tol"] = a.params.tolerance;
  j["neighbors"] = a.params.kappa;
  j["seed"] = a.seed;
  j["est_rel_error"] = report.est_rel_error;
  j["compress_seconds"] = report.compress_seconds;
  j["stored_scalars"] = report.stored_scalars;
  j["apply_cost"] = h.apply_cost();
  j["ranks_per_level"] = report.ranks_per_level;
  j["out"] = a.out;
  std::cout << j.dump(2) << '\n';
  return 0;
}

struct EigsArgs {
  std::string in;       // compressed operator file
  std::string points;   // point file for the dense operator
  bool dense = false;
  bool compare = false;
  std::string format = "auto";
  std::size_t skip_header = 0;
  double sigma = 0.0;
  double alpha = 1.0;
  std::size_t k = 5;
  double tol = 1e-10;
  std::size_t max_restarts = 300;
  std::uint64_t seed = 0;
  std::string out;
};

// Transition-operator spectrum of a kernel operator: alpha-normalize, conjugate
// to the symmetric form, run the restarted Lanczos solver.
EigResult markov_spectrum(const LinearOp& kernel_op, const EigsArgs& a) {
  const AlphaNormalizedOp an = alpha_normalize(kernel_op, a.alpha);
  const Eigen::VectorXd qa =
      an.w_alpha(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(kernel_op.n)));
  const LinearOp aop = markov_symmetrized(an.w_alpha, qa);
  EigshOptions opt;
  opt.k = a.k;
  opt.which = Which::kLargestAlgebraic;
  opt.tol = a.tol;
  opt.max_restarts = a.max_restarts;
  opt.seed = a.seed;
  return eigsh(aop, opt);
}

void write_matrix(const std::string& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  char buf[32];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failure on " + path);
}

int cmd_eigs(const EigsArgs& a) {
  const bool have_hmatrix = !a.in.empty();
  const bool have_points = !a.points.empty();
  if (a.compare) {
    if (!have_hmatrix || !have_points)
      throw InvalidArgument("--compare needs both --in and --points");
  } else if (have_hmatrix == (have_points && a.dense)) {
    throw InvalidArgument("give either --in <operator> or --points <file> --dense");
  }

  json j;
  j["op"] = "eigs";
  j["k"] = a.k;
  j["alpha"] = a.alpha;
  j["tol"] = a.tol;

  // Dense side (when requested): same pipeline on the exact kernel.
  EigResult dense_res;
  bool dense_ran = false;
  if (have_points && (a.dense || a.compare)) {
    const PointCloud pc = load_cloud(a.points, a.format, a.skip_header);
    if (pc.size() > kDenseLimitDefault)
      throw InvalidArgument("dense operator limited to " +
                            std::to_string(kDenseLimitDefault) + " points");
    const double sigma = resolve_sigma(pc, a.sigma);
    dense_res = markov_spectrum(dense_operator(gaussian_kernel(pc, sigma).entries, true), a);
    dense_ran = true;
    j["sigma"] = sigma;
    j["n"] = pc.size();
  }

  EigResult hier_res;
  bool hier_ran = false;
  std::optional<HMatrix> h;
  if (have_hmatrix) {
    h.emplace(load_hmatrix(a.in));
    hier_res = markov_spectrum(hmatrix_operator(*h), a);
    hier_ran = true;
    j["n"] = h->size();
    j["in"] = a.in;
  }

  // The compressed operator is the primary result when both ran.
  const EigResult& primary = hier_ran ? hier_res : dense_res;
  j["source"] = hier_ran ? "hmatrix" : "dense";
  j["eigenvalues"] = primary.values;
  j["residuals"] = primary.residuals;
  j["iterations"] = primary.iterations;
  j["matvecs"] = primary.matvecs;
  j["converged"] = primary.converged;

  if (a.compare) {
    j["dense_eigenvalues"] = dense_res.values;
    double sq = 0.0;
    for (std::size_t i = 0; i < a.k; ++i) {
      const double d = hier_res.values[i] - dense_res.values[i];
      sq += d * d;
    }
    j["eigenvalue_diff"] = std::sqrt(sq);
    j["dense_converged"] = dense_res.converged;
  }

  if (!a.out.empty()) {
    Eigen::MatrixXd vals(static_cast<Eigen::Index>(primary.values.size()), 1);
    for (std::size_t i = 0; i < primary.values.size(); ++i)
      vals(static_cast<Eigen::Index>(i), 0) = primary.values[i];
    write_matrix(a.out + ".values.csv", vals);
    write_matrix(a.out + ".vectors.csv", primary.vectors);
    j["out"] = a.out;
  }

  std::cout << j.dump(2) << '\n';
  const bool ok = primary.converged && (!dense_ran || dense_res.converged);
  return ok ? 0 : kExitNoConvergence;
}

struct DmapArgs {
  std::string points;
  std::string format = "auto";
  std::size_t skip_header = 0;
  DiffusionParams params;
  std::string backend = "dense";
  std::string out;
};

int cmd_dmap(const DmapArgs& a) {
  DiffusionParams params = a.params;
  params.backend = parse_backend(a.backend);
  const PointCloud pc = load_cloud(a.points, a.format, a.skip_header);
  const DiffusionModel model = diffusion_map(pc, params);
  export_model(model, params, a.out);

  json j;
  j["op"] = "dmap";
  j["n"] = pc.size();
  j["k"] = params.k;
  j["t"] = params.t;
  j["alpha"] = params.alpha;
  j["delta"] = params.delta;
  j["sigma"] = model.sigma_used;
  j["backend"] = backend_name(params.backend);
  j["eigenvalues"] = model.eigenvalues;
  j["intrinsic_dimension"] = model.d_t;
  j["converged"] = model.converged;
  j["matvecs"] = model.matvecs;
  j["build_seconds"] = model.build_seconds;
  j["eig_seconds"] = model.eig_seconds;
  j["out"] = a.out;
  std::cout << j.dump(2) << '\n';
  return model.converged ? 0 : kExitNoConvergence;
}

struct BenchArgs {
  BenchConfig config;
  std::string out;
};

int cmd_bench(const BenchArgs& a) {
  const std::vector<BenchRecord> records = run_bench(a.config);

  std::ofstream out(a.out, std::ios::trunc);
  if (!out) throw IoError("cannot open " + a.out + " for writing");
  write_bench_csv(out, a.config, records);
  if (!out) throw IoError("write failure on " + a.out);

  // Strong scaling should not slow down as threads are added; flag it if it
  // does, but a saturated machine is not an error.
  if (a.config.mode == "strong") {
    for (std::size_t i = 1; i < records.size(); ++i) {
      if (!records[i].error.empty() || !records[i - 1].error.empty()) continue;
      if (records[i].median_seconds > records[i - 1].median_seconds)
        std::cerr << "warning: median time rose from " << records[i - 1].threads << " to "
                  << records[i].threads << " threads ("
                  << records[i - 1].median_seconds << "s -> "
                  << records[i].median_seconds << "s)\n";
    }
  }

  json j;
  j["op"] = "bench";
  j["mode"] = a.config.mode;
  j["bench_op"] = a.config.op;
  j["rows"] = records.size();
  json rows = json::array();
  for (const auto& r : records) {
    rows.push_back({{"n", r.n},
                    {"threads", r.threads},
                    {"median_seconds", r.median_seconds},
                    {"efficiency_pct", r.efficiency_pct},
                    {"sigma", r.sigma},
                    {"error", r.error}});
  }
  j["records"] = rows;
  j["out"] = a.out;
  std::cout << j.dump(2) << '\n';
  return 0;
}

void add_compression_flags(CLI::App* cmd, CompressionParams& p) {
  cmd->add_option("--leaf", p.leaf_size_max, "max points per leaf block");
  cmd->add_option("--rank", p.rank_max, "max rank per far-field block");
  cmd->add_option("--tol", p.tolerance, "cross-approximation pivot tolerance");
  cmd->add_option("--neighbors", p.kappa, "near-field neighbors per point");
}

int run(int argc, char** argv) {
  CLI::App app{"hierarchical kernel compression and diffusion maps"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = all hardware threads)")
      ->envname("HIKEDIM_THREADS");

  GenArgs gen;
  CLI::App* cgen = app.add_subcommand("gen", "generate a synthetic point cloud");
  cgen->add_option("shape", gen.shape, "scurve | swiss | uniform")
      ->required()
      ->check(CLI::IsMember({"scurve", "swiss", "uniform"}));
  cgen->add_option("--n", gen.n, "number of points");
  auto* dim_opt = cgen->add_option("--dim", gen.dim, "ambient dimension (uniform only)");
  cgen->add_option("--noise", gen.noise, "gaussian noise level");
  cgen->add_option("--seed", gen.seed, "random seed");
  cgen->add_option("--out", gen.out, "output point file")->required();
  cgen->add_option("--format", gen.format, "csv | f64 | auto (by extension)")
      ->check(CLI::IsMember({"auto", "csv", "f64"}));

  CompressArgs comp;
  CLI::App* ccomp = app.add_subcommand("compress", "compress a gaussian kernel operator");
  ccomp->add_option("points", comp.points, "input point file")->required();
  ccomp->add_option("--format", comp.format, "csv | f64 | auto")
      ->check(CLI::IsMember({"auto", "csv", "f64"}));
  ccomp->add_option("--skip-header", comp.skip_header, "header lines to skip (csv)");
  ccomp->add_option("--sigma", comp.sigma, "kernel bandwidth (<= 0: median heuristic)");
  add_compression_flags(ccomp, comp.params);
  ccomp->add_option("--seed", comp.seed, "random seed");
  ccomp->add_option("--out", comp.out, "output operator file")->required();

  EigsArgs eigs;
  CLI::App* ceigs =
      app.add_subcommand("eigs", "eigenpairs of the diffusion transition operator");
  ceigs->add_option("--in", eigs.in, "compressed operator file");
  ceigs->add_option("--points", eigs.points, "point file (dense operator)");
  ceigs->add_flag("--dense", eigs.dense, "eigensolve the dense operator from --points");
  ceigs->add_flag("--compare", eigs.compare,
                  "run compressed and dense side by side, report the difference");
  ceigs->add_option("--format", eigs.format, "csv | f64 | auto")
      ->check(CLI::IsMember({"auto", "csv", "f64"}));
  ceigs->add_option("--skip-header", eigs.skip_header, "header lines to skip (csv)");
  ceigs->add_option("--sigma", eigs.sigma, "kernel bandwidth for the dense side");
  ceigs->add_option("--alpha", eigs.alpha, "density normalization exponent");
  ceigs->add_option("--k", eigs.k, "number of eigenpairs");
  ceigs->add_option("--tol", eigs.tol, "eigensolver tolerance");
  ceigs->add_option("--max-restarts", eigs.max_restarts, "restart budget");
  ceigs->add_option("--seed", eigs.seed, "random seed");
  ceigs->add_option("--out", eigs.out, "output prefix for values/vectors CSVs");

  DmapArgs dmap;
  CLI::App* cdmap = app.add_subcommand("dmap", "diffusion map embedding");
  cdmap->add_option("points", dmap.points, "input point file")->required();
  cdmap->add_option("--format", dmap.format, "csv | f64 | auto")
      ->check(CLI::IsMember({"auto", "csv", "f64"}));
  cdmap->add_option("--skip-header", dmap.skip_header, "header lines to skip (csv)");
  cdmap->add_option("--sigma", dmap.params.sigma, "kernel bandwidth (<= 0: median heuristic)");
  cdmap->add_option("--alpha", dmap.params.alpha, "density normalization exponent");
  cdmap->add_option("--t", dmap.params.t, "diffusion time");
  cdmap->add_option("--k", dmap.params.k, "eigenpairs kept");
  cdmap->add_option("--delta", dmap.params.delta, "spectral-gap threshold");
  cdmap->add_option("--backend", dmap.backend, "dense | lanczos-dense | lanczos-hmatrix");
  add_compression_flags(cdmap, dmap.params.compression);
  cdmap->add_option("--eig-tol", dmap.params.eig_tol, "eigensolver tolerance");
  cdmap->add_option("--max-restarts", dmap.params.max_restarts, "restart budget");
  cdmap->add_option("--seed", dmap.params.seed, "random seed");
  cdmap->add_option("--out", dmap.out, "output prefix")->required();

  BenchArgs bench;
  CLI::App* cbench = app.add_subcommand("bench", "strong/weak scaling harness");
  cbench->add_option("--mode", bench.config.mode, "strong | weak");
  cbench->add_option("--op", bench.config.op, "evaluate | compress");
  cbench->add_option("--sizes", bench.config.sizes, "problem sizes, ascending")
      ->required()
      ->delimiter(',');
  cbench->add_option("--threads-list", bench.config.thread_counts, "thread counts")
      ->required()
      ->delimiter(',');
  cbench->add_option("--reps", bench.config.reps, "timed repetitions (>= 3)");
  cbench->add_option("--dim", bench.config.dim, "cloud dimension");
  cbench->add_option("--sigma", bench.config.sigma, "kernel bandwidth (<= 0: median heuristic)");
  add_compression_flags(cbench, bench.config.compression);
  cbench->add_option("--seed", bench.config.seed, "random seed");
  cbench->add_option("--out", bench.out, "output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  gen.dim_given = dim_opt->count() > 0;
  set_thread_count(threads);

  if (cgen->parsed()) return cmd_gen(gen);
  if (ccomp->parsed()) return cmd_compress(comp);
  if (ceigs->parsed()) return cmd_eigs(eigs);
  if (cdmap->parsed()) return cmd_dmap(dmap);
  return cmd_bench(bench);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DegenerateInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}
