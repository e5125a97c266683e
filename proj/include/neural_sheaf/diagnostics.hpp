#pragma once

// Spectral and discord diagnostics for any NetworkSpec embedded as a sheaf.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "neural_sheaf/dataset.hpp"
#include "neural_sheaf/diffusion.hpp"
#include "neural_sheaf/errors.hpp"
#include "neural_sheaf/network.hpp"
#include "neural_sheaf/operators.hpp"
#include "neural_sheaf/sheaf.hpp"

namespace neural_sheaf {

template <typename Scalar>
struct SpectrumReport {
  VectorX<Scalar> eigenvalues;   ///< ascending
  MatrixX<Scalar> eigenvectors;  ///< unit columns, largest-magnitude entry positive
  Scalar lambda1 = 0;
  Scalar lambda_max = 0;
  Scalar kappa = 0;
};

/// Full symmetric eigendecomposition of `L`.
template <typename Scalar>
SpectrumReport<Scalar> spectrum(const MatrixX<Scalar>& L, Scalar symmetry_tol = Scalar(1e-10)) {
  if (L.rows() != L.cols()) throw DimensionError("spectrum needs a square matrix");
  if (L.rows() == 0) throw InvalidInputError("spectrum of an empty matrix");
  if (!L.allFinite()) throw InvalidInputError("matrix has non-finite entries");
  if ((L - L.transpose()).cwiseAbs().maxCoeff() > symmetry_tol) throw InvalidInputError("matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> solver(L);
  if (solver.info() != Eigen::Success) throw InvalidInputError("eigendecomposition failed");
  SpectrumReport<Scalar> r;
  r.eigenvalues = solver.eigenvalues();
  r.eigenvectors = solver.eigenvectors();
  for (Eigen::Index j = 0; j < r.eigenvectors.cols(); ++j) {
    Eigen::Index i = 0;
    r.eigenvectors.col(j).cwiseAbs().maxCoeff(&i);
    if (r.eigenvectors(i, j) < Scalar(0)) r.eigenvectors.col(j) *= Scalar(-1);
  }
  r.lambda1 = r.eigenvalues(0);
  r.lambda_max = r.eigenvalues(r.eigenvalues.size() - 1);
  r.kappa = r.lambda_max / r.lambda1;
  return r;
}

/// Vertex block names and positions (within the restricted Laplacian) of the
/// free coordinates. With `reduced`, free y_hat coordinates are skipped.
template <typename Scalar>
std::vector<std::pair<std::string, std::vector<Eigen::Index>>> free_blocks(const NeuralSheaf<Scalar>& sheaf,
                                                                           bool reduced) {
  std::vector<std::pair<std::string, std::vector<Eigen::Index>>> blocks;
  const auto& free = sheaf.free_indices();
  const Vertex& out = sheaf.vertex(sheaf.output_vertex());
  Eigen::Index pos = 0;
  for (auto idx : free) {
    if (reduced && idx >= out.offset && idx < out.offset + out.dim) continue;
    const auto& vs = sheaf.vertices();
    const auto it = std::find_if(vs.begin(), vs.end(), [&](const Vertex& v) { return idx >= v.offset && idx < v.offset + v.dim; });
    if (blocks.empty() || blocks.back().first != it->name) blocks.push_back({it->name, {}});
    blocks.back().second.push_back(pos++);
  }
  return blocks;
}

struct BlockEnergy {
  std::string block;
  double energy = 0;
};

template <typename Scalar>
std::vector<BlockEnergy> block_energy(const VectorX<Scalar>& v,
                                      const std::vector<std::pair<std::string, std::vector<Eigen::Index>>>& blocks) {
  std::vector<BlockEnergy> out;
  for (const auto& [name, idx] : blocks) {
    double e = 0;
    for (auto i : idx) e += static_cast<double>(v(i) * v(i));
    out.push_back(BlockEnergy{name, e});
  }
  return out;
}

/// Restricted Laplacian at the forward-pass pattern of a single input: the
/// reduced (Schur) form for identity output, the full form otherwise.
template <typename Scalar>
MatrixX<Scalar> forward_restricted_laplacian(const NeuralSheaf<Scalar>& sheaf, const VectorX<Scalar>& input,
                                             bool* reduced_out = nullptr) {
  const MatrixX<Scalar> x = input;
  const ActivationPattern pattern = forward_pass(sheaf.network(), x).pattern;
  const bool reduced = sheaf.network().output_activation == OutputActivation::identity;
  if (reduced_out) *reduced_out = reduced;
  return restricted_laplacian(sheaf, pattern, reduced, 0);
}

struct SummaryStats {
  double median = 0;
  double mean = 0;
  double std = 0;  ///< sample standard deviation; 0 for a single value
  double min = 0;
  double max = 0;
};

inline SummaryStats summarize(std::vector<double> values) {
  if (values.empty()) throw InvalidInputError("no values to summarize");
  SummaryStats s;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  s.median = n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double ss = 0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  s.min = values.front();
  s.max = values.back();
  return s;
}

struct SpectralSweep {
  std::vector<double> lambda1;
  std::vector<double> lambda_max;
  std::vector<double> kappa;
  SummaryStats lambda1_stats;
  SummaryStats lambda_max_stats;
  SummaryStats kappa_stats;
};

/// Spectral statistics over the given inputs (one per column).
template <typename Scalar>
SpectralSweep spectral_sweep(const NetworkSpec<Scalar>& spec, const MatrixX<Scalar>& inputs) {
  if (inputs.cols() < 1) throw InvalidInputError("spectral sweep needs at least one input");
  const NeuralSheaf<Scalar> sheaf(spec);
  SpectralSweep out;
  for (Eigen::Index m = 0; m < inputs.cols(); ++m) {
    const SpectrumReport<Scalar> r = spectrum(forward_restricted_laplacian(sheaf, VectorX<Scalar>(inputs.col(m))));
    out.lambda1.push_back(static_cast<double>(r.lambda1));
    out.lambda_max.push_back(static_cast<double>(r.lambda_max));
    out.kappa.push_back(static_cast<double>(r.kappa));
  }
  out.lambda1_stats = summarize(out.lambda1);
  out.lambda_max_stats = summarize(out.lambda_max);
  out.kappa_stats = summarize(out.kappa);
  return out;
}

/// Inputs uniform on [-radius, radius]^{n0}.
inline Eigen::MatrixXd uniform_inputs(Eigen::Index n0, Eigen::Index count, std::uint64_t seed, double radius = 2.0) {
  if (count < 1) throw InvalidInputError("need at least one input");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-radius, radius);
  Eigen::MatrixXd x(n0, count);
  for (Eigen::Index j = 0; j < count; ++j) {
    for (Eigen::Index i = 0; i < n0; ++i) x(i, j) = unit(rng);
  }
  return x;
}

template <typename Scalar>
SpectralSweep spectral_sweep(const NetworkSpec<Scalar>& spec, Eigen::Index n_inputs, std::uint64_t seed) {
  return spectral_sweep(spec, MatrixX<Scalar>(uniform_inputs(spec.input_dim(), n_inputs, seed).template cast<Scalar>()));
}

/// Statistics over `samples` draws of (He-initialized network, uniform input):
/// each input is paired with its own freshly initialized network.
inline SpectralSweep he_spectral_sweep(const std::vector<Eigen::Index>& layer_dims, Eigen::Index samples,
                                       std::uint64_t seed) {
  if (samples < 1) throw InvalidInputError("spectral sweep needs at least one sample");
  std::mt19937_64 rng(seed);
  const Eigen::MatrixXd inputs = uniform_inputs(layer_dims.front(), samples, seed);
  SpectralSweep out;
  for (Eigen::Index m = 0; m < samples; ++m) {
    const NeuralSheaf<double> sheaf(he_initialized<double>(layer_dims, OutputActivation::identity, rng));
    const SpectrumReport<double> r = spectrum(forward_restricted_laplacian(sheaf, Eigen::VectorXd(inputs.col(m))));
    out.lambda1.push_back(r.lambda1);
    out.lambda_max.push_back(r.lambda_max);
    out.kappa.push_back(r.kappa);
  }
  out.lambda1_stats = summarize(out.lambda1);
  out.lambda_max_stats = summarize(out.lambda_max);
  out.kappa_stats = summarize(out.kappa);
  return out;
}

struct FiedlerEnergy {
  double lambda1 = 0;
  double lambda_max = 0;
  std::vector<BlockEnergy> fiedler;  ///< blocks of the lambda1 eigenvector
  std::vector<BlockEnergy> top;      ///< blocks of the lambda_max eigenvector

  /// Block with the largest share of the Fiedler energy.
  std::string dominant() const {
    return std::max_element(fiedler.begin(), fiedler.end(),
                            [](const BlockEnergy& a, const BlockEnergy& b) { return a.energy < b.energy; })
        ->block;
  }
};

template <typename Scalar>
FiedlerEnergy fiedler_block_energy(const NetworkSpec<Scalar>& spec, const VectorX<Scalar>& input) {
  const NeuralSheaf<Scalar> sheaf(spec);
  bool reduced = false;
  const SpectrumReport<Scalar> r = spectrum(forward_restricted_laplacian(sheaf, input, &reduced));
  const auto blocks = free_blocks(sheaf, reduced);
  FiedlerEnergy out;
  out.lambda1 = static_cast<double>(r.lambda1);
  out.lambda_max = static_cast<double>(r.lambda_max);
  out.fiedler = block_energy(VectorX<Scalar>(r.eigenvectors.col(0)), blocks);
  out.top = block_energy(VectorX<Scalar>(r.eigenvectors.col(r.eigenvectors.cols() - 1)), blocks);
  return out;
}

struct EdgeDiscord {
  std::string edge;
  double value = 0;
};

/// ||delta_e x||^2 per edge; the values sum to total_discord.
template <typename Scalar>
std::vector<EdgeDiscord> per_edge_discord(const NeuralSheaf<Scalar>& sheaf, const Cochain<Scalar>& x) {
  const DiscordBreakdown<Scalar> d = total_discord(sheaf, x);
  std::vector<EdgeDiscord> out;
  for (std::size_t i = 0; i < d.per_edge.size(); ++i) out.push_back({d.names[i], static_cast<double>(d.per_edge[i])});
  return out;
}

struct DiscordRecord {
  Eigen::Index sample = 0;
  int layer = 0;
  Eigen::Index coordinate = 0;
  double z = 0;
  double weight_residual = 0;  ///< (W a + b)_j - z_j
  double relu_residual = 0;    ///< ReLU(z_j) - a_j
  bool active = false;         ///< z_j >= 0
};

/// One record per (sample, hidden layer, coordinate) of an equilibrium cochain.
template <typename Scalar>
std::vector<DiscordRecord> residual_scatter(const NeuralSheaf<Scalar>& sheaf, const Cochain<Scalar>& x) {
  detail::check_cochain(sheaf, x.values);
  const auto& spec = sheaf.network();
  const MatrixX<Scalar>& v = x.values;
  std::vector<DiscordRecord> out;
  for (Eigen::Index m = 0; m < v.cols(); ++m) {
    for (int l = 1; l <= spec.hidden_layers(); ++l) {
      const VectorX<Scalar> prev = v.col(m).segment(sheaf.activation_offset(l - 1), spec.dim(l - 1));
      const VectorX<Scalar> upstream = spec.weight(l) * prev + spec.bias(l);
      for (Eigen::Index j = 0; j < spec.dim(l); ++j) {
        const Scalar z = v(sheaf.pre_offset(l) + j, m);
        const Scalar a = v(sheaf.activation_offset(l) + j, m);
        DiscordRecord r;
        r.sample = m;
        r.layer = l;
        r.coordinate = j;
        r.z = static_cast<double>(z);
        r.weight_residual = static_cast<double>(upstream(j) - z);
        r.relu_residual = static_cast<double>((z >= Scalar(0) ? z : Scalar(0)) - a);
        r.active = z >= Scalar(0);
        out.push_back(r);
      }
    }
  }
  return out;
}

/// Output-clamped equilibrium for every sample of (X, Y): v_y is hard-pinned to
/// the column's label and the batch is integrated from `init` (forward-pass
/// trace when empty) until the free velocity falls below config.tol. For an
/// identity output a run that stalls is finished by solve_equilibrium.
template <typename Scalar>
Trajectory<Scalar> clamped_equilibrium(const NetworkSpec<Scalar>& spec, const Eigen::MatrixXd& X,
                                       const Eigen::MatrixXd& Y, const DiffusionConfig& config,
                                       const Cochain<Scalar>* init = nullptr) {
  if (X.cols() != Y.cols() || Y.rows() != spec.output_dim()) throw DimensionError("labels do not match the inputs");
  std::vector<Eigen::Index> all(static_cast<std::size_t>(spec.output_dim()));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  const NeuralSheaf<Scalar> sheaf(
      spec, {PinSpec<Scalar>::hard_pin(PinSite::output, spec.hidden_layers() + 1, all,
                                       VectorX<Scalar>::Zero(spec.output_dim()))});
  Cochain<Scalar> start = init ? *init : embed_trace(sheaf, MatrixX<Scalar>(X.cast<Scalar>()),
                                                       forward_pass(spec, MatrixX<Scalar>(X.cast<Scalar>())));
  detail::check_cochain(sheaf, start.values);
  start.values.middleRows(sheaf.output_offset(), spec.output_dim()) = Y.cast<Scalar>();
  Trajectory<Scalar> t = run_diffusion(sheaf, start, config);
  if (t.converged || spec.output_activation != OutputActivation::identity) return t;
  // Euler chatters around coordinates that rest on a ReLU kink; finish with
  // the active-set solve from the last state.
  const EquilibriumResult<Scalar> eq =
      solve_equilibrium(sheaf, t.final_cochain, 200, static_cast<Scalar>(std::max(config.tol, 1e-12)));
  if (eq.converged) {
    t.final_cochain = eq.cochain;
    t.converged = true;
    t.final_velocity = eq.residual;
  }
  return t;
}

struct PinnedDiscordReport {
  std::vector<std::string> edges;
  std::vector<double> mean;
  std::vector<double> std;
  double total_mean = 0;
  double total_std = 0;
  std::size_t samples = 0;
  std::size_t non_converged = 0;
};

/// Per-edge discord at the label-clamped equilibrium, aggregated over samples.
template <typename Scalar>
PinnedDiscordReport pinned_discord(const NetworkSpec<Scalar>& spec, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                   const DiffusionConfig& config) {
  if (X.cols() < 1) throw InvalidInputError("pinned discord needs at least one labelled sample");
  const Trajectory<Scalar> t = clamped_equilibrium(spec, X, Y, config);
  std::vector<Eigen::Index> all(static_cast<std::size_t>(spec.output_dim()));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  const NeuralSheaf<Scalar> sheaf(
      spec, {PinSpec<Scalar>::hard_pin(PinSite::output, spec.hidden_layers() + 1, all,
                                       VectorX<Scalar>::Zero(spec.output_dim()))});
  const MatrixX<Scalar>& v = t.final_cochain.values;
  const auto r = coboundary_apply(sheaf, t.final_cochain);
  const MatrixX<Scalar> vel = free_velocity(sheaf, t.final_cochain, static_cast<Scalar>(config.alpha));

  PinnedDiscordReport rep;
  rep.samples = static_cast<std::size_t>(v.cols());
  std::vector<double> totals(rep.samples, 0.0);
  for (std::size_t e = 0; e < r.size(); ++e) {
    std::vector<double> per_sample;
    for (Eigen::Index m = 0; m < v.cols(); ++m) {
      const double s = static_cast<double>(r[e].col(m).squaredNorm());
      per_sample.push_back(s);
      totals[static_cast<std::size_t>(m)] += s;
    }
    const SummaryStats st = summarize(per_sample);
    rep.edges.push_back(sheaf.edges()[e].name);
    rep.mean.push_back(st.mean);
    rep.std.push_back(st.std);
  }
  const SummaryStats tot = summarize(totals);
  rep.total_mean = tot.mean;
  rep.total_std = tot.std;
  // with identity output, a coordinate resting on a kink is stationary even
  // though the one-sided Euler velocity there is not zero
  const bool kink_aware = spec.output_activation == OutputActivation::identity;
  for (Eigen::Index m = 0; m < v.cols(); ++m) {
    const double r = kink_aware ? static_cast<double>(config.alpha) *
                                      static_cast<double>(detail::stationarity_residual(
                                          sheaf, MatrixX<Scalar>(v.col(m)), static_cast<std::size_t*>(nullptr)))
                                : static_cast<double>(vel.col(m).cwiseAbs().maxCoeff());
    if (!(r <= config.tol)) ++rep.non_converged;
  }
  return rep;
}

}  // namespace neural_sheaf
