#pragma once

// Restricted sheaf heat equation with state-dependent ReLU switching.
//
// The flow is the negative gradient of
//   V(x) = 1/2 sum_{e != out} |delta_e x|^2 - 1/2 sum_{e != out} |delta_e x_U|^2 + f(phi(z^(k+1)) - y_hat),
// where x_U keeps only the boundary coordinates. It is evaluated matrix-free,
// column by column, with each column carrying its own ReLU mask.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "neural_sheaf/errors.hpp"
#include "neural_sheaf/losses.hpp"
#include "neural_sheaf/network.hpp"
#include "neural_sheaf/operators.hpp"
#include "neural_sheaf/sheaf.hpp"

namespace neural_sheaf {

struct DiffusionConfig {
  double alpha = 1.0;
  double dt = 0.01;
  std::size_t max_steps = 100000;
  double tol = 1e-10;  ///< threshold on the sup-norm of the free velocity
  std::size_t record_every = 1;
  bool record_crossings = false;
  std::uint64_t seed = 0;
  double slide_eps = 1e-6;
  std::size_t slide_steps = 20;
  double divergence_limit = 1e12;

  void validate() const {
    if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (!(tol > 0.0)) throw ConfigError("tol must be positive");
    if (record_every == 0) throw ConfigError("record_every must be at least 1");
    if (!(slide_eps > 0.0) || slide_steps == 0) throw ConfigError("sliding detection needs eps > 0 and S >= 1");
    if (!(divergence_limit > 0.0)) throw ConfigError("divergence limit must be positive");
  }
};

/// Gradient of V with the matching discord and energy, for one state.
template <typename Scalar>
struct FlowEvaluation {
  MatrixX<Scalar> gradient;  ///< zero on fixed coordinates
  std::vector<Scalar> edge_discord;
  Scalar discord = 0;
  Scalar energy = 0;
};

namespace detail {

template <typename Scalar>
Scalar output_potential(const NeuralSheaf<Scalar>& sheaf, const MatrixX<Scalar>& v, const LossKind& loss) {
  if (!sheaf.output_edge_active()) return Scalar(0);
  const auto& spec = sheaf.network();
  const Eigen::Index n = spec.output_dim();
  const MatrixX<Scalar> z = v.middleRows(sheaf.pre_offset(spec.hidden_layers() + 1), n);
  const MatrixX<Scalar> y = v.middleRows(sheaf.output_offset(), n);
  const MatrixX<Scalar> prediction = activate(spec.output_activation, z);
  if (loss.type == LossType::cross_entropy) return cross_entropy(spec.output_activation, prediction, y);
  return loss_potential(prediction - y, loss);
}

template <typename Scalar>
void check_finite_state(const MatrixX<Scalar>& v, std::size_t step, double limit) {
  using std::abs;
  if ((v.array().abs() <= static_cast<Scalar>(limit)).all()) return;
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      const Scalar s = v(i, j);
      if (!(abs(s) <= static_cast<Scalar>(limit))) {
        throw DivergenceError(step, "coordinate " + std::to_string(i) + " of column " + std::to_string(j) +
                                        " left the admissible range");
      }
    }
  }
}

}  // namespace detail

/// Evaluates grad V, the discord ||delta x||^2 and V itself under `pattern`
/// into `out`, reusing its gradient storage. With `with_energy` false the
/// boundary term of V is skipped.
template <typename Scalar>
void evaluate_flow(const NeuralSheaf<Scalar>& sheaf, const MatrixX<Scalar>& v, const ActivationPattern& pattern,
                   const LossKind& loss, bool with_energy, FlowEvaluation<Scalar>& out) {
  using Matrix = MatrixX<Scalar>;
  const auto& spec = sheaf.network();
  const int k = spec.hidden_layers();
  const std::vector<Matrix> r = coboundary_apply(sheaf, v, pattern);

  out.gradient.setZero(v.rows(), v.cols());
  out.edge_discord.clear();
  out.discord = 0;
  out.energy = 0;
  Matrix& g = out.gradient;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const Edge& e = sheaf.edges()[i];
    const Scalar s = r[i].squaredNorm();
    out.edge_discord.push_back(s);
    out.discord += s;
    if (e.kind != EdgeKind::output) out.energy += Scalar(0.5) * s;

    switch (e.kind) {
      case EdgeKind::weight: {
        const int l = e.layer;
        g.middleRows(sheaf.pre_offset(l), spec.dim(l)) += r[i];
        if (l > 1) g.middleRows(sheaf.activation_offset(l - 1), spec.dim(l - 1)) -= spec.weight(l).transpose() * r[i];
        break;
      }
      case EdgeKind::activation: {
        const int l = e.layer;
        g.middleRows(sheaf.activation_offset(l), spec.dim(l)) += r[i];
        g.middleRows(sheaf.pre_offset(l), spec.dim(l)) -= apply_mask(pattern.layer(l), r[i]);
        break;
      }
      case EdgeKind::output: {
        if (!sheaf.output_edge_active()) break;
        const Eigen::Index n = spec.output_dim();
        const Matrix z = v.middleRows(sheaf.pre_offset(k + 1), n);
        const Matrix y = v.middleRows(sheaf.output_offset(), n);
        g.middleRows(sheaf.pre_offset(k + 1), n) += output_force(z, y, spec.output_activation, loss);
        const Matrix d = -r[i];
        if (loss.type == LossType::cross_entropy) {
          g.middleRows(sheaf.output_offset(), n) -= d;
        } else {
          g.middleRows(sheaf.output_offset(), n) -= loss_gradient(d, loss);
        }
        break;
      }
      case EdgeKind::pin: {
        const auto& pin = detail::pin_of(sheaf, e);
        using std::sqrt;
        const Scalar root = sqrt(*pin.gamma);
        const Eigen::Index base = detail::pin_base(sheaf, pin);
        for (std::size_t j = 0; j < pin.indices.size(); ++j) {
          g.row(base + pin.indices[j]) -= root * r[i].row(static_cast<Eigen::Index>(j));
        }
        break;
      }
    }
  }

  if (with_energy) {
    out.energy += detail::output_potential(sheaf, v, loss);
    Matrix boundary_only = v;
    for (auto idx : sheaf.free_indices()) boundary_only.row(idx).setZero();
    const std::vector<Matrix> ru = coboundary_apply(sheaf, boundary_only, pattern);
    for (std::size_t i = 0; i < ru.size(); ++i) {
      if (sheaf.edges()[i].kind != EdgeKind::output) out.energy -= Scalar(0.5) * ru[i].squaredNorm();
    }
  }

  for (auto idx : sheaf.fixed_indices()) g.row(idx).setZero();
  if (!sheaf.output_edge_active()) {
    const Eigen::Index n = spec.output_dim();
    g.middleRows(sheaf.output_offset(), n) = g.middleRows(sheaf.pre_offset(k + 1), n);
  }
}

template <typename Scalar>
FlowEvaluation<Scalar> evaluate_flow(const NeuralSheaf<Scalar>& sheaf, const MatrixX<Scalar>& v,
                                     const ActivationPattern& pattern, const LossKind& loss = LossKind::squared(),
                                     bool with_energy = true) {
  FlowEvaluation<Scalar> out;
  evaluate_flow(sheaf, v, pattern, loss, with_energy, out);
  return out;
}

/// -alpha grad V with the pattern read off the current z blocks; zero on fixed
/// coordinates. An eliminated output vertex moves with z^(k+1).
template <typename Scalar>
MatrixX<Scalar> free_velocity(const NeuralSheaf<Scalar>& sheaf, const Cochain<Scalar>& x, Scalar alpha,
                              const LossKind& loss = LossKind::squared()) {
  detail::check_cochain(sheaf, x.values);
  return -alpha * evaluate_flow(sheaf, x.values, current_pattern(sheaf, x.values), loss, false).gradient;
}

/// V at `x`, pattern from the current z blocks.
template <typename Scalar>
Scalar energy(const NeuralSheaf<Scalar>& sheaf, const Cochain<Scalar>& x, const LossKind& loss = LossKind::squared()) {
  detail::check_cochain(sheaf, x.values);
  return evaluate_flow(sheaf, x.values, current_pattern(sheaf, x.values), loss, true).energy;
}

/// V at `x` under an explicit pattern (used to compare one-sided energies).
template <typename Scalar>
Scalar energy(const NeuralSheaf<Scalar>& sheaf, const Cochain<Scalar>& x, const ActivationPattern& pattern,
              const LossKind& loss = LossKind::squared()) {
  detail::check_cochain(sheaf, x.values);
  return evaluate_flow(sheaf, x.values, pattern, loss, true).energy;
}

/// One forward Euler step of the restricted flow.
template <typename Scalar>
Cochain<Scalar> euler_step(const NeuralSheaf<Scalar>& sheaf, const Cochain<Scalar>& x, const DiffusionConfig& config,
                           std::size_t step = 0) {
  detail::check_finite_state(x.values, step, config.divergence_limit);
  Cochain<Scalar> next = x;
  next.values += static_cast<Scalar>(config.dt) * free_velocity(sheaf, x, static_cast<Scalar>(config.alpha));
  detail::check_finite_state(next.values, step + 1, config.divergence_limit);
  return next;
}

struct Crossing {
  std::size_t step;  ///< step after which the new sign is observed
  Eigen::Index column;
  int layer;
  Eigen::Index coordinate;
  int direction;  ///< +1 inactive to active, -1 active to inactive
};

struct SlidingEpisode {
  Eigen::Index column;
  int layer;
  Eigen::Index coordinate;
  std::size_t start_step;
  std::size_t end_step;  ///< last step inside the band
};

/// Streams hidden pre-activations and reports sign changes and sliding runs.
template <typename Scalar>
class CrossingDetector {
 public:
  CrossingDetector(const NeuralSheaf<Scalar>& sheaf, double slide_eps, std::size_t slide_steps)
      : sheaf_(&sheaf), eps_(static_cast<Scalar>(slide_eps)), min_steps_(slide_steps) {}

  void observe(std::size_t step, const MatrixX<Scalar>& values) {
    using std::abs;
    const auto& spec = sheaf_->network();
    if (!started_) {
      started_ = true;
      previous_ = current_pattern(*sheaf_, values);
      run_start_.clear();
      for (int l = 1; l <= spec.hidden_layers(); ++l) {
        run_start_.push_back(Eigen::Array<long long, Eigen::Dynamic, Eigen::Dynamic>::Constant(spec.dim(l), values.cols(), -1));
      }
    }
    ActivationPattern now = current_pattern(*sheaf_, values);
    for (int l = 1; l <= spec.hidden_layers(); ++l) {
      const auto z = values.middleRows(sheaf_->pre_offset(l), spec.dim(l));
      auto& start = run_start_[static_cast<std::size_t>(l - 1)];
      for (Eigen::Index m = 0; m < z.cols(); ++m) {
        for (Eigen::Index j = 0; j < z.rows(); ++j) {
          const bool before = previous_.layer(l)(j, m);
          const bool after = now.layer(l)(j, m);
          if (before != after) crossings_.push_back(Crossing{step, m, l, j, after ? +1 : -1});
          if (abs(z(j, m)) < eps_) {
            if (start(j, m) < 0) start(j, m) = static_cast<long long>(step);
          } else if (start(j, m) >= 0) {
            close(m, l, j, static_cast<std::size_t>(start(j, m)), last_step_);
            start(j, m) = -1;
          }
        }
      }
    }
    previous_ = std::move(now);
    last_step_ = step;
  }

  /// Closes any sliding run still open at the final observed step.
  void finish() {
    for (std::size_t li = 0; li < run_start_.size(); ++li) {
      auto& start = run_start_[li];
      for (Eigen::Index m = 0; m < start.cols(); ++m) {
        for (Eigen::Index j = 0; j < start.rows(); ++j) {
          if (start(j, m) >= 0) {
            close(m, static_cast<int>(li) + 1, j, static_cast<std::size_t>(start(j, m)), last_step_);
            start(j, m) = -1;
          }
        }
      }
    }
  }

  const std::vector<Crossing>& crossings() const { return crossings_; }
  const std::vector<SlidingEpisode>& sliding() const { return sliding_; }

 private:
  void close(Eigen::Index m, int l, Eigen::Index j, std::size_t begin, std::size_t end) {
    if (end + 1 - begin >= min_steps_) sliding_.push_back(SlidingEpisode{m, l, j, begin, end});
  }

  const NeuralSheaf<Scalar>* sheaf_;
  Scalar eps_;
  std::size_t min_steps_;
  bool started_ = false;
  std::size_t last_step_ = 0;
  ActivationPattern previous_;
  std::vector<Eigen::Array<long long, Eigen::Dynamic, Eigen::Dynamic>> run_start_;
  std::vector<Crossing> crossings_;
  std::vector<SlidingEpisode> sliding_;
};

template <typename Scalar>
struct CrossingReport {
  std::vector<Crossing> crossings;
  std::vector<SlidingEpisode> sliding;
};

/// Crossings and sliding episodes of a densely recorded sequence of states;
/// states[i] is the cochain after step i.
template <typename Scalar>
CrossingReport<Scalar> detect_crossings(const NeuralSheaf<Scalar>& sheaf, const std::vector<MatrixX<Scalar>>& states,
                                        double slide_eps = 1e-6, std::size_t slide_steps = 20) {
  CrossingDetector<Scalar> detector(sheaf, slide_eps, slide_steps);
  for (std::size_t i = 0; i < states.size(); ++i) detector.observe(i, states[i]);
  detector.finish();
  return {detector.crossings(), detector.sliding()};
}

template <typename Scalar>
struct Trajectory {
  std::vector<std::size_t> steps;
  std::vector<Scalar> discord_total;
  std::vector<std::vector<Scalar>> discord_per_edge;
  std::vector<Scalar> energy;
  std::vector<VectorX<Scalar>> output;  ///< y_hat, column-major over samples
  std::vector<std::string> edge_names;
  std::vector<Crossing> crossings;
  std::vector<SlidingEpisode> sliding_episodes;
  Cochain<Scalar> final_cochain;
  bool converged = false;
  std::size_t steps_taken = 0;
  Scalar final_velocity = 0;  ///< sup-norm at the last evaluated state
  bool discord_monotone = true;
  bool energy_monotone = true;
  std::size_t first_discord_increase = 0;
  std::size_t first_energy_increase = 0;
};

enum class InitMode { random, zeros, forward };

inline InitMode parse_init_mode(const std::string& name) {
  if (name == "random") return InitMode::random;
  if (name == "zeros") return InitMode::zeros;
  if (name == "forward" || name == "forward_pass") return InitMode::forward;
  throw ConfigError("unknown init mode '" + name + "'");
}

/// Starting cochain for inputs `x`: unit-normal free coordinates, zeros, or the
/// forward-pass trace.
template <typename Scalar>
Cochain<Scalar> initial_cochain(const NeuralSheaf<Scalar>& sheaf, const MatrixX<Scalar>& x, InitMode mode,
                                std::uint64_t seed) {
  switch (mode) {
    case InitMode::random: {
      std::mt19937_64 rng(seed);
      return random_cochain(sheaf, x, rng);
    }
    case InitMode::zeros: {
      Cochain<Scalar> c = boundary_cochain(sheaf, x);
      sync_eliminated_output(sheaf, c);
      return c;
    }
    case InitMode::forward:
      return forward_cochain(sheaf, x);
  }
  throw ConfigError("unknown init mode");
}

/// Iterates Euler steps until the free velocity sup-norm drops below tol or
/// max_steps is reached. Discord and energy are checked for monotonicity at
/// every step; series are stored every record_every steps and at the end.
template <typename Scalar>
Trajectory<Scalar> run_diffusion(const NeuralSheaf<Scalar>& sheaf, const Cochain<Scalar>& init,
                                 const DiffusionConfig& config) {
  config.validate();
  detail::check_cochain(sheaf, init.values);
  const auto& spec = sheaf.network();
  const Scalar alpha = static_cast<Scalar>(config.alpha);
  const Scalar dt = static_cast<Scalar>(config.dt);
  const Eigen::Index n_out = spec.output_dim();

  Trajectory<Scalar> traj;
  for (const Edge& e : sheaf.edges()) traj.edge_names.push_back(e.name);
  std::optional<CrossingDetector<Scalar>> detector;
  if (config.record_crossings) detector.emplace(sheaf, config.slide_eps, config.slide_steps);

  Cochain<Scalar> start = init;
  sync_eliminated_output(sheaf, start);
  MatrixX<Scalar> v = std::move(start.values);
  const Scalar slack = Scalar(1e-12);
  Scalar last_discord = std::numeric_limits<Scalar>::infinity();
  Scalar last_energy = std::numeric_limits<Scalar>::infinity();

  auto record = [&](std::size_t step, const FlowEvaluation<Scalar>& ev) {
    traj.steps.push_back(step);
    traj.discord_total.push_back(ev.discord);
    traj.discord_per_edge.push_back(ev.edge_discord);
    traj.energy.push_back(ev.energy);
    const MatrixX<Scalar> y = v.middleRows(sheaf.output_offset(), n_out);
    traj.output.push_back(Eigen::Map<const VectorX<Scalar>>(y.data(), y.size()));
  };

  std::size_t step = 0;
  FlowEvaluation<Scalar> ev;
  for (;; ++step) {
    detail::check_finite_state(v, step, config.divergence_limit);
    evaluate_flow(sheaf, v, current_pattern(sheaf, v), LossKind::squared(), true, ev);
    if (detector) detector->observe(step, v);

    if (ev.discord > last_discord + slack * (Scalar(1) + last_discord) && traj.discord_monotone) {
      traj.discord_monotone = false;
      traj.first_discord_increase = step;
    }
    if (ev.energy > last_energy + slack * (Scalar(1) + std::abs(last_energy)) && traj.energy_monotone) {
      traj.energy_monotone = false;
      traj.first_energy_increase = step;
    }
    last_discord = ev.discord;
    last_energy = ev.energy;

    const Scalar speed = alpha * (v.size() == 0 ? Scalar(0) : ev.gradient.cwiseAbs().maxCoeff());
    traj.final_velocity = speed;
    const bool done = speed < static_cast<Scalar>(config.tol);
    if (done || step >= config.max_steps) {
      record(step, ev);
      traj.converged = done;
      break;
    }
    if (step % config.record_every == 0) record(step, ev);
    v.noalias() -= (dt * alpha) * ev.gradient;
  }
  if (detector) {
    detector->finish();
    traj.crossings = detector->crossings();
    traj.sliding_episodes = detector->sliding();
  }
  traj.steps_taken = step;
  traj.final_cochain = Cochain<Scalar>{std::move(v)};
  return traj;
}

/// Convenience overload building the initial cochain from `x`.
template <typename Scalar>
Trajectory<Scalar> run_diffusion(const NeuralSheaf<Scalar>& sheaf, const MatrixX<Scalar>& x, InitMode mode,
                                 const DiffusionConfig& config) {
  return run_diffusion(sheaf, initial_cochain(sheaf, x, mode, config.seed), config);
}

template <typename Scalar>
struct EquilibriumResult {
  Cochain<Scalar> cochain;
  bool converged = false;
  std::size_t iterations = 0;  ///< largest active-set iteration count over the columns
  Scalar residual = 0;         ///< sup-norm of the stationarity violation at the returned state
  std::size_t kinks = 0;       ///< hidden coordinates resting at z = 0
};

namespace detail {

enum class Side : std::int8_t { inactive, active, kink };

/// (W a + b)_j feeding hidden coordinate j of layer l in column m.
template <typename Scalar>
Scalar upstream_value(const NeuralSheaf<Scalar>& sheaf, const MatrixX<Scalar>& v, int l, Eigen::Index j,
                      Eigen::Index m) {
  const auto& spec = sheaf.network();
  const Eigen::Index base = sheaf.activation_offset(l - 1);
  return spec.weight(l).row(j).dot(v.col(m).segment(base, spec.dim(l - 1))) +
         spec.bias(l)(j) * v(base + spec.dim(l - 1) + j, m);
}

/// Stationarity violation of grad V, where a hidden z resting exactly at 0 is
/// stationary when the one-sided derivatives bracket zero.
template <typename Scalar>
Scalar stationarity_residual(const NeuralSheaf<Scalar>& sheaf, const MatrixX<Scalar>& v, std::size_t* kinks) {
  MatrixX<Scalar> g = evaluate_flow(sheaf, v, current_pattern(sheaf, v), LossKind::squared(), false).gradient;
  const auto& spec = sheaf.network();
  std::size_t count = 0;
  for (Eigen::Index m = 0; m < v.cols(); ++m) {
    for (int l = 1; l <= spec.hidden_layers(); ++l) {
      for (Eigen::Index j = 0; j < spec.dim(l); ++j) {
        const Eigen::Index row = sheaf.pre_offset(l) + j;
        if (v(row, m) != Scalar(0)) continue;
        ++count;
        // active-side derivative is g; the inactive side drops the -a_j term
        const Scalar g_active = g(row, m);
        const Scalar g_inactive = g_active + v(sheaf.activation_offset(l) + j, m);
        g(row, m) = std::max(Scalar(0), g_inactive) + std::max(Scalar(0), -g_active);
      }
    }
  }
  if (kinks) *kinks = count;
  return g.size() == 0 ? Scalar(0) : g.cwiseAbs().maxCoeff();
}

}  // namespace detail

/// Equilibrium of the flow for a linear output edge. Each column is solved
/// with an active set over the hidden coordinates: active, inactive, or held
/// at the kink z = 0. For a fixed set the equilibrium solves
/// L[S,S] w = -L[S,U] u; coordinates that leave their side move to the kink,
/// and kinks are released when a one-sided derivative points away from 0.
/// Used where explicit Euler is too stiff (large soft-pin strengths) or
/// chatters across a ReLU kink.
template <typename Scalar>
EquilibriumResult<Scalar> solve_equilibrium(const NeuralSheaf<Scalar>& sheaf, const Cochain<Scalar>& init,
                                            std::size_t max_iterations = 100, Scalar tol = Scalar(1e-9)) {
  using detail::Side;
  const auto& spec = sheaf.network();
  if (spec.output_activation != OutputActivation::identity) {
    throw UnsupportedStructureError("equilibrium solve requires a linear output edge");
  }
  detail::check_cochain(sheaf, init.values);
  EquilibriumResult<Scalar> res;
  res.cochain = init;
  sync_eliminated_output(sheaf, res.cochain);
  MatrixX<Scalar>& v = res.cochain.values;
  const int k = spec.hidden_layers();
  const std::vector<bool>& free_mask = sheaf.free_mask();

  std::vector<Eigen::Index> hidden_rows;
  for (int l = 1; l <= k; ++l) {
    for (Eigen::Index j = 0; j < spec.dim(l); ++j) hidden_rows.push_back(sheaf.pre_offset(l) + j);
  }
  auto layer_of = [&](std::size_t h, Eigen::Index& j) {
    Eigen::Index rest = static_cast<Eigen::Index>(h);
    for (int l = 1; l <= k; ++l) {
      if (rest < spec.dim(l)) {
        j = rest;
        return l;
      }
      rest -= spec.dim(l);
    }
    return k;
  };

  bool all_settled = true;
  for (Eigen::Index m = 0; m < v.cols(); ++m) {
    std::vector<Side> side(hidden_rows.size());
    for (std::size_t h = 0; h < hidden_rows.size(); ++h) {
      side[h] = v(hidden_rows[h], m) >= Scalar(0) ? Side::active : Side::inactive;
    }
    std::vector<std::vector<Side>> seen;
    bool one_at_a_time = false;
    bool settled = false;
    std::size_t it = 0;
    while (it < max_iterations && !settled) {
      ++it;
      ActivationPattern pattern;
      std::size_t h = 0;
      for (int l = 1; l <= k; ++l) {
        Mask mask(spec.dim(l), 1);
        for (Eigen::Index j = 0; j < spec.dim(l); ++j, ++h) mask(j, 0) = side[h] != Side::inactive;
        pattern.masks.push_back(std::move(mask));
      }
      std::vector<bool> solve = free_mask;
      for (std::size_t q = 0; q < hidden_rows.size(); ++q) {
        if (side[q] == Side::kink) {
          solve[static_cast<std::size_t>(hidden_rows[q])] = false;
          v(hidden_rows[q], m) = Scalar(0);
        }
      }
      std::vector<Eigen::Index> s_rows;
      std::vector<Eigen::Index> u_rows;
      for (Eigen::Index i = 0; i < sheaf.dimension(); ++i) (solve[static_cast<std::size_t>(i)] ? s_rows : u_rows).push_back(i);
      const MatrixX<Scalar> lap = sheaf_laplacian(sheaf, pattern, 0);
      VectorX<Scalar> u(static_cast<Eigen::Index>(u_rows.size()));
      for (std::size_t i = 0; i < u_rows.size(); ++i) u(static_cast<Eigen::Index>(i)) = v(u_rows[i], m);
      const VectorX<Scalar> w =
          select_block(lap, s_rows, s_rows).ldlt().solve(-(select_block(lap, s_rows, u_rows) * u));
      for (std::size_t i = 0; i < s_rows.size(); ++i) v(s_rows[i], m) = w(static_cast<Eigen::Index>(i));
      if (!sheaf.output_edge_active()) {
        v.col(m).segment(sheaf.output_offset(), spec.output_dim()) =
            v.col(m).segment(sheaf.pre_offset(k + 1), spec.output_dim());
      }

      std::vector<Side> next = side;
      bool changed = false;
      for (std::size_t q = 0; q < hidden_rows.size() && !(changed && one_at_a_time); ++q) {
        const Scalar z = v(hidden_rows[q], m);
        if (side[q] == Side::active && z < Scalar(0)) {
          next[q] = Side::kink;
        } else if (side[q] == Side::inactive && z > Scalar(0)) {
          next[q] = Side::kink;
        } else if (side[q] == Side::kink) {
          Eigen::Index j = 0;
          const int l = layer_of(q, j);
          const Scalar up = detail::upstream_value(sheaf, v, l, j, m);
          const Scalar a = v(sheaf.activation_offset(l) + j, m);
          const Scalar slack = Scalar(1e-13) * (Scalar(1) + std::abs(up) + std::abs(a));
          const Scalar g_inactive = -up;
          const Scalar g_active = -up - a;
          if (g_inactive > slack) {
            next[q] = Side::inactive;
          } else if (g_active < -slack) {
            next[q] = Side::active;
          }
        }
        changed = changed || next[q] != side[q];
      }
      if (!changed) {
        settled = true;
        break;
      }
      seen.push_back(side);
      if (std::find(seen.begin(), seen.end(), next) != seen.end()) {
        if (one_at_a_time) break;
        one_at_a_time = true;
        continue;
      }
      side = std::move(next);
    }
    res.iterations = std::max(res.iterations, it);
    all_settled = all_settled && settled;
  }

  res.residual = detail::stationarity_residual(sheaf, v, &res.kinks);
  Scalar scale = 1;
  for (const auto& pin : sheaf.pins()) {
    if (pin.gamma) scale = std::max(scale, *pin.gamma);
  }
  res.converged = all_settled && res.residual <= tol * scale;
  return res;
}

}  // namespace neural_sheaf
