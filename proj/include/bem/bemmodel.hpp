#pragma once

// Variational objective of the Bayes embedding model.
//
// Per entity i the latents are a correction delta_i (dim d_w) and a positive
// scale s_i. The generative side is
//
//   nu_i = f(w_i + delta_i),   g(z_i, z_j) ~ N(g(nu_i, nu_j), diag(theta_ij))
//
// with theta_ij built from s_i and s_j (see pair_variance). The inference
// network h maps (z_i, w_i) to a diagonal Gaussian over delta_i and over
// log s_i; s_i is log-normal.

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bem/common.hpp"
#include "bem/diffcore.hpp"

namespace bem {

inline constexpr double kVarFloor = 1e-6;
inline constexpr double kSigmaFloor = 1e-4;
inline constexpr double kLogScaleVarMin = 1e-6;
inline constexpr double kLogScaleVarMax = 10.0;

// ---------------------------------------------------------------------------
// Edge functions

enum class EdgeKind { Translation, InnerProduct, Identity };

std::string_view to_string(EdgeKind kind);
/// Accepts "translation", "inner", "identity".
std::optional<EdgeKind> parse_edge_kind(std::string_view name);

struct EdgeFunction {
  EdgeKind kind = EdgeKind::Translation;

  /// d_g for inputs of length `dim`.
  Index output_dim(Index dim) const;

  /// Length of the per-entity scale s. Equals d_g, except for Identity where
  /// each entity owns the half of the concatenation that holds its own
  /// coordinates (d_g / 2).
  Index scale_dim(Index dim) const;

  /// Whether a pair (i, i) is admissible. Only Identity carries signal there.
  bool allows_self_pairs() const { return kind == EdgeKind::Identity; }
};

Vector edge_apply(const EdgeFunction& g, const Eigen::Ref<const Vector>& x,
                  const Eigen::Ref<const Vector>& y);

struct EdgePullback {
  Vector dx;
  Vector dy;
};

/// Gradients of upstream . g(x, y) with respect to x and y.
EdgePullback edge_pullback(const EdgeFunction& g, const Eigen::Ref<const Vector>& x,
                           const Eigen::Ref<const Vector>& y,
                           const Eigen::Ref<const Vector>& upstream);

/// Observation variance theta_ij of the edge residual: s_i + s_j, or for the
/// Identity edge the concatenation (s_i, s_j), which makes the pair
/// likelihood factor into two per-entity terms.
Vector pair_variance(const EdgeFunction& g, const Eigen::Ref<const Vector>& s_i,
                     const Eigen::Ref<const Vector>& s_j);

// ---------------------------------------------------------------------------
// Batch prior

struct BatchPrior {
  Vector mu_delta;    // always zero
  Vector var_delta;   // per-coordinate sample variance of w, floored
  Vector log_s_mean;  // normal prior over log s
  Vector log_s_var;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
};

/// Moments of the scale prior in the original space: the batch mean squared
/// deviation of each edge coordinate and the bootstrap standard deviation of
/// that estimator.
struct ScaleMoments {
  Vector mean;
  Vector stddev;
};

/// R resamples (with replacement) of the indices 0..n-1.
std::vector<std::vector<Index>> draw_bootstrap(Index n, Index replicates, Rng& rng);

/// Unbiased per-column variance (divisor n - 1).
Vector column_sample_variance(const RowMatrix& rows);

/// Per-column mean squared deviation around the column mean (divisor n),
/// over the rows selected by `index` (all rows when empty).
Vector column_mean_sq_deviation(const RowMatrix& rows, const std::vector<Index>& index = {});

ScaleMoments scale_moments(const RowMatrix& edges,
                           const std::vector<std::vector<Index>>& bootstrap);

/// First-order conversion of (mean, stddev) of s into a normal prior on log s.
void to_log_space(const ScaleMoments& m, Eigen::Ref<Vector> log_mean, Eigen::Ref<Vector> log_var);

/// Prior for the two sides of a paired batch. Rows of w_a, z_a (resp. b) are
/// the batch members in pair order.
std::pair<BatchPrior, BatchPrior> estimate_prior(const RowMatrix& w_a, const RowMatrix& w_b,
                                                 const RowMatrix& z_a, const RowMatrix& z_b,
                                                 const EdgeFunction& g,
                                                 const std::vector<std::vector<Index>>& bootstrap,
                                                 double lambda1, double lambda2);

std::pair<BatchPrior, BatchPrior> estimate_prior(const RowMatrix& w_a, const RowMatrix& w_b,
                                                 const RowMatrix& z_a, const RowMatrix& z_b,
                                                 const EdgeFunction& g, Index replicates,
                                                 double lambda1, double lambda2, Rng& rng);

/// Prior for one side under the fully independent model: the scale prior is
/// built from the variance of that side's z coordinates.
BatchPrior estimate_node_prior(const RowMatrix& w, const RowMatrix& z,
                               const std::vector<std::vector<Index>>& bootstrap, double lambda1,
                               double lambda2);

// ---------------------------------------------------------------------------
// Posterior and sampling

struct PosteriorStats {
  Vector mu_delta;
  Vector sigma_delta;
  Vector mu_log_s;
  Vector sigma_log_s;
};

struct LatentSample {
  Vector delta;
  Vector s;
};

double softplus(double x);
double sigmoid(double x);

/// Checks that h maps (z, w) to 2 d_w + 2 d_s outputs; returns d_s.
Index posterior_scale_dim(const DiffNet& h, Index d_w, Index d_z);

/// Runs h on (z, w) and splits the output into (mu_delta, raw sigma_delta,
/// mu_log_s, raw sigma_log_s); sigma = softplus(raw) + kSigmaFloor.
PosteriorStats infer_posterior(const DiffNet& h, const Eigen::Ref<const Vector>& w,
                               const Eigen::Ref<const Vector>& z);

LatentSample reparametrize(const PosteriorStats& stats, const Eigen::Ref<const Vector>& eps_delta,
                           const Eigen::Ref<const Vector>& eps_log_s);

// ---------------------------------------------------------------------------
// ELBO pieces

/// Log-likelihood of g(z_i, z_j) under N(g(nu_i, nu_j), diag(theta)) without
/// the (d_g / 2) log(2 pi) constant.
double reconstruction_term(const EdgeFunction& g, const Eigen::Ref<const Vector>& z_i,
                           const Eigen::Ref<const Vector>& z_j, const Eigen::Ref<const Vector>& nu_i,
                           const Eigen::Ref<const Vector>& nu_j, const Eigen::Ref<const Vector>& s_i,
                           const Eigen::Ref<const Vector>& s_j);

/// Sum over coordinates of KL(N(mu_q, sigma_q^2) || N(mu_p, var_p)).
double gaussian_kl(const Eigen::Ref<const Vector>& mu_q, const Eigen::Ref<const Vector>& sigma_q,
                   const Eigen::Ref<const Vector>& mu_p, const Eigen::Ref<const Vector>& var_p);

/// KL of the entity posterior against the lambda-scaled batch prior, over
/// both the delta block (lambda1) and the log-s block (lambda2).
double kl_penalty(const PosteriorStats& stats, const BatchPrior& prior);

struct NodeNoise {
  Vector eps_delta;
  Vector eps_log_s;
};

struct ElboTerms {
  double elbo = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
};

/// Gradient accumulators for the projection net f and the inference net h.
struct ElboGradients {
  DiffNet f;
  DiffNet h;
};

/// Single-sample ELBO of one pair: reconstruction - KL_i - KL_j.
/// When `grads` is non-null, scale * d(ELBO)/d(params) is added into it
/// (pathwise, with the noise held fixed).
ElboTerms elbo_pair(const DiffNet& f, const DiffNet& h, const EdgeFunction& g,
                    const Eigen::Ref<const Vector>& w_i, const Eigen::Ref<const Vector>& z_i,
                    const Eigen::Ref<const Vector>& w_j, const Eigen::Ref<const Vector>& z_j,
                    const BatchPrior& prior_i, const BatchPrior& prior_j, const NodeNoise& eps_i,
                    const NodeNoise& eps_j, ElboGradients* grads = nullptr, double scale = 1.0);

/// Single-sample ELBO of one entity under the fully independent model:
/// z ~ N(f(w + delta), diag(s)).
ElboTerms elbo_node(const DiffNet& f, const DiffNet& h, const Eigen::Ref<const Vector>& w,
                    const Eigen::Ref<const Vector>& z, const BatchPrior& prior,
                    const NodeNoise& eps, ElboGradients* grads = nullptr, double scale = 1.0);

}  // namespace bem
