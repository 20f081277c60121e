#include "bem/bemmodel.hpp"

#include <algorithm>
#include <cmath>

namespace bem {

std::string_view to_string(EdgeKind kind) {
  switch (kind) {
    case EdgeKind::Translation: return "translation";
    case EdgeKind::InnerProduct: return "inner";
    case EdgeKind::Identity: return "identity";
  }
  return "?";
}

std::optional<EdgeKind> parse_edge_kind(std::string_view name) {
  if (name == "translation") return EdgeKind::Translation;
  if (name == "inner") return EdgeKind::InnerProduct;
  if (name == "identity") return EdgeKind::Identity;
  return std::nullopt;
}

Index EdgeFunction::output_dim(Index dim) const {
  switch (kind) {
    case EdgeKind::Translation: return dim;
    case EdgeKind::InnerProduct: return 1;
    case EdgeKind::Identity: return 2 * dim;
  }
  return 0;
}

Index EdgeFunction::scale_dim(Index dim) const {
  return kind == EdgeKind::Identity ? dim : output_dim(dim);
}

Vector edge_apply(const EdgeFunction& g, const Eigen::Ref<const Vector>& x,
                  const Eigen::Ref<const Vector>& y) {
  require_shape(x.size() == y.size(), "edge function arguments differ in length (" +
                                          std::to_string(x.size()) + " vs " +
                                          std::to_string(y.size()) + ")");
  switch (g.kind) {
    case EdgeKind::Translation: return x - y;
    case EdgeKind::InnerProduct: return Vector::Constant(1, x.dot(y));
    case EdgeKind::Identity: {
      Vector out(2 * x.size());
      out << x, y;
      return out;
    }
  }
  return {};
}

EdgePullback edge_pullback(const EdgeFunction& g, const Eigen::Ref<const Vector>& x,
                           const Eigen::Ref<const Vector>& y,
                           const Eigen::Ref<const Vector>& upstream) {
  require_shape(x.size() == y.size(), "edge function arguments differ in length");
  require_shape(upstream.size() == g.output_dim(x.size()), "edge upstream length mismatch");
  switch (g.kind) {
    case EdgeKind::Translation: return {upstream, -upstream};
    case EdgeKind::InnerProduct: return {upstream[0] * y, upstream[0] * x};
    case EdgeKind::Identity: return {upstream.head(x.size()), upstream.tail(y.size())};
  }
  return {};
}

Vector pair_variance(const EdgeFunction& g, const Eigen::Ref<const Vector>& s_i,
                     const Eigen::Ref<const Vector>& s_j) {
  require_shape(s_i.size() == s_j.size(), "scale vectors differ in length");
  if (g.kind == EdgeKind::Identity) {
    Vector theta(2 * s_i.size());
    theta << s_i, s_j;
    return theta;
  }
  return s_i + s_j;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<Index>> draw_bootstrap(Index n, Index replicates, Rng& rng) {
  if (n < 1) throw ConfigError("bootstrap over an empty batch");
  if (replicates < 1) throw ConfigError("bootstrap replicate count must be positive");
  std::uniform_int_distribution<Index> pick(0, n - 1);
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(replicates));
  for (auto& idx : out) {
    idx.resize(static_cast<std::size_t>(n));
    for (auto& i : idx) i = pick(rng);
  }
  return out;
}

Vector column_sample_variance(const RowMatrix& rows) {
  const Index n = rows.rows();
  if (n < 2) throw ConfigError("sample variance needs at least two rows");
  Vector out(rows.cols());
  for (Index k = 0; k < rows.cols(); ++k) {
    double mean = 0.0;
    for (Index m = 0; m < n; ++m) mean += rows(m, k);
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (Index m = 0; m < n; ++m) ss += (rows(m, k) - mean) * (rows(m, k) - mean);
    out[k] = ss / static_cast<double>(n - 1);
  }
  return out;
}

Vector column_mean_sq_deviation(const RowMatrix& rows, const std::vector<Index>& index) {
  const Index n = index.empty() ? rows.rows() : static_cast<Index>(index.size());
  if (n < 1) throw ConfigError("mean squared deviation of an empty batch");
  auto at = [&](Index m) { return index.empty() ? m : index[static_cast<std::size_t>(m)]; };
  Vector out(rows.cols());
  for (Index k = 0; k < rows.cols(); ++k) {
    double mean = 0.0;
    for (Index m = 0; m < n; ++m) mean += rows(at(m), k);
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (Index m = 0; m < n; ++m) {
      const double d = rows(at(m), k) - mean;
      ss += d * d;
    }
    out[k] = ss / static_cast<double>(n);
  }
  return out;
}

ScaleMoments scale_moments(const RowMatrix& edges,
                           const std::vector<std::vector<Index>>& bootstrap) {
  if (bootstrap.empty()) throw ConfigError("bootstrap replicate count must be positive");
  ScaleMoments m;
  m.mean = column_mean_sq_deviation(edges);

  const Index d = edges.cols();
  const auto r_count = static_cast<double>(bootstrap.size());
  RowMatrix replicate(static_cast<Index>(bootstrap.size()), d);
  for (std::size_t r = 0; r < bootstrap.size(); ++r)
    replicate.row(static_cast<Index>(r)) = column_mean_sq_deviation(edges, bootstrap[r]).transpose();

  m.stddev.resize(d);
  for (Index k = 0; k < d; ++k) {
    double avg = 0.0;
    for (Index r = 0; r < replicate.rows(); ++r) avg += replicate(r, k);
    avg /= r_count;
    double ss = 0.0;
    for (Index r = 0; r < replicate.rows(); ++r) ss += (replicate(r, k) - avg) * (replicate(r, k) - avg);
    m.stddev[k] = std::sqrt(ss / r_count);
  }
  return m;
}

void to_log_space(const ScaleMoments& m, Eigen::Ref<Vector> log_mean, Eigen::Ref<Vector> log_var) {
  require_shape(log_mean.size() == m.mean.size() && log_var.size() == m.mean.size(),
                "log-space prior length mismatch");
  for (Index k = 0; k < m.mean.size(); ++k) {
    const double mean = std::max(m.mean[k], kVarFloor);
    const double rel = m.stddev[k] / mean;
    log_mean[k] = std::log(mean);
    log_var[k] = std::clamp(rel * rel, kLogScaleVarMin, kLogScaleVarMax);
  }
}

namespace {

void check_batch(const RowMatrix& w, const RowMatrix& z) {
  if (w.rows() < 2) throw ConfigError("batch size must be at least 2, got " + std::to_string(w.rows()));
  require_shape(w.rows() == z.rows(), "w and z batches differ in size");
}

BatchPrior delta_prior(const RowMatrix& w, double lambda1, double lambda2) {
  BatchPrior p;
  p.mu_delta = Vector::Zero(w.cols());
  p.var_delta = column_sample_variance(w).cwiseMax(kVarFloor);
  p.lambda1 = lambda1;
  p.lambda2 = lambda2;
  return p;
}

}  // namespace

std::pair<BatchPrior, BatchPrior> estimate_prior(const RowMatrix& w_a, const RowMatrix& w_b,
                                                 const RowMatrix& z_a, const RowMatrix& z_b,
                                                 const EdgeFunction& g,
                                                 const std::vector<std::vector<Index>>& bootstrap,
                                                 double lambda1, double lambda2) {
  check_batch(w_a, z_a);
  check_batch(w_b, z_b);
  require_shape(w_a.rows() == w_b.rows(), "paired batches differ in size");
  require_shape(w_a.cols() == w_b.cols() && z_a.cols() == z_b.cols(), "paired batches differ in width");
  if (!(lambda1 > 0.0) || !(lambda2 > 0.0)) throw ConfigError("lambda1 and lambda2 must be positive");

  const Index n = z_a.rows();
  const Index d_g = g.output_dim(z_a.cols());
  RowMatrix edges(n, d_g);
  for (Index m = 0; m < n; ++m)
    edges.row(m) = edge_apply(g, z_a.row(m).transpose(), z_b.row(m).transpose()).transpose();

  const ScaleMoments moments = scale_moments(edges, bootstrap);
  Vector log_mean(d_g), log_var(d_g);
  to_log_space(moments, log_mean, log_var);

  auto result = std::make_pair(delta_prior(w_a, lambda1, lambda2), delta_prior(w_b, lambda1, lambda2));
  if (g.kind == EdgeKind::Identity) {
    const Index d = z_a.cols();
    result.first.log_s_mean = log_mean.head(d);
    result.first.log_s_var = log_var.head(d);
    result.second.log_s_mean = log_mean.tail(d);
    result.second.log_s_var = log_var.tail(d);
  } else {
    result.first.log_s_mean = result.second.log_s_mean = log_mean;
    result.first.log_s_var = result.second.log_s_var = log_var;
  }
  return result;
}

std::pair<BatchPrior, BatchPrior> estimate_prior(const RowMatrix& w_a, const RowMatrix& w_b,
                                                 const RowMatrix& z_a, const RowMatrix& z_b,
                                                 const EdgeFunction& g, Index replicates,
                                                 double lambda1, double lambda2, Rng& rng) {
  if (w_a.rows() < 2) throw ConfigError("batch size must be at least 2, got " + std::to_string(w_a.rows()));
  const auto bootstrap = draw_bootstrap(w_a.rows(), replicates, rng);
  return estimate_prior(w_a, w_b, z_a, z_b, g, bootstrap, lambda1, lambda2);
}

BatchPrior estimate_node_prior(const RowMatrix& w, const RowMatrix& z,
                               const std::vector<std::vector<Index>>& bootstrap, double lambda1,
                               double lambda2) {
  check_batch(w, z);
  if (!(lambda1 > 0.0) || !(lambda2 > 0.0)) throw ConfigError("lambda1 and lambda2 must be positive");
  BatchPrior p = delta_prior(w, lambda1, lambda2);
  const ScaleMoments moments = scale_moments(z, bootstrap);
  p.log_s_mean.resize(z.cols());
  p.log_s_var.resize(z.cols());
  to_log_space(moments, p.log_s_mean, p.log_s_var);
  return p;
}

// ---------------------------------------------------------------------------

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Index posterior_scale_dim(const DiffNet& h, Index d_w, Index d_z) {
  require_shape(h.in_dim() == d_w + d_z, "inference net takes " + std::to_string(h.in_dim()) +
                                             " inputs, expected d_w + d_z = " +
                                             std::to_string(d_w + d_z));
  const Index rest = h.out_dim() - 2 * d_w;
  require_shape(rest > 0 && rest % 2 == 0,
                "inference net output " + std::to_string(h.out_dim()) + " is not 2 d_w + 2 d_s");
  return rest / 2;
}

namespace {

struct PosteriorPass {
  Vector input;
  MlpTrace<double> trace;
  PosteriorStats stats;
};

PosteriorPass run_posterior(const DiffNet& h, const Eigen::Ref<const Vector>& w,
                            const Eigen::Ref<const Vector>& z) {
  const Index d_w = w.size();
  const Index d_s = posterior_scale_dim(h, d_w, z.size());
  PosteriorPass p;
  p.input.resize(z.size() + d_w);
  p.input << z, w;
  p.trace = forward_trace(h, p.input);
  const Vector& raw = p.trace.out;
  auto sigma = [](const auto& r) {
    return r.unaryExpr([](double v) { return softplus(v) + kSigmaFloor; }).eval();
  };
  p.stats.mu_delta = raw.segment(0, d_w);
  p.stats.sigma_delta = sigma(raw.segment(d_w, d_w));
  p.stats.mu_log_s = raw.segment(2 * d_w, d_s);
  p.stats.sigma_log_s = sigma(raw.segment(2 * d_w + d_s, d_s));
  return p;
}

// Everything about one entity from its inputs up to nu = f(w + delta).
struct NodePass {
  PosteriorPass posterior;
  LatentSample latent;
  Vector u;  // w + delta
  MlpTrace<double> f_trace;
};

NodePass run_node(const DiffNet& f, const DiffNet& h, const Eigen::Ref<const Vector>& w,
                  const Eigen::Ref<const Vector>& z, const NodeNoise& eps) {
  NodePass n;
  n.posterior = run_posterior(h, w, z);
  n.latent = reparametrize(n.posterior.stats, eps.eps_delta, eps.eps_log_s);
  n.u = w + n.latent.delta;
  require_shape(f.in_dim() == w.size(), "projection net takes " + std::to_string(f.in_dim()) +
                                            " inputs, expected d_w = " + std::to_string(w.size()));
  n.f_trace = forward_trace(f, n.u);
  return n;
}

// Given dE/d(nu) and dE/d(s) from the likelihood, adds scale * dE/dparams
// for f and h, where E = likelihood - KL(node).
void node_backward(const DiffNet& f, const DiffNet& h, const NodePass& n, const NodeNoise& eps,
                   const BatchPrior& prior, const Vector& d_nu, const Vector& d_s,
                   ElboGradients& grads, double scale) {
  const PosteriorStats& st = n.posterior.stats;
  const Index d_w = st.mu_delta.size();
  const Index d_s_dim = st.mu_log_s.size();

  const Vector d_delta = accumulate_backward(f, n.f_trace, n.u, d_nu, grads.f, scale);
  const Vector d_log_s = d_s.cwiseProduct(n.latent.s);

  // -KL derivatives: d/dmu = -(mu - mu_p)/v, d/dsigma = 1/sigma - sigma/v.
  const Vector v_delta = prior.lambda1 * prior.var_delta;
  const Vector v_log = prior.lambda2 * prior.log_s_var;

  const Vector& raw = n.posterior.trace.out;
  Vector upstream(raw.size());
  for (Index k = 0; k < d_w; ++k) {
    const double sig = st.sigma_delta[k];
    upstream[k] = d_delta[k] - (st.mu_delta[k] - prior.mu_delta[k]) / v_delta[k];
    const double d_sig = d_delta[k] * eps.eps_delta[k] + 1.0 / sig - sig / v_delta[k];
    upstream[d_w + k] = d_sig * sigmoid(raw[d_w + k]);
  }
  for (Index k = 0; k < d_s_dim; ++k) {
    const double sig = st.sigma_log_s[k];
    upstream[2 * d_w + k] = d_log_s[k] - (st.mu_log_s[k] - prior.log_s_mean[k]) / v_log[k];
    const double d_sig = d_log_s[k] * eps.eps_log_s[k] + 1.0 / sig - sig / v_log[k];
    upstream[2 * d_w + d_s_dim + k] = d_sig * sigmoid(raw[2 * d_w + d_s_dim + k]);
  }
  accumulate_backward(h, n.posterior.trace, n.posterior.input, upstream, grads.h, scale);
}

void check_prior(const BatchPrior& prior, const PosteriorStats& st) {
  require_shape(prior.var_delta.size() == st.mu_delta.size() &&
                    prior.mu_delta.size() == st.mu_delta.size(),
                "delta prior length does not match posterior");
  require_shape(prior.log_s_mean.size() == st.mu_log_s.size() &&
                    prior.log_s_var.size() == st.mu_log_s.size(),
                "scale prior length does not match posterior");
}

}  // namespace

PosteriorStats infer_posterior(const DiffNet& h, const Eigen::Ref<const Vector>& w,
                               const Eigen::Ref<const Vector>& z) {
  return run_posterior(h, w, z).stats;
}

LatentSample reparametrize(const PosteriorStats& stats, const Eigen::Ref<const Vector>& eps_delta,
                           const Eigen::Ref<const Vector>& eps_log_s) {
  require_shape(eps_delta.size() == stats.mu_delta.size(), "delta noise length mismatch");
  require_shape(eps_log_s.size() == stats.mu_log_s.size(), "scale noise length mismatch");
  LatentSample out;
  out.delta = stats.mu_delta + stats.sigma_delta.cwiseProduct(eps_delta);
  out.s = (stats.mu_log_s + stats.sigma_log_s.cwiseProduct(eps_log_s)).array().exp().matrix();
  return out;
}

double reconstruction_term(const EdgeFunction& g, const Eigen::Ref<const Vector>& z_i,
                           const Eigen::Ref<const Vector>& z_j, const Eigen::Ref<const Vector>& nu_i,
                           const Eigen::Ref<const Vector>& nu_j, const Eigen::Ref<const Vector>& s_i,
                           const Eigen::Ref<const Vector>& s_j) {
  const Vector observed = edge_apply(g, z_i, z_j);
  const Vector predicted = edge_apply(g, nu_i, nu_j);
  require_shape(observed.size() == predicted.size(), "z and nu differ in length");
  const Vector theta = pair_variance(g, s_i, s_j);
  require_shape(theta.size() == observed.size(),
                "scale length " + std::to_string(s_i.size()) + " does not fit edge output " +
                    std::to_string(observed.size()));
  double total = 0.0;
  for (Index k = 0; k < theta.size(); ++k) {
    if (!(theta[k] > 0.0))
      throw NumericalError("non-positive observation variance at coordinate " + std::to_string(k));
    const double r = observed[k] - predicted[k];
    total -= 0.5 * std::log(theta[k]) + r * r / (2.0 * theta[k]);
  }
  return total;
}

double gaussian_kl(const Eigen::Ref<const Vector>& mu_q, const Eigen::Ref<const Vector>& sigma_q,
                   const Eigen::Ref<const Vector>& mu_p, const Eigen::Ref<const Vector>& var_p) {
  require_shape(mu_q.size() == sigma_q.size() && mu_q.size() == mu_p.size() &&
                    mu_q.size() == var_p.size(),
                "KL arguments differ in length");
  double total = 0.0;
  for (Index k = 0; k < mu_q.size(); ++k) {
    const double ratio = sigma_q[k] * sigma_q[k] / var_p[k];
    const double diff = mu_q[k] - mu_p[k];
    total += 0.5 * (-std::log(ratio) + ratio + diff * diff / var_p[k] - 1.0);
  }
  return total;
}

double kl_penalty(const PosteriorStats& stats, const BatchPrior& prior) {
  check_prior(prior, stats);
  return gaussian_kl(stats.mu_delta, stats.sigma_delta, prior.mu_delta,
                     prior.lambda1 * prior.var_delta) +
         gaussian_kl(stats.mu_log_s, stats.sigma_log_s, prior.log_s_mean,
                     prior.lambda2 * prior.log_s_var);
}

ElboTerms elbo_pair(const DiffNet& f, const DiffNet& h, const EdgeFunction& g,
                    const Eigen::Ref<const Vector>& w_i, const Eigen::Ref<const Vector>& z_i,
                    const Eigen::Ref<const Vector>& w_j, const Eigen::Ref<const Vector>& z_j,
                    const BatchPrior& prior_i, const BatchPrior& prior_j, const NodeNoise& eps_i,
                    const NodeNoise& eps_j, ElboGradients* grads, double scale) {
  const NodePass ni = run_node(f, h, w_i, z_i, eps_i);
  const NodePass nj = run_node(f, h, w_j, z_j, eps_j);
  check_prior(prior_i, ni.posterior.stats);
  check_prior(prior_j, nj.posterior.stats);
  const Vector& nu_i = ni.f_trace.out;
  const Vector& nu_j = nj.f_trace.out;

  ElboTerms t;
  t.reconstruction = reconstruction_term(g, z_i, z_j, nu_i, nu_j, ni.latent.s, nj.latent.s);
  t.kl = kl_penalty(ni.posterior.stats, prior_i) + kl_penalty(nj.posterior.stats, prior_j);
  t.elbo = t.reconstruction - t.kl;
  if (grads == nullptr) return t;

  const Vector observed = edge_apply(g, z_i, z_j);
  const Vector predicted = edge_apply(g, nu_i, nu_j);
  const Vector theta = pair_variance(g, ni.latent.s, nj.latent.s);
  Vector d_pred(theta.size()), d_theta(theta.size());
  for (Index k = 0; k < theta.size(); ++k) {
    const double r = observed[k] - predicted[k];
    d_pred[k] = r / theta[k];
    d_theta[k] = -0.5 / theta[k] + r * r / (2.0 * theta[k] * theta[k]);
  }
  const EdgePullback d_nu = edge_pullback(g, nu_i, nu_j, d_pred);
  Vector d_s_i, d_s_j;
  if (g.kind == EdgeKind::Identity) {
    const Index d = ni.latent.s.size();
    d_s_i = d_theta.head(d);
    d_s_j = d_theta.tail(d);
  } else {
    d_s_i = d_s_j = d_theta;
  }
  node_backward(f, h, ni, eps_i, prior_i, d_nu.dx, d_s_i, *grads, scale);
  node_backward(f, h, nj, eps_j, prior_j, d_nu.dy, d_s_j, *grads, scale);
  return t;
}

ElboTerms elbo_node(const DiffNet& f, const DiffNet& h, const Eigen::Ref<const Vector>& w,
                    const Eigen::Ref<const Vector>& z, const BatchPrior& prior,
                    const NodeNoise& eps, ElboGradients* grads, double scale) {
  const NodePass n = run_node(f, h, w, z, eps);
  check_prior(prior, n.posterior.stats);
  const Vector& nu = n.f_trace.out;
  const Vector& s = n.latent.s;
  require_shape(nu.size() == z.size(), "projection net output does not match d_z");
  require_shape(s.size() == z.size(), "scale length does not match d_z");

  ElboTerms t;
  Vector d_nu(z.size()), d_s(z.size());
  for (Index k = 0; k < z.size(); ++k) {
    const double r = z[k] - nu[k];
    t.reconstruction -= 0.5 * std::log(s[k]) + r * r / (2.0 * s[k]);
    d_nu[k] = r / s[k];
    d_s[k] = -0.5 / s[k] + r * r / (2.0 * s[k] * s[k]);
  }
  t.kl = kl_penalty(n.posterior.stats, prior);
  t.elbo = t.reconstruction - t.kl;
  if (grads != nullptr) node_backward(f, h, n, eps, prior, d_nu, d_s, *grads, scale);
  return t;
}

}  // namespace bem
