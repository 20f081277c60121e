#include "bem/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace bem {

void SynthSpec::validate() const {
  if (n < 2 || d_w < 1 || d_z < 1 || n_clusters < 1 || true_hidden_dim < 1)
    throw ConfigError("synthetic sizes must be positive (and n >= 2)");
  if (n_clusters > n) throw ConfigError("more clusters than entities");
  if (!(delta_scale >= 0.0) || !(noise_scale >= 0.0) || !(cluster_spread >= 0.0) ||
      !(signal_scale >= 0.0))
    throw ConfigError("synthetic scales must be non-negative");
}

LabelTable SynthTruth::labels() const {
  LabelTable t;
  t.ids = w.ids();
  for (Index c : cluster) t.labels.push_back({"c" + std::to_string(c)});
  return t;
}

namespace {

std::vector<std::string> make_ids(Index n) {
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(n));
  const int width = static_cast<int>(std::to_string(n - 1).size());
  char buf[32];
  for (Index i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "e%0*lld", width, static_cast<long long>(i));
    ids.emplace_back(buf);
  }
  return ids;
}

}  // namespace

SynthTruth generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng = make_stream(spec.seed, "synth");
  std::normal_distribution<double> normal(0.0, 1.0);
  auto randn = [&] { return normal(rng); };

  RowMatrix centers(spec.n_clusters, spec.d_w);
  for (Index c = 0; c < spec.n_clusters; ++c) {
    for (Index k = 0; k < spec.d_w; ++k) centers(c, k) = randn();
    centers.row(c).normalize();
  }

  // F*: N(0, 1) first layer so unit-norm inputs give O(1) pre-activations,
  // random hidden biases to spread the kinks, N(0, 2/H) second layer.
  DiffNet proj(spec.d_w, spec.true_hidden_dim, spec.d_z);
  {
    auto w1 = proj.w1();
    for (Index r = 0; r < w1.rows(); ++r)
      for (Index c = 0; c < w1.cols(); ++c) w1(r, c) = randn();
    auto b1 = proj.b1();
    for (Index k = 0; k < b1.size(); ++k) b1[k] = 0.5 * randn();
    auto w2 = proj.w2();
    const double s2 = std::sqrt(2.0 / static_cast<double>(spec.true_hidden_dim));
    for (Index r = 0; r < w2.rows(); ++r)
      for (Index c = 0; c < w2.cols(); ++c) w2(r, c) = s2 * randn();
  }

  // Balanced cluster sizes in shuffled order.
  std::vector<Index> cluster(static_cast<std::size_t>(spec.n));
  for (Index i = 0; i < spec.n; ++i) cluster[static_cast<std::size_t>(i)] = i % spec.n_clusters;
  std::shuffle(cluster.begin(), cluster.end(), rng);

  RowMatrix w(spec.n, spec.d_w), delta(spec.n, spec.d_w);
  for (Index i = 0; i < spec.n; ++i) {
    for (Index k = 0; k < spec.d_w; ++k)
      w(i, k) = centers(cluster[static_cast<std::size_t>(i)], k) + spec.cluster_spread * randn();
    const double norm = w.row(i).norm();
    if (norm > 0.0) w.row(i) /= norm;
    for (Index k = 0; k < spec.d_w; ++k) delta(i, k) = spec.delta_scale * randn();
  }

  RowMatrix nu(spec.n, spec.d_z);
  for (Index i = 0; i < spec.n; ++i)
    nu.row(i) = net_forward(proj, Vector((w.row(i) + delta.row(i)).transpose())).transpose();
  // Center the image of F* over the dataset (an additive offset of the
  // projection is not identifiable from edge residuals), then rescale the
  // output layer so nu has per-coordinate std signal_scale.
  const Vector offset = nu.colwise().mean().transpose();
  nu.rowwise() -= offset.transpose();
  const double rms = std::sqrt(nu.squaredNorm() / static_cast<double>(nu.size()));
  const double gain = rms > 0.0 ? spec.signal_scale / rms : 0.0;
  proj.w2() *= gain;
  proj.b2() = -gain * offset;
  nu *= gain;

  RowMatrix z = nu;
  for (Index i = 0; i < spec.n; ++i)
    for (Index k = 0; k < spec.d_z; ++k) z(i, k) += spec.noise_scale * randn();

  SynthTruth t;
  const auto ids = make_ids(spec.n);
  t.w = EmbeddingTable(ids, std::move(w));
  t.delta = EmbeddingTable(ids, std::move(delta));
  t.nu = EmbeddingTable(ids, std::move(nu));
  t.z = EmbeddingTable(ids, std::move(z));
  t.cluster = std::move(cluster);
  t.cluster_attribute.resize(static_cast<std::size_t>(spec.n_clusters));
  std::iota(t.cluster_attribute.begin(), t.cluster_attribute.end(), Index{0});
  t.projection = std::move(proj);
  return t;
}

double oracle_error(const EmbeddingTable& refined_bg, const SynthTruth& truth) {
  return oracle_error(refined_bg, truth.nu);
}

double oracle_error(const EmbeddingTable& refined_bg, const EmbeddingTable& nu) {
  require_shape(refined_bg.dim() == nu.dim(), "refined BG has dim " + std::to_string(refined_bg.dim()) +
                                                  ", truth has " + std::to_string(nu.dim()));
  if (refined_bg.size() == 0) throw EvalError("empty table");
  double sse = 0.0;
  for (Index i = 0; i < refined_bg.size(); ++i) {
    const auto& id = refined_bg.ids()[static_cast<std::size_t>(i)];
    const auto j = nu.find(id);
    if (!j) throw EvalError("id '" + id + "' is not part of the synthetic truth");
    sse += (refined_bg.row(i) - nu.row(*j)).squaredNorm();
  }
  return sse / static_cast<double>(refined_bg.size() * refined_bg.dim());
}

void write_synth(const std::filesystem::path& dir, const SynthTruth& truth) {
  std::filesystem::create_directories(dir);
  write_table(dir / kSynthKgFile, truth.w);
  write_table(dir / kSynthBgFile, truth.z);
  write_labels(dir / kSynthLabelFile, truth.labels());
  write_table(dir / kSynthTruthFile, truth.nu);
}

}  // namespace bem
