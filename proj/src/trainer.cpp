#include "bem/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace bem {

namespace {

std::vector<Index> sample_without_replacement(Index n, Index k, Rng& rng) {
  std::vector<Index> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), Index{0});
  for (Index i = 0; i < k; ++i) {
    std::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  pool.resize(static_cast<std::size_t>(k));
  return pool;
}

RowMatrix gather(const RowMatrix& m, const std::vector<Index>& rows) {
  RowMatrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
  return out;
}

}  // namespace

PairedBatch sample_paired_batches(Index n, Index batch_size, Rng& rng, bool allow_self_pairs) {
  if (n < 2) throw ConfigError("need at least 2 entities, got " + std::to_string(n));
  if (batch_size < 2 || batch_size > n)
    throw ConfigError("batch size " + std::to_string(batch_size) + " outside [2, " +
                      std::to_string(n) + "]");
  PairedBatch p;
  p.a = sample_without_replacement(n, batch_size, rng);
  p.b = sample_without_replacement(n, batch_size, rng);
  if (!allow_self_pairs) {
    for (Index m = 0; m < batch_size; ++m) {
      auto mi = static_cast<std::size_t>(m);
      if (p.a[mi] != p.b[mi]) continue;
      // Any other position works: b[other] != a[m] and a[other] != b[m]
      // because both batches hold distinct entities.
      std::uniform_int_distribution<Index> pick(0, batch_size - 2);
      Index other = pick(rng);
      if (other >= m) ++other;
      std::swap(p.b[mi], p.b[static_cast<std::size_t>(other)]);
    }
  }
  return p;
}

std::uint32_t parameter_checksum(const DiffNet& f, const DiffNet& h) {
  std::uint32_t crc = 0;
  auto add = [&crc](std::string_view, const auto& t) {
    crc = crc32(t.data(), static_cast<std::size_t>(t.size()) * sizeof(double), crc);
  };
  f.for_each_tensor(add);
  h.for_each_tensor(add);
  return crc;
}

TrainedModel initial_model(Index d_w, Index d_z, const TrainConfig& cfg, Rng& rng) {
  TrainedModel m;
  m.f = DiffNet::glorot(d_w, cfg.hidden_dim, d_z, rng);
  m.h = DiffNet::glorot(d_w + d_z, cfg.hidden_dim, 2 * d_w + 2 * cfg.scale_dim(d_z), rng);
  return m;
}

TrainedModel train(const EmbeddingTable& kg, const EmbeddingTable& bg, const TrainConfig& cfg) {
  cfg.validate();
  Rng rng = make_stream(cfg.seed, "train");
  TrainedModel model = initial_model(kg.dim(), bg.dim(), cfg, rng);
  model.report = train_from(kg, bg, cfg, model.f, model.h, rng);
  return model;
}

TrainReport train_from(const EmbeddingTable& kg_in, const EmbeddingTable& bg_in,
                       const TrainConfig& cfg, DiffNet& f, DiffNet& h, Rng& rng) {
  cfg.validate();
  const AlignedTables aligned = align(kg_in, bg_in, AlignPolicy::Strict);
  const RowMatrix w = cfg.normalize_inputs ? normalize_rows(aligned.kg.values()) : aligned.kg.values();
  const RowMatrix z = cfg.normalize_inputs ? normalize_rows(aligned.bg.values()) : aligned.bg.values();
  const Index n = w.rows();
  const Index d_w = w.cols();
  const Index d_z = z.cols();
  const Index n_b = cfg.batch_size;
  if (n_b > n)
    throw ConfigError("batch size " + std::to_string(n_b) + " exceeds entity count " + std::to_string(n));
  require_shape(f.in_dim() == d_w && f.out_dim() == d_z, "projection net does not map d_w to d_z");
  const Index d_s = posterior_scale_dim(h, d_w, d_z);
  require_shape(d_s == cfg.scale_dim(d_z), "inference net output does not match the configured model");

  const bool independent = cfg.model == ModelKind::Independent;
  const bool self_pairs = independent || cfg.edge.allows_self_pairs();
  const AdamOptions adam{cfg.learning_rate, 0.9, 0.999, 1e-8};
  AdamState<double> adam_f(f, adam), adam_h(h, adam);

  TrainReport report;
  report.seed = cfg.seed;
  const Index steps = cfg.steps_for(n);
  report.steps.reserve(static_cast<std::size_t>(steps));
  const double scale = -1.0 / static_cast<double>(n_b);  // gradient of -mean ELBO

  for (Index step = 0; step < steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const PairedBatch batch = sample_paired_batches(n, n_b, rng, self_pairs);
    const RowMatrix w_a = gather(w, batch.a), w_b = gather(w, batch.b);
    const RowMatrix z_a = gather(z, batch.a), z_b = gather(z, batch.b);

    const auto bootstrap = draw_bootstrap(n_b, cfg.bootstrap_replicates, rng);
    BatchPrior prior_a, prior_b;
    if (independent) {
      prior_a = estimate_node_prior(w_a, z_a, bootstrap, cfg.lambda1, cfg.lambda2);
      prior_b = estimate_node_prior(w_b, z_b, bootstrap, cfg.lambda1, cfg.lambda2);
    } else {
      std::tie(prior_a, prior_b) =
          estimate_prior(w_a, w_b, z_a, z_b, cfg.edge, bootstrap, cfg.lambda1, cfg.lambda2);
    }

    std::vector<NodeNoise> eps_a(static_cast<std::size_t>(n_b)), eps_b(static_cast<std::size_t>(n_b));
    for (std::size_t m = 0; m < eps_a.size(); ++m) {
      for (NodeNoise* e : {&eps_a[m], &eps_b[m]}) {
        e->eps_delta.resize(d_w);
        e->eps_log_s.resize(d_s);
        fill_normal(rng, e->eps_delta);
        fill_normal(rng, e->eps_log_s);
      }
    }

    StepRecord rec;
    rec.step = step;
    for (Index iter = 0; iter < cfg.n_iter; ++iter) {
      ElboGradients grads{f.zeros_like(), h.zeros_like()};
      ElboTerms sum;
      try {
        for (Index m = 0; m < n_b; ++m) {
          const auto mi = static_cast<std::size_t>(m);
          ElboTerms t;
          if (independent) {
            const ElboTerms ta = elbo_node(f, h, w_a.row(m).transpose(), z_a.row(m).transpose(),
                                           prior_a, eps_a[mi], &grads, scale);
            const ElboTerms tb = elbo_node(f, h, w_b.row(m).transpose(), z_b.row(m).transpose(),
                                           prior_b, eps_b[mi], &grads, scale);
            t = {ta.elbo + tb.elbo, ta.reconstruction + tb.reconstruction, ta.kl + tb.kl};
          } else {
            t = elbo_pair(f, h, cfg.edge, w_a.row(m).transpose(), z_a.row(m).transpose(),
                          w_b.row(m).transpose(), z_b.row(m).transpose(), prior_a, prior_b,
                          eps_a[mi], eps_b[mi], &grads, scale);
          }
          sum.elbo += t.elbo;
          sum.reconstruction += t.reconstruction;
          sum.kl += t.kl;
        }
      } catch (const NumericalError& e) {
        throw TrainingError("step " + std::to_string(step) + ": " + e.what());
      }
      if (!std::isfinite(sum.elbo))
        throw TrainingError("non-finite ELBO at step " + std::to_string(step));
      if (iter == 0) {
        const double inv = 1.0 / static_cast<double>(n_b);
        rec.elbo = sum.elbo * inv;
        rec.reconstruction = sum.reconstruction * inv;
        rec.kl = sum.kl * inv;
      }
      try {
        adam_step(f, grads.f, adam_f, "f");
        adam_step(h, grads.h, adam_h, "h");
      } catch (const TrainingError& e) {
        throw TrainingError("step " + std::to_string(step) + ": " + e.what());
      }
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.steps.push_back(rec);
  }
  report.checksum = parameter_checksum(f, h);
  return report;
}

RefinedTables refine(const EmbeddingTable& kg, const EmbeddingTable& bg, const DiffNet& f,
                     const DiffNet& h, bool normalize_inputs) {
  const AlignedTables aligned = align(kg, bg, AlignPolicy::Strict);
  const RowMatrix w = normalize_inputs ? normalize_rows(aligned.kg.values()) : aligned.kg.values();
  const RowMatrix z = normalize_inputs ? normalize_rows(aligned.bg.values()) : aligned.bg.values();
  require_shape(f.in_dim() == w.cols(), "KG table has dim " + std::to_string(w.cols()) +
                                            " but the model expects d_w = " + std::to_string(f.in_dim()));
  require_shape(f.out_dim() == z.cols(), "BG table has dim " + std::to_string(z.cols()) +
                                             " but the model expects d_z = " + std::to_string(f.out_dim()));
  posterior_scale_dim(h, w.cols(), z.cols());

  RowMatrix w_hat(w.rows(), w.cols()), z_hat(z.rows(), z.cols());
  for (Index i = 0; i < w.rows(); ++i) {
    const Vector wi = w.row(i).transpose();
    const PosteriorStats st = infer_posterior(h, wi, z.row(i).transpose());
    const Vector refined_w = wi + st.mu_delta;
    w_hat.row(i) = refined_w.transpose();
    z_hat.row(i) = net_forward(f, refined_w).transpose();
  }
  return {aligned.kg.with_values(std::move(w_hat)), aligned.bg.with_values(std::move(z_hat))};
}

}  // namespace bem
