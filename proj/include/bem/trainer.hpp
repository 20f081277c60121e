#pragma once

#include <cstdint>
#include <vector>

#include "bem/bemmodel.hpp"
#include "bem/config.hpp"
#include "bem/dataio.hpp"
#include "bem/diffcore.hpp"

namespace bem {

/// Two batches of entity indices, paired position by position.
struct PairedBatch {
  std::vector<Index> a;
  std::vector<Index> b;
};

/// Draws batches a and b independently, each uniformly without replacement
/// from 0..n-1. Unless `allow_self_pairs`, every position with a[m] == b[m]
/// has its b entry swapped with a uniformly chosen other position, which
/// keeps b's membership and never creates a new self-pair.
PairedBatch sample_paired_batches(Index n, Index batch_size, Rng& rng, bool allow_self_pairs);

struct StepRecord {
  Index step = 0;
  double elbo = 0.0;  // batch mean
  double reconstruction = 0.0;
  double kl = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<StepRecord> steps;
  std::uint32_t checksum = 0;
  std::uint64_t seed = 0;
};

struct TrainedModel {
  DiffNet f;  // projection w -> z
  DiffNet h;  // inference network (z, w) -> posterior
  TrainReport report;
};

/// CRC-32 over all parameters of f then h.
std::uint32_t parameter_checksum(const DiffNet& f, const DiffNet& h);

/// Fresh networks for the given table widths, drawn from `rng`.
TrainedModel initial_model(Index d_w, Index d_z, const TrainConfig& cfg, Rng& rng);

/// Runs the full training loop. Tables must cover the same id set (they are
/// put in kg order); with cfg.normalize_inputs both are row-normalised first.
TrainedModel train(const EmbeddingTable& kg, const EmbeddingTable& bg, const TrainConfig& cfg);

/// Same loop starting from the given networks (which are updated in place).
TrainReport train_from(const EmbeddingTable& kg, const EmbeddingTable& bg, const TrainConfig& cfg,
                       DiffNet& f, DiffNet& h, Rng& rng);

struct RefinedTables {
  EmbeddingTable kg;
  EmbeddingTable bg;
};

/// w_hat = w + posterior mean of delta, z_hat = f(w_hat), for every entity.
/// Inputs are row-normalised first when `normalize_inputs` is set, matching
/// how the networks were trained.
RefinedTables refine(const EmbeddingTable& kg, const EmbeddingTable& bg, const DiffNet& f,
                     const DiffNet& h, bool normalize_inputs = false);

}  // namespace bem
