#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "bem/bemmodel.hpp"

namespace bem {

/// BEM-P (pairwise interactions through an edge function) or BEM-I (every
/// entity modelled on its own).
enum class ModelKind { Pairwise, Independent };

std::string_view to_string(ModelKind kind);

/// Tunables of the training loop. Defaults follow the reference setup:
/// n_B = 500, 20 epochs, lambda1 = lambda2 = 1, Adam at 1e-3, 500 hidden units.
struct TrainConfig {
  Index batch_size = 500;
  double epochs = 20.0;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double learning_rate = 1e-3;
  Index hidden_dim = 500;
  Index bootstrap_replicates = 30;
  EdgeFunction edge{};
  ModelKind model = ModelKind::Pairwise;
  Index n_iter = 1;
  std::uint64_t seed = 0;
  bool normalize_inputs = true;

  /// Throws ConfigError on any violated positivity constraint.
  void validate() const;

  /// T = ceil(epochs * n / batch_size), at least 1.
  Index steps_for(Index n) const;

  /// Length of the per-entity scale latent for BG dimension d_z.
  Index scale_dim(Index d_z) const;
};

/// "key = value" lines, one per field, in a fixed order.
std::string to_key_values(const TrainConfig& cfg);

/// Sets one field from its textual form. Unknown keys and malformed values
/// throw ConfigError.
void apply_key_value(TrainConfig& cfg, std::string_view key, std::string_view value);

/// Applies every "key = value" line of `text` on top of `base`. Blank lines
/// and lines starting with '#' are ignored.
TrainConfig parse_key_values(std::string_view text, TrainConfig base = {});

}  // namespace bem
