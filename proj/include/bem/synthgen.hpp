#pragma once

// Synthetic KG/BG pairs sampled from the model itself, with the noise-free
// projection kept as ground truth:
//
//   w_i   = normalize(center[c_i] + jitter)        (unit sphere)
//   delta ~ N(0, delta_scale^2 I)
//   nu_i  = F*(w_i + delta_i)                      (fixed random 2-layer net,
//                                                   centered and scaled to signal_scale)
//   z_i   = nu_i + N(0, noise_scale^2 I)

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bem/dataio.hpp"

namespace bem {

struct SynthSpec {
  Index n = 2000;
  Index d_w = 16;
  Index d_z = 32;
  Index n_clusters = 10;
  double delta_scale = 0.1;
  double noise_scale = 0.3;
  Index true_hidden_dim = 64;
  double signal_scale = 0.3;     // per-coordinate std of nu over the dataset
  double cluster_spread = 0.1;   // per-coordinate jitter around the center before normalising
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthTruth {
  EmbeddingTable w;
  EmbeddingTable delta;
  EmbeddingTable nu;
  EmbeddingTable z;
  std::vector<Index> cluster;            // per entity
  std::vector<Index> cluster_attribute;  // per cluster
  DiffNet projection;                    // F*

  /// One label per entity: "c<cluster>".
  LabelTable labels() const;
};

SynthTruth generate(const SynthSpec& spec);

/// Mean squared error of a BG table against the noise-free nu, over all
/// entities and coordinates. Rows are matched by id.
double oracle_error(const EmbeddingTable& refined_bg, const SynthTruth& truth);
double oracle_error(const EmbeddingTable& refined_bg, const EmbeddingTable& nu);

/// File names written by write_synth.
inline constexpr const char* kSynthKgFile = "kg.tsv";
inline constexpr const char* kSynthBgFile = "bg.tsv";
inline constexpr const char* kSynthLabelFile = "labels.tsv";
inline constexpr const char* kSynthTruthFile = "truth.tsv";

/// Writes kg.tsv, bg.tsv, labels.tsv and truth.tsv (the nu table) into `dir`.
void write_synth(const std::filesystem::path& dir, const SynthTruth& truth);

}  // namespace bem
