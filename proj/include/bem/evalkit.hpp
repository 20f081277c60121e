#pragma once

// Evaluation metrics for embedding tables: one-vs-rest logistic node
// classification, the |cosine| similarity distribution, the cluster ratio,
// hit@K recall for nearest-neighbour retrieval, and random projections.

#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "bem/dataio.hpp"

namespace bem {

struct EvalSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
};

/// Shuffles the ids present in both `table` and `labels` (in table order)
/// and cuts them at train_fraction.
EvalSplit make_split(const EmbeddingTable& table, const LabelTable& labels, double train_fraction,
                     std::uint64_t seed);

struct ClassifierOptions {
  double reg = 1e-4;
  int epochs = 300;
  double learning_rate = 0.1;
};

struct ClassifierModel {
  std::vector<std::string> classes;
  Matrix weights;  // one row per class
  Vector bias;
  std::vector<std::vector<double>> loss_history;  // per class, one entry per epoch

  Vector scores(const Eigen::Ref<const Vector>& x) const { return weights * x + bias; }
};

/// One binary logistic model per class, full-batch gradient descent on the
/// mean log-loss plus (reg / 2) |w|^2. A step that would raise the loss is
/// rejected and the learning rate halved, so each loss history is
/// non-increasing.
ClassifierModel train_classifier(const EmbeddingTable& table, const LabelTable& labels,
                                 const EvalSplit& split, const ClassifierOptions& opts = {});

/// Fraction of test ids whose top-scoring class is one of their labels.
double classify_accuracy(const ClassifierModel& model, const EmbeddingTable& table,
                         const LabelTable& labels, const std::vector<std::string>& test_ids);

struct SimilarityHistogram {
  Vector edges;  // bins + 1 edges over [0, 1]
  Vector mass;   // sums to 1
  Index pairs = 0;
  Index skipped = 0;  // pairs touching a zero-norm row
  double mean = 0.0;
  double variance = 0.0;  // of the sampled |cos| values
};

double abs_cosine(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y);

/// |cos| over n_pairs uniformly drawn pairs of distinct rows.
SimilarityHistogram similarity_histogram(const EmbeddingTable& table, Index n_pairs, Index bins,
                                         Rng& rng);

struct ClusterRatio {
  double ratio = 0.0;
  double max_within = 0.0;
  double min_between = 0.0;
  Index classes = 0;
  std::string diagnostic;  // set when the ratio is infinite
};

/// max_C within(C) / min_{C != C'} between(C, C') with
///   within(C)      = mean_{x in C} |x - mean(C)|
///   between(C, C') = min_{x in C, y in C'} |x - y|.
/// Each entity counts under its first label; classes with fewer than two
/// members are ignored.
ClusterRatio cluster_ratio(const EmbeddingTable& table, const LabelTable& labels);

struct RetrievalUser {
  std::vector<std::string> triggers;
  std::set<std::string> truth;  // ground-truth attribute values
};

struct RecallResult {
  double recall = 0.0;
  Index hits = 0;
  Index total = 0;
  Index skipped_triggers = 0;
};

/// Exact top-K cosine retrieval from `candidates` for every trigger (the
/// trigger itself excluded). Per user, each ground-truth attribute covered
/// by some retrieved item counts as a hit; recall = hits / total
/// ground-truth attributes, over all users.
RecallResult hit_recall(const EmbeddingTable& queries, const EmbeddingTable& candidates,
                        const std::vector<RetrievalUser>& users,
                        const std::unordered_map<std::string, std::string>& attribute_of, Index k);

/// d x target_dim matrix with i.i.d. N(0, 1 / target_dim) entries.
RowMatrix gaussian_projection_matrix(Index source_dim, Index target_dim, Rng& rng);

/// Rows of `table` times `projection`.
EmbeddingTable project(const EmbeddingTable& table, const RowMatrix& projection);

EmbeddingTable random_project(const EmbeddingTable& table, Index target_dim, Rng& rng);

/// Row-wise concatenation on the common ids (in `a` order).
EmbeddingTable concat_tables(const EmbeddingTable& a, const EmbeddingTable& b);

}  // namespace bem
