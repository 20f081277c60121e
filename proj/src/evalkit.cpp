#include "bem/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bem {

EvalSplit make_split(const EmbeddingTable& table, const LabelTable& labels, double train_fraction,
                     std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw EvalError("train fraction must lie in (0, 1)");
  const auto label_index = labels.index();
  std::vector<std::string> ids;
  for (const auto& id : table.ids())
    if (label_index.count(id)) ids.push_back(id);
  if (ids.empty()) throw EvalError("no labeled entity is present in the table");

  Rng rng = make_stream(seed, "split");
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto cut = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ids.size())));
  EvalSplit s;
  s.seed = seed;
  s.train_fraction = train_fraction;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(cut));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(cut), ids.end());
  return s;
}

namespace {

const std::vector<std::string>& labels_of(const LabelTable& labels,
                                          const std::unordered_map<std::string, Index>& index,
                                          const std::string& id) {
  auto it = index.find(id);
  if (it == index.end()) throw EvalError("id '" + id + "' has no labels");
  return labels.labels[static_cast<std::size_t>(it->second)];
}

Index row_of(const EmbeddingTable& table, const std::string& id) {
  auto r = table.find(id);
  if (!r) throw EvalError("id '" + id + "' is not in the table");
  return *r;
}

double logistic_loss(const Matrix& x, const Vector& y, const Vector& w, double b, double reg) {
  const Vector s = (x * w).array() + b;
  double loss = 0.0;
  for (Index i = 0; i < s.size(); ++i) loss += softplus(s[i]) - y[i] * s[i];
  return loss / static_cast<double>(s.size()) + 0.5 * reg * w.squaredNorm();
}

}  // namespace

ClassifierModel train_classifier(const EmbeddingTable& table, const LabelTable& labels,
                                 const EvalSplit& split, const ClassifierOptions& opts) {
  if (split.train.empty()) throw EvalError("no labeled overlap with the table");
  const auto index = labels.index();

  std::set<std::string> class_set;
  for (const auto& id : split.train)
    for (const auto& c : labels_of(labels, index, id)) class_set.insert(c);
  if (class_set.size() < 2)
    throw EvalError("degenerate class set: training ids carry " + std::to_string(class_set.size()) +
                    " class(es), need at least 2");

  const Index n = static_cast<Index>(split.train.size());
  Matrix x(n, table.dim());
  for (Index i = 0; i < n; ++i) x.row(i) = table.row(row_of(table, split.train[static_cast<std::size_t>(i)]));

  ClassifierModel model;
  model.classes.assign(class_set.begin(), class_set.end());
  const Index n_classes = static_cast<Index>(model.classes.size());
  model.weights = Matrix::Zero(n_classes, table.dim());
  model.bias = Vector::Zero(n_classes);
  model.loss_history.resize(static_cast<std::size_t>(n_classes));

  for (Index c = 0; c < n_classes; ++c) {
    const auto& cls = model.classes[static_cast<std::size_t>(c)];
    Vector y(n);
    for (Index i = 0; i < n; ++i) {
      const auto& ls = labels_of(labels, index, split.train[static_cast<std::size_t>(i)]);
      y[i] = std::find(ls.begin(), ls.end(), cls) != ls.end() ? 1.0 : 0.0;
    }
    Vector w = Vector::Zero(table.dim());
    double b = 0.0;
    double lr = opts.learning_rate;
    double loss = logistic_loss(x, y, w, b, opts.reg);
    auto& history = model.loss_history[static_cast<std::size_t>(c)];
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
      const Vector s = (x * w).array() + b;
      const Vector resid = s.unaryExpr([](double v) { return sigmoid(v); }) - y;
      const Vector grad_w = x.transpose() * resid / static_cast<double>(n) + opts.reg * w;
      const double grad_b = resid.mean();
      const Vector w_try = w - lr * grad_w;
      const double b_try = b - lr * grad_b;
      const double loss_try = logistic_loss(x, y, w_try, b_try, opts.reg);
      if (loss_try <= loss) {
        w = w_try;
        b = b_try;
        loss = loss_try;
      } else {
        lr *= 0.5;
      }
      history.push_back(loss);
    }
    model.weights.row(c) = w.transpose();
    model.bias[c] = b;
  }
  return model;
}

double classify_accuracy(const ClassifierModel& model, const EmbeddingTable& table,
                         const LabelTable& labels, const std::vector<std::string>& test_ids) {
  if (test_ids.empty()) throw EvalError("empty test set");
  require_shape(model.weights.cols() == table.dim(), "classifier was trained on dim " +
                                                         std::to_string(model.weights.cols()) +
                                                         ", table has " + std::to_string(table.dim()));
  const auto index = labels.index();
  Index hits = 0;
  for (const auto& id : test_ids) {
    const Vector s = model.scores(table.row(row_of(table, id)).transpose());
    Index best = 0;
    s.maxCoeff(&best);
    const auto& ls = labels_of(labels, index, id);
    if (std::find(ls.begin(), ls.end(), model.classes[static_cast<std::size_t>(best)]) != ls.end()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test_ids.size());
}

// ---------------------------------------------------------------------------

double abs_cosine(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) {
  const double denom = x.norm() * y.norm();
  if (denom == 0.0) return 0.0;
  return std::min(1.0, std::abs(x.dot(y)) / denom);
}

SimilarityHistogram similarity_histogram(const EmbeddingTable& table, Index n_pairs, Index bins,
                                         Rng& rng) {
  if (n_pairs < 1) throw EvalError("need at least one pair");
  if (bins < 1) throw EvalError("need at least one bin");
  if (table.size() < 2) throw EvalError("need at least two rows");

  Vector norms(table.size());
  for (Index i = 0; i < table.size(); ++i) norms[i] = table.row(i).norm();

  SimilarityHistogram h;
  h.edges = Vector::LinSpaced(bins + 1, 0.0, 1.0);
  h.mass = Vector::Zero(bins);
  std::uniform_int_distribution<Index> first(0, table.size() - 1), second(0, table.size() - 2);
  double sum = 0.0, sum_sq = 0.0;
  for (Index p = 0; p < n_pairs; ++p) {
    const Index i = first(rng);
    Index j = second(rng);
    if (j >= i) ++j;
    if (norms[i] == 0.0 || norms[j] == 0.0) {
      ++h.skipped;
      continue;
    }
    const double c = std::min(1.0, std::abs(table.row(i).dot(table.row(j))) / (norms[i] * norms[j]));
    const Index bin = std::min<Index>(bins - 1, static_cast<Index>(c * static_cast<double>(bins)));
    h.mass[bin] += 1.0;
    sum += c;
    sum_sq += c * c;
    ++h.pairs;
  }
  if (h.pairs == 0) throw EvalError("every sampled pair touched a zero-norm row");
  const double n = static_cast<double>(h.pairs);
  h.mass /= n;
  h.mean = sum / n;
  h.variance = std::max(0.0, sum_sq / n - h.mean * h.mean);
  return h;
}

ClusterRatio cluster_ratio(const EmbeddingTable& table, const LabelTable& labels) {
  std::map<std::string, std::vector<Index>> members;
  const auto index = labels.index();
  for (Index i = 0; i < table.size(); ++i) {
    auto it = index.find(table.ids()[static_cast<std::size_t>(i)]);
    if (it == index.end()) continue;
    members[labels.labels[static_cast<std::size_t>(it->second)].front()].push_back(i);
  }
  std::vector<Index> row_class(static_cast<std::size_t>(table.size()), -1);
  ClusterRatio out;
  for (const auto& [cls, rows] : members) {
    if (rows.size() < 2) continue;
    Vector centroid = Vector::Zero(table.dim());
    for (Index r : rows) centroid += table.row(r).transpose();
    centroid /= static_cast<double>(rows.size());
    double within = 0.0;
    for (Index r : rows) within += (table.row(r).transpose() - centroid).norm();
    within /= static_cast<double>(rows.size());
    out.max_within = std::max(out.max_within, within);
    for (Index r : rows) row_class[static_cast<std::size_t>(r)] = out.classes;
    ++out.classes;
  }
  if (out.classes < 2) throw EvalError("cluster ratio needs at least two classes with two members");

  double best_sq = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < table.size(); ++i) {
    const Index ci = row_class[static_cast<std::size_t>(i)];
    if (ci < 0) continue;
    for (Index j = i + 1; j < table.size(); ++j) {
      const Index cj = row_class[static_cast<std::size_t>(j)];
      if (cj < 0 || cj == ci) continue;
      best_sq = std::min(best_sq, (table.row(i) - table.row(j)).squaredNorm());
    }
  }
  out.min_between = std::sqrt(best_sq);
  if (out.min_between == 0.0) {
    out.ratio = std::numeric_limits<double>::infinity();
    out.diagnostic = "two classes share a point: between-cluster distance is 0";
  } else {
    out.ratio = out.max_within / out.min_between;
  }
  return out;
}

RecallResult hit_recall(const EmbeddingTable& queries, const EmbeddingTable& candidates,
                        const std::vector<RetrievalUser>& users,
                        const std::unordered_map<std::string, std::string>& attribute_of, Index k) {
  if (k < 1) throw EvalError("K must be at least 1");
  require_shape(queries.dim() == candidates.dim(), "query and candidate tables differ in dim");
  const RowMatrix unit = normalize_rows(candidates.values());

  RecallResult out;
  std::vector<std::pair<double, Index>> scored;
  for (const auto& user : users) {
    std::set<std::string> retrieved;
    for (const auto& trigger : user.triggers) {
      const auto q = queries.find(trigger);
      if (!q) {
        ++out.skipped_triggers;
        continue;
      }
      Vector qv = queries.row(*q).transpose();
      const double qn = qv.norm();
      if (qn > 0.0) qv /= qn;
      const Vector sims = unit * qv;
      scored.clear();
      for (Index c = 0; c < candidates.size(); ++c)
        if (candidates.ids()[static_cast<std::size_t>(c)] != trigger) scored.emplace_back(sims[c], c);
      const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
      std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                        [](const auto& a, const auto& b) {
                          return a.first != b.first ? a.first > b.first : a.second < b.second;
                        });
      for (std::size_t r = 0; r < take; ++r) {
        auto it = attribute_of.find(candidates.ids()[static_cast<std::size_t>(scored[r].second)]);
        if (it != attribute_of.end()) retrieved.insert(it->second);
      }
    }
    for (const auto& a : user.truth)
      if (retrieved.count(a)) ++out.hits;
    out.total += static_cast<Index>(user.truth.size());
  }
  if (out.total == 0) throw EvalError("no ground-truth attributes to recall");
  out.recall = static_cast<double>(out.hits) / static_cast<double>(out.total);
  return out;
}

RowMatrix gaussian_projection_matrix(Index source_dim, Index target_dim, Rng& rng) {
  if (source_dim < 1 || target_dim < 1) throw ConfigError("projection dimensions must be positive");
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(target_dim)));
  RowMatrix p(source_dim, target_dim);
  for (Index r = 0; r < source_dim; ++r)
    for (Index c = 0; c < target_dim; ++c) p(r, c) = normal(rng);
  return p;
}

EmbeddingTable project(const EmbeddingTable& table, const RowMatrix& projection) {
  require_shape(projection.rows() == table.dim(), "projection expects dim " +
                                                      std::to_string(projection.rows()) + ", table has " +
                                                      std::to_string(table.dim()));
  RowMatrix out = table.values() * projection;
  return EmbeddingTable(table.ids(), std::move(out));
}

EmbeddingTable random_project(const EmbeddingTable& table, Index target_dim, Rng& rng) {
  return project(table, gaussian_projection_matrix(table.dim(), target_dim, rng));
}

EmbeddingTable concat_tables(const EmbeddingTable& a, const EmbeddingTable& b) {
  const AlignedTables al = align(a, b, AlignPolicy::Intersect);
  RowMatrix m(al.kg.size(), a.dim() + b.dim());
  m << al.kg.values(), al.bg.values();
  return EmbeddingTable(al.kg.ids(), std::move(m));
}

}  // namespace bem
