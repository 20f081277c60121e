#include "bem/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "bem/config.hpp"
#include "bem/dataio.hpp"
#include "bem/evalkit.hpp"
#include "bem/synthgen.hpp"
#include "bem/trainer.hpp"

namespace bem {

namespace fs = std::filesystem;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return kExitUsage;
    case ErrorKind::Data: return kExitData;
    case ErrorKind::Numerical: return kExitNumerical;
  }
  return kExitData;
}

// ---------------------------------------------------------------------------
// Manifests

void Manifest::set(std::string key, std::string value) {
  for (auto& [k, v] : entries)
    if (k == key) {
      v = std::move(value);
      return;
    }
  entries.emplace_back(std::move(key), std::move(value));
}

std::optional<std::string> Manifest::get(const std::string& key) const {
  for (const auto& [k, v] : entries)
    if (k == key) return v;
  return std::nullopt;
}

std::vector<std::string> Manifest::args() const {
  std::vector<std::string> out;
  for (std::size_t i = 0;; ++i) {
    auto v = get("arg." + std::to_string(i));
    if (!v) break;
    out.push_back(*v);
  }
  return out;
}

std::vector<ManifestOutput> Manifest::outputs() const {
  std::vector<ManifestOutput> out;
  for (const auto& [k, v] : entries) {
    if (k.rfind("output.", 0) != 0 || (k.size() > 6 && k.compare(k.size() - 6, 6, ".crc32") == 0)) continue;
    const std::string name = k.substr(7);
    out.push_back({name, v, get(k + ".crc32").value_or("")});
  }
  return out;
}

std::string format_manifest(const Manifest& m) {
  std::string s = "# bem run manifest\n";
  for (const auto& [k, v] : m.entries) s += k + " = " + v + "\n";
  return s;
}

Manifest parse_manifest(std::string_view text) {
  Manifest m;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string_view::npos)
      throw ParseError("manifest line " + std::to_string(line_no) + " is not 'key = value'");
    m.entries.emplace_back(std::string(line.substr(0, eq)), std::string(line.substr(eq + 3)));
  }
  return m;
}

std::string file_crc32(const fs::path& path) {
  const std::string bytes = read_file(path);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(crc32(bytes.data(), bytes.size())));
  return buf;
}

namespace {

struct UsageError : Error {
  explicit UsageError(const std::string& w) : Error(ErrorKind::Usage, w) {}
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string fmt(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, p);
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

class ManifestWriter {
 public:
  ManifestWriter(std::string command, const std::vector<std::string>& args, std::uint64_t seed) {
    m_.set("command", std::move(command));
    m_.set("tool_version", kToolVersion);
    m_.set("wall_clock", utc_now());
    m_.set("cwd", fs::current_path().string());
    m_.set("seed", std::to_string(seed));
    for (std::size_t i = 0; i < args.size(); ++i) m_.set("arg." + std::to_string(i), args[i]);
  }
  void input(const std::string& name, const fs::path& p) { m_.set("input." + name, p.string()); }
  void output(const std::string& name, const fs::path& p) {
    m_.set("output." + name, p.string());
    m_.set("output." + name + ".crc32", file_crc32(p));
  }
  void config(const TrainConfig& cfg) {
    const auto kv = parse_manifest(to_key_values(cfg));
    for (const auto& [k, v] : kv.entries) m_.set("config." + k, v);
  }
  void value(const std::string& key, const std::string& v) { m_.set(key, v); }
  void write(const fs::path& p) { write_file_atomic(p, format_manifest(m_)); }

 private:
  Manifest m_;
};

void refuse_overwrite_of_inputs(const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  for (const auto& o : outputs)
    for (const auto& i : inputs)
      if (fs::weakly_canonical(o) == fs::weakly_canonical(i))
        throw UsageError("output " + o.string() + " would overwrite input " + i.string());
}

fs::path sidecar(const fs::path& p, const std::string& suffix) {
  fs::path out = p;
  out += suffix;
  return out;
}

// Hyperparameter flags shared by train and sweep. Only flags given on the
// command line override the config file, which overrides the defaults.
struct HyperFlags {
  std::string config_path;
  std::map<std::string, CLI::Option*> options;
  std::map<std::string, std::string> storage;

  void add(CLI::App* app) {
    const std::vector<std::pair<std::string, std::string>> flags = {
        {"--lambda1", "lambda1"},    {"--lambda2", "lambda2"},
        {"--lr", "learning_rate"},   {"--nB,--batch-size", "batch_size"},
        {"--nh,--hidden", "hidden_dim"}, {"--epochs", "epochs"},
        {"--bootstrap", "bootstrap_replicates"}, {"--n-iter", "n_iter"},
        {"--seed", "seed"},          {"--normalize", "normalize_inputs"},
        {"--edge", "edge"}};
    for (const auto& [flag, key] : flags) {
      storage[key];
      options[key] = app->add_option(flag, storage[key], "sets " + key);
    }
    options["edge"]->check(CLI::IsMember({"translation", "inner", "identity"}));
    options["normalize_inputs"]->check(CLI::IsMember({"true", "false", "1", "0"}));
    app->add_option("--config", config_path, "file of 'key = value' lines")->check(CLI::ExistingFile);
  }

  TrainConfig resolve() const {
    TrainConfig cfg;
    if (!config_path.empty()) cfg = parse_key_values(read_file(config_path));
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) apply_key_value(cfg, key, storage.at(key));
    return cfg;
  }
};

std::string steps_tsv(const TrainReport& report) {
  std::string s = "step\telbo\treconstruction\tkl\n";
  for (const auto& r : report.steps)
    s += std::to_string(r.step) + "\t" + fmt(r.elbo) + "\t" + fmt(r.reconstruction) + "\t" + fmt(r.kl) + "\n";
  return s;
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(v));
  return buf;
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = s.find(sep, start);
    std::string item = s.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (!item.empty()) out.push_back(item);
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

std::vector<RetrievalUser> load_users(const fs::path& path) {
  // user_id <TAB> trigger[,trigger...] <TAB> attribute[,attribute...]
  const std::string text = read_file(path);
  std::vector<RetrievalUser> users;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_list(line, '\t');
    if (fields.size() != 3)
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected 'user<TAB>triggers<TAB>attributes'");
    RetrievalUser u;
    u.triggers = split_list(fields[1], ',');
    for (auto& a : split_list(fields[2], ',')) u.truth.insert(a);
    users.push_back(std::move(u));
  }
  return users;
}

double parse_sweep_value(const std::string& param, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw UsageError("sweep value '" + v + "' for " + param + " is not numeric");
  if (param == "nB" || param == "nh") {
    if (out != std::floor(out)) throw UsageError("sweep value '" + v + "' for " + param + " is not an integer");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

struct SynthArgs {
  SynthSpec spec;
  std::string out;
  bool force = false;
};

int cmd_synth(const SynthArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  const fs::path dir = a.out;
  if (fs::exists(dir) && !a.force) {
    if (!fs::is_directory(dir) || !fs::is_empty(dir))
      throw ConfigError("output directory " + dir.string() + " exists; pass --force to overwrite");
  }
  const SynthTruth truth = generate(a.spec);
  write_synth(dir, truth);
  ManifestWriter m("synth", args, a.spec.seed);
  m.value("synth.n", std::to_string(a.spec.n));
  m.value("synth.d_w", std::to_string(a.spec.d_w));
  m.value("synth.d_z", std::to_string(a.spec.d_z));
  m.value("synth.n_clusters", std::to_string(a.spec.n_clusters));
  m.value("synth.delta_scale", fmt(a.spec.delta_scale));
  m.value("synth.noise_scale", fmt(a.spec.noise_scale));
  m.value("synth.signal_scale", fmt(a.spec.signal_scale));
  m.value("synth.cluster_spread", fmt(a.spec.cluster_spread));
  m.value("synth.true_hidden_dim", std::to_string(a.spec.true_hidden_dim));
  m.output("kg", dir / kSynthKgFile);
  m.output("bg", dir / kSynthBgFile);
  m.output("labels", dir / kSynthLabelFile);
  m.output("truth", dir / kSynthTruthFile);
  m.write(dir / "manifest.txt");
  out << "wrote " << truth.w.size() << " entities to " << dir.string() << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string kg, bg, out, mode = "p";
  HyperFlags hyper;
};

TrainConfig train_config(const TrainArgs& a) {
  TrainConfig cfg = a.hyper.resolve();
  if (a.mode == "i") {
    cfg.model = ModelKind::Independent;
    cfg.edge.kind = EdgeKind::Identity;
  } else {
    cfg.model = ModelKind::Pairwise;
  }
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  const TrainConfig cfg = train_config(a);
  const fs::path model_path = a.out;
  const fs::path steps_path = sidecar(model_path, ".steps.tsv");
  const fs::path manifest_path = sidecar(model_path, ".manifest.txt");
  refuse_overwrite_of_inputs({a.kg, a.bg}, {model_path, steps_path, manifest_path});

  const EmbeddingTable kg = load_table(a.kg), bg = load_table(a.bg);
  const TrainedModel model = train(kg, bg, cfg);
  save_model(model_path, model.f, model.h, cfg);
  write_file_atomic(steps_path, steps_tsv(model.report));

  ManifestWriter m("train", args, cfg.seed);
  m.config(cfg);
  m.input("kg", a.kg);
  m.input("bg", a.bg);
  m.value("result.steps", std::to_string(model.report.steps.size()));
  m.value("result.checksum", hex32(model.report.checksum));
  m.output("model", model_path);
  m.output("steps", steps_path);
  m.write(manifest_path);

  const auto& last = model.report.steps.back();
  out << "trained " << to_string(cfg.model) << " model (edge " << to_string(cfg.edge.kind) << ") for "
      << model.report.steps.size() << " steps; final ELBO " << fmt(last.elbo) << "; checksum "
      << hex32(model.report.checksum) << "\n";
  return kExitOk;
}

struct RefineArgs {
  std::string kg, bg, model, out;
};

int cmd_refine(const RefineArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  const fs::path dir = a.out;
  const fs::path kg_out = dir / "kg_refined.tsv", bg_out = dir / "bg_refined.tsv";
  refuse_overwrite_of_inputs({a.kg, a.bg, a.model}, {kg_out, bg_out, dir / "manifest.txt"});
  const ModelBundle bundle = load_model(a.model);
  const EmbeddingTable kg = load_table(a.kg), bg = load_table(a.bg);
  const RefinedTables r = refine(kg, bg, bundle.f, bundle.h, bundle.config.normalize_inputs);
  fs::create_directories(dir);
  write_table(kg_out, r.kg);
  write_table(bg_out, r.bg);

  ManifestWriter m("refine", args, bundle.config.seed);
  m.config(bundle.config);
  m.input("kg", a.kg);
  m.input("bg", a.bg);
  m.input("model", a.model);
  m.output("kg_refined", kg_out);
  m.output("bg_refined", bg_out);
  m.write(dir / "manifest.txt");
  out << "refined " << r.kg.size() << " entities into " << dir.string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string table, table2, labels, task, users, out, json;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  int splits = 1;
  Index project_dim = 0;
  int n_proj = 5;
  Index pairs = 100000;
  Index bins = 20;
  Index k = 10;
};

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& v) {
  MeanSe r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return r;
}

double classify_once(const EmbeddingTable& table, const LabelTable& labels, double fraction,
                     std::uint64_t split_seed) {
  const EvalSplit split = make_split(table, labels, fraction, split_seed);
  const ClassifierModel model = train_classifier(table, labels, split);
  return classify_accuracy(model, table, labels, split.test);
}

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  std::vector<fs::path> inputs{a.table};
  if (!a.table2.empty()) inputs.push_back(a.table2);
  if (!a.labels.empty()) inputs.push_back(a.labels);
  if (!a.users.empty()) inputs.push_back(a.users);
  std::vector<fs::path> outputs;
  if (!a.out.empty()) outputs.insert(outputs.end(), {a.out, sidecar(a.out, ".manifest.txt")});
  if (!a.json.empty()) outputs.push_back(a.json);
  refuse_overwrite_of_inputs(inputs, outputs);

  const bool needs_labels = a.task != "histogram";
  if (needs_labels && a.labels.empty()) throw UsageError("--labels is required for task " + a.task);
  if (a.task == "recall" && a.users.empty()) throw UsageError("--users is required for task recall");
  if (a.splits < 1 || a.n_proj < 1) throw UsageError("--splits and --n-proj must be at least 1");

  EmbeddingTable table = load_table(a.table);
  std::optional<EmbeddingTable> table2;
  if (!a.table2.empty()) table2 = load_table(a.table2);
  LabelTable labels;
  if (!a.labels.empty()) labels = load_labels(a.labels);
  Rng rng = make_stream(a.seed, "eval");

  std::ostringstream report;
  nlohmann::json js;
  js["task"] = a.task;
  js["table"] = a.table;
  report << "task: " << a.task << "\n";

  if (a.task == "classify") {
    EmbeddingTable subject = table2 ? concat_tables(table, *table2) : table;
    report << "table: " << a.table << (table2 ? " + " + a.table2 + " (concatenated)" : std::string()) << "\n"
           << "dim: " << subject.dim() << "\n";
    std::vector<double> accs;
    const int n_proj = a.project_dim > 0 ? a.n_proj : 1;
    for (int p = 0; p < n_proj; ++p) {
      const EmbeddingTable t = a.project_dim > 0 ? random_project(subject, a.project_dim, rng) : subject;
      for (int s = 0; s < a.splits; ++s) accs.push_back(classify_once(t, labels, a.train_fraction, a.seed + s));
    }
    const MeanSe m = mean_se(accs);
    if (a.project_dim > 0)
      report << "projected to " << a.project_dim << " dims, " << n_proj << " projections\n";
    report << "runs: " << accs.size() << "\n"
           << "accuracy: " << fixed(m.mean, 4) << " (se " << fixed(m.se, 4) << ")\n";
    js["dim"] = subject.dim();
    js["project_dim"] = a.project_dim;
    js["runs"] = accs;
    js["accuracy"] = m.mean;
    js["stderr"] = m.se;
  } else if (a.task == "histogram") {
    const SimilarityHistogram h = similarity_histogram(table, a.pairs, a.bins, rng);
    report << "pairs: " << h.pairs << " (skipped " << h.skipped << ")\n"
           << "mean: " << fixed(h.mean, 6) << "\nvariance: " << fixed(h.variance, 6) << "\n"
           << "bin_lo\tbin_hi\tmass\n";
    for (Index b = 0; b < h.mass.size(); ++b)
      report << fixed(h.edges[b], 3) << "\t" << fixed(h.edges[b + 1], 3) << "\t" << fmt(h.mass[b]) << "\n";
    js["pairs"] = h.pairs;
    js["skipped"] = h.skipped;
    js["mean"] = h.mean;
    js["variance"] = h.variance;
    js["edges"] = std::vector<double>(h.edges.data(), h.edges.data() + h.edges.size());
    js["mass"] = std::vector<double>(h.mass.data(), h.mass.data() + h.mass.size());
  } else if (a.task == "cluster-ratio") {
    const ClusterRatio c = cluster_ratio(table, labels);
    report << "classes: " << c.classes << "\nmax_within: " << fmt(c.max_within)
           << "\nmin_between: " << fmt(c.min_between) << "\nratio: " << fmt(c.ratio) << "\n";
    if (!c.diagnostic.empty()) report << "note: " << c.diagnostic << "\n";
    js["classes"] = c.classes;
    js["max_within"] = c.max_within;
    js["min_between"] = c.min_between;
    js["ratio"] = std::isfinite(c.ratio) ? nlohmann::json(c.ratio) : nlohmann::json("inf");
  } else {  // recall
    const EmbeddingTable& candidates = table2 ? *table2 : table;
    std::unordered_map<std::string, std::string> attribute_of;
    for (std::size_t i = 0; i < labels.ids.size(); ++i)
      if (!labels.labels[i].empty()) attribute_of[labels.ids[i]] = labels.labels[i].front();
    const RecallResult r = hit_recall(table, candidates, load_users(a.users), attribute_of, a.k);
    report << "K: " << a.k << "\nhits: " << r.hits << " / " << r.total << "\nrecall: " << fixed(r.recall, 4)
           << "\nskipped_triggers: " << r.skipped_triggers << "\n";
    js["k"] = a.k;
    js["hits"] = r.hits;
    js["total"] = r.total;
    js["recall"] = r.recall;
    js["skipped_triggers"] = r.skipped_triggers;
  }

  out << report.str();
  if (!a.json.empty()) write_file_atomic(a.json, js.dump(2) + "\n");
  if (!a.out.empty()) {
    write_file_atomic(a.out, report.str());
    ManifestWriter m("eval", args, a.seed);
    for (std::size_t i = 0; i < inputs.size(); ++i) m.input(std::to_string(i), inputs[i]);
    m.output("report", a.out);
    if (!a.json.empty()) m.output("json", a.json);
    m.write(sidecar(a.out, ".manifest.txt"));
  }
  return kExitOk;
}

struct SweepArgs {
  std::string kg, bg, param, metric = "oracle-error", truth, labels, out, mode = "p";
  std::vector<std::string> values;
  HyperFlags hyper;
  bool parallel = false;
  unsigned jobs = 0;
};

struct SweepRow {
  std::string value;
  double metric = 0.0;
  double final_elbo = 0.0;
  std::uint32_t checksum = 0;
};

int cmd_sweep(const SweepArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  if (a.values.size() < 2) throw UsageError("a sweep needs at least two values");
  for (const auto& v : a.values) parse_sweep_value(a.param, v);
  if (a.metric == "oracle-error" && a.truth.empty()) throw UsageError("--truth is required for oracle-error");
  if (a.metric == "classify" && a.labels.empty()) throw UsageError("--labels is required for classify");
  std::vector<fs::path> inputs{a.kg, a.bg};
  if (!a.truth.empty()) inputs.push_back(a.truth);
  if (!a.labels.empty()) inputs.push_back(a.labels);
  if (!a.out.empty()) refuse_overwrite_of_inputs(inputs, {a.out, sidecar(a.out, ".manifest.txt")});

  TrainArgs ta;
  ta.mode = a.mode;
  ta.hyper = a.hyper;
  const TrainConfig base = train_config(ta);
  const EmbeddingTable kg = load_table(a.kg), bg = load_table(a.bg);
  std::optional<EmbeddingTable> truth;
  if (!a.truth.empty()) truth = load_table(a.truth);
  LabelTable labels;
  if (!a.labels.empty()) labels = load_labels(a.labels);

  std::vector<TrainConfig> configs;
  for (const auto& v : a.values) {
    TrainConfig cfg = base;
    apply_key_value(cfg, a.param, v);
    cfg.validate();
    configs.push_back(cfg);
  }

  std::vector<SweepRow> rows(configs.size());
  auto run_one = [&](std::size_t i) {
    const TrainConfig& cfg = configs[i];
    const TrainedModel model = train(kg, bg, cfg);
    const RefinedTables r = refine(kg, bg, model.f, model.h, cfg.normalize_inputs);
    SweepRow row;
    row.value = a.values[i];
    row.checksum = model.report.checksum;
    row.final_elbo = model.report.steps.back().elbo;
    row.metric = a.metric == "oracle-error" ? oracle_error(r.bg, *truth)
                                            : classify_once(r.bg, labels, 0.8, cfg.seed);
    rows[i] = row;
  };

  if (a.parallel && configs.size() > 1) {
    const unsigned jobs = std::max(1u, a.jobs ? a.jobs : std::thread::hardware_concurrency());
    std::mutex mu;
    std::size_t next = 0;
    std::exception_ptr failure;
    auto worker = [&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard lock(mu);
          if (next >= configs.size() || failure) return;
          i = next++;
        }
        try {
          run_one(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < std::min<std::size_t>(jobs, configs.size()); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  } else {
    for (std::size_t i = 0; i < configs.size(); ++i) run_one(i);
  }

  std::string tsv = "param\tvalue\t" + a.metric + "\tfinal_elbo\tchecksum\n";
  for (const auto& r : rows)
    tsv += a.param + "\t" + r.value + "\t" + fmt(r.metric) + "\t" + fmt(r.final_elbo) + "\t" + hex32(r.checksum) + "\n";

  // One column per value, one row per quantity.
  std::ostringstream table;
  table << std::left << std::setw(14) << a.param;
  for (const auto& r : rows) table << std::setw(12) << r.value;
  table << "\n" << std::setw(14) << a.metric;
  for (const auto& r : rows) table << std::setw(12) << fixed(r.metric, 5);
  table << "\n" << std::setw(14) << "checksum";
  for (const auto& r : rows) table << std::setw(12) << hex32(r.checksum);
  table << "\n";
  out << table.str();

  if (!a.out.empty()) {
    write_file_atomic(a.out, tsv);
    ManifestWriter m("sweep", args, base.seed);
    m.config(base);
    m.value("sweep.param", a.param);
    for (std::size_t i = 0; i < inputs.size(); ++i) m.input(std::to_string(i), inputs[i]);
    m.output("table", a.out);
    m.write(sidecar(a.out, ".manifest.txt"));
  }
  return kExitOk;
}

int cmd_replay(const std::string& manifest_path, bool verify, std::ostream& out, std::ostream& err) {
  const Manifest m = parse_manifest(read_file(manifest_path));
  std::vector<std::string> args = m.args();
  if (args.empty()) throw ParseError(manifest_path + " records no command");
  if (args.front() == "replay") throw UsageError("cannot replay a replay");
  if (args.front() == "synth" && std::find(args.begin(), args.end(), "--force") == args.end())
    args.push_back("--force");
  const auto recorded = m.outputs();

  const fs::path here = fs::current_path();
  if (auto cwd = m.get("cwd")) fs::current_path(*cwd);
  int code = kExitOk;
  try {
    code = run_cli(args, out, err);
  } catch (...) {
    fs::current_path(here);
    throw;
  }
  if (code != kExitOk) {
    fs::current_path(here);
    return code;
  }
  std::size_t mismatches = 0;
  if (verify) {
    for (const auto& o : recorded) {
      const std::string now = fs::exists(o.path) ? file_crc32(o.path) : "missing";
      if (now != o.crc32) {
        ++mismatches;
        err << "mismatch: " << o.name << " (" << o.path << ") recorded " << o.crc32 << ", now " << now << "\n";
      }
    }
  }
  fs::current_path(here);
  if (mismatches) throw ConfigError(std::to_string(mismatches) + " output(s) differ from the manifest");
  out << "replayed " << args.front() << "; " << recorded.size() << " output(s) "
      << (verify ? "identical" : "rewritten") << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian embedding refinement: KG-prior refinement of behaviour-graph embeddings", "bem"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic KG/BG pair with ground truth");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--n", synth.spec.n, "entities");
  s->add_option("--d-w", synth.spec.d_w, "KG dimension");
  s->add_option("--d-z", synth.spec.d_z, "BG dimension");
  s->add_option("--clusters", synth.spec.n_clusters, "number of clusters");
  s->add_option("--delta-scale", synth.spec.delta_scale, "std of the KG correction");
  s->add_option("--noise-scale", synth.spec.noise_scale, "std of BG observation noise");
  s->add_option("--signal-scale", synth.spec.signal_scale, "per-coordinate std of the noise-free BG");
  s->add_option("--spread", synth.spec.cluster_spread, "cluster jitter before normalising");
  s->add_option("--true-hidden", synth.spec.true_hidden_dim, "hidden width of the true projection");
  s->add_option("--seed", synth.spec.seed, "master seed");
  s->add_flag("--force", synth.force, "overwrite an existing output directory");

  TrainArgs train_args;
  auto* t = app.add_subcommand("train", "fit the projection and inference networks");
  t->add_option("--kg", train_args.kg, "KG embedding table")->required();
  t->add_option("--bg", train_args.bg, "BG embedding table")->required();
  t->add_option("--out", train_args.out, "model file")->required();
  t->add_option("--mode", train_args.mode, "p: pairwise, i: independent")->check(CLI::IsMember({"p", "i"}));
  train_args.hyper.add(t);

  RefineArgs refine_args;
  auto* r = app.add_subcommand("refine", "write refined KG and BG tables");
  r->add_option("--kg", refine_args.kg, "KG embedding table")->required();
  r->add_option("--bg", refine_args.bg, "BG embedding table")->required();
  r->add_option("--model", refine_args.model, "model file")->required();
  r->add_option("--out", refine_args.out, "output directory")->required();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "evaluate an embedding table");
  e->add_option("--table", eval.table, "embedding table")->required();
  e->add_option("--table2", eval.table2, "second table (classify: concatenation; recall: candidates)");
  e->add_option("--labels", eval.labels, "label file");
  e->add_option("--task", eval.task, "classify | histogram | cluster-ratio | recall")
      ->required()
      ->check(CLI::IsMember({"classify", "histogram", "cluster-ratio", "recall"}));
  e->add_option("--seed", eval.seed, "master seed");
  e->add_option("--train-fraction", eval.train_fraction, "classify: training share");
  e->add_option("--splits", eval.splits, "classify: number of random splits");
  e->add_option("--project-dim", eval.project_dim, "classify: random Gaussian projection dimension");
  e->add_option("--n-proj", eval.n_proj, "classify: number of projections");
  e->add_option("--pairs", eval.pairs, "histogram: sampled pairs");
  e->add_option("--bins", eval.bins, "histogram: bins over [0, 1]");
  e->add_option("--users", eval.users, "recall: user file");
  e->add_option("--k", eval.k, "recall: neighbours per trigger");
  e->add_option("--out", eval.out, "text report file");
  e->add_option("--json", eval.json, "machine-readable report file");

  SweepArgs sweep;
  auto* w = app.add_subcommand("sweep", "train once per value of one hyperparameter");
  w->add_option("--kg", sweep.kg, "KG embedding table")->required();
  w->add_option("--bg", sweep.bg, "BG embedding table")->required();
  w->add_option("--param", sweep.param, "swept parameter")
      ->required()
      ->check(CLI::IsMember({"lambda1", "lambda2", "lr", "nB", "nh", "epochs"}));
  w->add_option("--values", sweep.values, "comma-separated values")->required()->delimiter(',');
  w->add_option("--metric", sweep.metric, "oracle-error | classify")
      ->check(CLI::IsMember({"oracle-error", "classify"}));
  w->add_option("--truth", sweep.truth, "noise-free BG table (oracle-error)");
  w->add_option("--labels", sweep.labels, "label file (classify)");
  w->add_option("--mode", sweep.mode, "p: pairwise, i: independent")->check(CLI::IsMember({"p", "i"}));
  w->add_option("--out", sweep.out, "sweep table file");
  w->add_flag("--parallel", sweep.parallel, "run the values concurrently");
  w->add_option("--jobs", sweep.jobs, "threads for --parallel (default: all cores)");
  sweep.hyper.add(w);

  std::string manifest_path;
  bool no_verify = false;
  auto* p = app.add_subcommand("replay", "rerun a manifest and check its outputs");
  p->add_option("manifest", manifest_path, "manifest file")->required();
  p->add_flag("--no-verify", no_verify, "skip the checksum comparison");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "usage error: " << ex.what() << "\n";
    return kExitUsage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, args, out);
    if (t->parsed()) return cmd_train(train_args, args, out);
    if (r->parsed()) return cmd_refine(refine_args, args, out);
    if (e->parsed()) return cmd_eval(eval, args, out);
    if (w->parsed()) return cmd_sweep(sweep, args, out);
    if (p->parsed()) return cmd_replay(manifest_path, !no_verify, out, err);
  } catch (const Error& ex) {
    err << (ex.kind() == ErrorKind::Usage ? "usage error: " : "error: ") << ex.what() << "\n";
    return exit_code(ex.kind());
  } catch (const fs::filesystem_error& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitData;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitNumerical;
  }
  return kExitUsage;
}

}  // namespace bem
