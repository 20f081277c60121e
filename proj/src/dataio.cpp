#include "bem/dataio.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace bem {

static_assert(std::endian::native == std::endian::little,
              "model files are written with native little-endian layout");

EmbeddingTable::EmbeddingTable(std::vector<std::string> ids, RowMatrix values)
    : ids_(std::move(ids)), values_(std::move(values)) {
  if (static_cast<Index>(ids_.size()) != values_.rows())
    throw ShapeError(std::to_string(ids_.size()) + " ids for " + std::to_string(values_.rows()) +
                     " rows");
  if (!values_.allFinite()) throw ParseError("embedding table contains non-finite values");
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], static_cast<Index>(i)).second)
      throw ParseError("duplicate id '" + ids_[i] + "'");
  }
}

std::optional<Index> EmbeddingTable::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

EmbeddingTable EmbeddingTable::with_values(RowMatrix values) const {
  return EmbeddingTable(ids_, std::move(values));
}

EmbeddingTable EmbeddingTable::subset(const std::vector<Index>& rows) const {
  std::vector<std::string> ids;
  ids.reserve(rows.size());
  RowMatrix values(static_cast<Index>(rows.size()), dim());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    ids.push_back(ids_[static_cast<std::size_t>(rows[r])]);
    values.row(static_cast<Index>(r)) = values_.row(rows[r]);
  }
  return EmbeddingTable(std::move(ids), std::move(values));
}

std::unordered_map<std::string, Index> LabelTable::index() const {
  std::unordered_map<std::string, Index> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.emplace(ids[i], static_cast<Index>(i));
  return out;
}

// ---------------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw ParseError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

// Splits `text` into lines, tolerating a trailing '\r'.
template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    fn(++line_no, line);
  }
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string where(std::string_view source, std::size_t line_no) {
  return std::string(source) + ":" + std::to_string(line_no);
}

}  // namespace

EmbeddingTable parse_table(std::string_view text, std::optional<Index> expected_dim,
                           std::string_view source) {
  std::optional<Index> header_dim;
  Index dim = -1;
  std::vector<std::string> ids;
  std::vector<double> values;
  std::unordered_map<std::string, std::size_t> first_line;

  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (line.empty()) return;
    if (line_no == 1 && line.starts_with("#dim=")) {
      Index d = 0;
      auto body = line.substr(5);
      auto [p, ec] = std::from_chars(body.data(), body.data() + body.size(), d);
      if (ec != std::errc{} || p != body.data() + body.size() || d < 1)
        throw ParseError(where(source, line_no) + ": malformed dimension header");
      header_dim = d;
      return;
    }
    const auto fields = split(line, '\t');
    const std::string id(fields[0]);
    if (id.empty()) throw ParseError(where(source, line_no) + ": empty id");
    const Index row_dim = static_cast<Index>(fields.size()) - 1;
    if (dim < 0) {
      dim = row_dim;
      if (dim < 1) throw ParseError(where(source, line_no) + ": row has no values");
    } else if (row_dim != dim) {
      throw ParseError(where(source, line_no) + ": row has " + std::to_string(row_dim) +
                       " values, expected " + std::to_string(dim));
    }
    if (auto [it, fresh] = first_line.emplace(id, line_no); !fresh)
      throw ParseError(where(source, line_no) + ": duplicate id '" + id + "' (first seen on line " +
                       std::to_string(it->second) + ", again on line " + std::to_string(line_no) +
                       ")");
    for (Index k = 1; k <= row_dim; ++k) {
      const auto f = fields[static_cast<std::size_t>(k)];
      double v = 0.0;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc{} || p != f.data() + f.size() || f.empty())
        throw ParseError(where(source, line_no) + ": field " + std::to_string(k + 1) + " '" +
                         std::string(f) + "' is not a number");
      if (!std::isfinite(v))
        throw ParseError(where(source, line_no) + ": field " + std::to_string(k + 1) +
                         " is not finite");
      values.push_back(v);
    }
    ids.push_back(id);
  });

  if (dim < 0) dim = header_dim.value_or(0);
  if (header_dim && *header_dim != dim)
    throw ShapeError(std::string(source) + ": header declares dim " + std::to_string(*header_dim) +
                     " but rows have " + std::to_string(dim));
  if (expected_dim && !ids.empty() && *expected_dim != dim)
    throw ShapeError(std::string(source) + ": dimension " + std::to_string(dim) + ", expected " +
                     std::to_string(*expected_dim));

  RowMatrix m = Eigen::Map<RowMatrix>(values.data(), static_cast<Index>(ids.size()), dim);
  return EmbeddingTable(std::move(ids), std::move(m));
}

EmbeddingTable load_table(const std::filesystem::path& path, std::optional<Index> expected_dim) {
  return parse_table(read_file(path), expected_dim, path.string());
}

std::string format_table(const EmbeddingTable& table) {
  std::string out = "#dim=" + std::to_string(table.dim()) + "\n";
  std::array<char, 64> buf{};
  for (Index i = 0; i < table.size(); ++i) {
    out += table.ids()[static_cast<std::size_t>(i)];
    for (Index k = 0; k < table.dim(); ++k) {
      auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), table.values()(i, k),
                                   std::chars_format::general, 17);
      out += '\t';
      out.append(buf.data(), p);
    }
    out += '\n';
  }
  return out;
}

void write_table(const std::filesystem::path& path, const EmbeddingTable& table) {
  write_file_atomic(path, format_table(table));
}

LabelTable parse_labels(std::string_view text, std::string_view source) {
  LabelTable t;
  std::unordered_map<std::string, std::size_t> first_line;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (line.empty() || line.front() == '#') return;
    const auto fields = split(line, '\t');
    if (fields.size() != 2)
      throw ParseError(where(source, line_no) + ": expected 'id<TAB>class[,class...]'");
    const std::string id(fields[0]);
    if (id.empty()) throw ParseError(where(source, line_no) + ": empty id");
    if (auto [it, fresh] = first_line.emplace(id, line_no); !fresh)
      throw ParseError(where(source, line_no) + ": duplicate id '" + id + "' (first seen on line " +
                       std::to_string(it->second) + ")");
    std::vector<std::string> classes;
    for (auto c : split(fields[1], ',')) {
      if (c.empty()) throw ParseError(where(source, line_no) + ": empty class id");
      classes.emplace_back(c);
    }
    t.ids.push_back(id);
    t.labels.push_back(std::move(classes));
  });
  return t;
}

LabelTable load_labels(const std::filesystem::path& path) {
  return parse_labels(read_file(path), path.string());
}

void write_labels(const std::filesystem::path& path, const LabelTable& labels) {
  std::string out;
  for (std::size_t i = 0; i < labels.ids.size(); ++i) {
    out += labels.ids[i];
    out += '\t';
    for (std::size_t c = 0; c < labels.labels[i].size(); ++c) {
      if (c) out += ',';
      out += labels.labels[i][c];
    }
    out += '\n';
  }
  write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------

AlignedTables align(const EmbeddingTable& kg, const EmbeddingTable& bg, AlignPolicy policy) {
  std::vector<Index> kg_rows, bg_rows;
  std::vector<std::string> only_kg, only_bg;
  for (Index i = 0; i < kg.size(); ++i) {
    const auto& id = kg.ids()[static_cast<std::size_t>(i)];
    if (auto j = bg.find(id)) {
      kg_rows.push_back(i);
      bg_rows.push_back(*j);
    } else {
      only_kg.push_back(id);
    }
  }
  for (const auto& id : bg.ids())
    if (!kg.find(id)) only_bg.push_back(id);

  if (policy == AlignPolicy::Strict && (!only_kg.empty() || !only_bg.empty())) {
    auto sample = [](const std::vector<std::string>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size() && i < 10; ++i) s += (i ? ", " : "") + v[i];
      if (v.size() > 10) s += ", ...";
      return s;
    };
    std::string msg = "id sets differ: " + std::to_string(only_kg.size()) + " KG ids missing from BG";
    if (!only_kg.empty()) msg += " [" + sample(only_kg) + "]";
    msg += ", " + std::to_string(only_bg.size()) + " BG ids missing from KG";
    if (!only_bg.empty()) msg += " [" + sample(only_bg) + "]";
    throw AlignmentError(msg);
  }
  return {kg.subset(kg_rows), bg.subset(bg_rows), static_cast<Index>(only_kg.size()),
          static_cast<Index>(only_bg.size())};
}

RowMatrix normalize_rows(const RowMatrix& m) {
  RowMatrix out = m;
  for (Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0.0) out.row(i) /= n;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::array<char, 4> kMagic{'B', 'E', 'M', '1'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ModelFileError("unexpected end of model data");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void put_net(std::string& out, const DiffNet& net) {
  put<std::uint64_t>(out, static_cast<std::uint64_t>(net.in_dim()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(net.hidden_dim()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(net.out_dim()));
  for (Index r = 0; r < net.w1().rows(); ++r)
    for (Index c = 0; c < net.w1().cols(); ++c) put<double>(out, net.w1()(r, c));
  for (Index k = 0; k < net.b1().size(); ++k) put<double>(out, net.b1()[k]);
  for (Index r = 0; r < net.w2().rows(); ++r)
    for (Index c = 0; c < net.w2().cols(); ++c) put<double>(out, net.w2()(r, c));
  for (Index k = 0; k < net.b2().size(); ++k) put<double>(out, net.b2()[k]);
}

DiffNet get_net(Reader& in, std::string_view name) {
  const auto in_dim = in.get<std::uint64_t>();
  const auto hidden = in.get<std::uint64_t>();
  const auto out_dim = in.get<std::uint64_t>();
  constexpr std::uint64_t kMaxDim = 1u << 24;
  if (in_dim == 0 || hidden == 0 || out_dim == 0 || in_dim > kMaxDim || hidden > kMaxDim ||
      out_dim > kMaxDim)
    throw ModelFileError("implausible dimensions for net " + std::string(name));
  DiffNet net(static_cast<Index>(in_dim), static_cast<Index>(hidden), static_cast<Index>(out_dim));
  auto w1 = net.w1();
  for (Index r = 0; r < w1.rows(); ++r)
    for (Index c = 0; c < w1.cols(); ++c) w1(r, c) = in.get<double>();
  auto b1 = net.b1();
  for (Index k = 0; k < b1.size(); ++k) b1[k] = in.get<double>();
  auto w2 = net.w2();
  for (Index r = 0; r < w2.rows(); ++r)
    for (Index c = 0; c < w2.cols(); ++c) w2(r, c) = in.get<double>();
  auto b2 = net.b2();
  for (Index k = 0; k < b2.size(); ++k) b2[k] = in.get<double>();
  return net;
}

}  // namespace

std::string serialize_model(const DiffNet& f, const DiffNet& h, const TrainConfig& cfg) {
  const Index d_w = f.in_dim();
  const Index d_z = f.out_dim();
  const Index d_s = posterior_scale_dim(h, d_w, d_z);
  if (cfg.scale_dim(d_z) != d_s)
    throw ModelFileError("inference net scale width " + std::to_string(d_s) +
                         " does not match the configured edge function");
  std::string header = "d_w = " + std::to_string(d_w) + "\nd_z = " + std::to_string(d_z) +
                       "\nd_s = " + std::to_string(d_s) + "\n" + to_key_values(cfg);

  std::string out(kMagic.begin(), kMagic.end());
  put<std::uint32_t>(out, kModelFormatVersion);
  put<std::uint64_t>(out, header.size());
  out += header;
  put_net(out, f);
  put_net(out, h);
  put<std::uint32_t>(out, crc32(out.data(), out.size()));
  return out;
}

ModelBundle deserialize_model(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + sizeof(std::uint32_t) * 2)
    throw ModelFileError("checksum failure: file too short");
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - sizeof(stored), sizeof(stored));
  const auto body = bytes.substr(0, bytes.size() - sizeof(stored));
  if (crc32(body.data(), body.size()) != stored)
    throw ModelFileError("checksum failure: file is truncated or corrupted");

  Reader in(body);
  if (in.take(kMagic.size()) != std::string_view(kMagic.data(), kMagic.size()))
    throw ModelFileError("bad magic, not a BEM model file");
  const auto version = in.get<std::uint32_t>();
  if (version != kModelFormatVersion)
    throw ModelFileError("unsupported format version " + std::to_string(version) + " (expected " +
                         std::to_string(kModelFormatVersion) + ")");
  const auto header_len = in.get<std::uint64_t>();
  const std::string header(in.take(static_cast<std::size_t>(header_len)));

  // Split the dimension lines off the configuration.
  Index d_w = -1, d_z = -1, d_s = -1;
  std::string cfg_text;
  std::istringstream lines(header);
  for (std::string line; std::getline(lines, line);) {
    auto read_dim = [&](std::string_view key, Index& target) {
      if (!line.starts_with(key)) return false;
      target = std::stoll(line.substr(line.find('=') + 1));
      return true;
    };
    if (read_dim("d_w =", d_w) || read_dim("d_z =", d_z) || read_dim("d_s =", d_s)) continue;
    cfg_text += line + "\n";
  }
  ModelBundle b;
  try {
    b.config = parse_key_values(cfg_text);
  } catch (const ConfigError& e) {
    throw ModelFileError(std::string("bad configuration header: ") + e.what());
  }
  b.f = get_net(in, "f");
  b.h = get_net(in, "h");
  if (!in.done()) throw ModelFileError("trailing bytes after parameters");

  if (d_w < 1 || d_z < 1 || d_s < 1) throw ModelFileError("header lacks d_w, d_z or d_s");
  if (b.f.in_dim() != d_w || b.f.out_dim() != d_z)
    throw ModelFileError("projection net shape does not match header d_w/d_z");
  if (b.h.in_dim() != d_w + d_z || b.h.out_dim() != 2 * d_w + 2 * d_s)
    throw ModelFileError("inference net shape does not match header d_w/d_z/d_s");
  if (b.config.scale_dim(d_z) != d_s)
    throw ModelFileError("header d_s does not match the configured edge function");
  if (!b.f.all_finite() || !b.h.all_finite()) throw ModelFileError("non-finite parameters");
  return b;
}

void save_model(const std::filesystem::path& path, const DiffNet& f, const DiffNet& h,
                const TrainConfig& cfg) {
  write_file_atomic(path, serialize_model(f, h, cfg));
}

ModelBundle load_model(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const ParseError&) {
    throw ModelFileError("cannot open " + path.string());
  }
  return deserialize_model(bytes);
}

}  // namespace bem
