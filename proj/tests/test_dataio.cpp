#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "bem/dataio.hpp"
#include "bem/trainer.hpp"
#include "oracles.hpp"

using namespace bem;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("bem_dataio_" + std::to_string(::getpid()) + "_" +
                                         std::to_string(counter_++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  static inline int counter_ = 0;
};

// Values spanning many magnitudes, including subnormals and signed zeros.
EmbeddingTable random_table(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> size(1, 12), expo(-300, 300), pick(0, 9);
  std::uniform_real_distribution<double> mant(-1.0, 1.0);
  const Index n = size(rng), d = size(rng);
  std::vector<std::string> ids;
  RowMatrix m(n, d);
  for (Index i = 0; i < n; ++i) {
    ids.push_back("id_" + std::to_string(i) + "_" + std::to_string(rng() % 1000));
    for (Index k = 0; k < d; ++k) {
      switch (pick(rng)) {
        case 0: m(i, k) = -0.0; break;
        case 1: m(i, k) = std::numeric_limits<double>::denorm_min() * (1 + rng() % 100); break;
        case 2: m(i, k) = std::numeric_limits<double>::max() * mant(rng); break;
        default: m(i, k) = mant(rng) * std::pow(10.0, expo(rng));
      }
    }
  }
  return EmbeddingTable(ids, m);
}

bool bit_identical(const RowMatrix& a, const RowMatrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST(Table, ParsesTabSeparatedRows) {
  const auto t = parse_table("e1\t1.0\t2.0\ne2\t0.0\t1.0\n");
  EXPECT_EQ(t.size(), 2);
  EXPECT_EQ(t.dim(), 2);
  EXPECT_EQ(t.row(0)[1], 2.0);
  EXPECT_EQ(*t.find("e2"), 1);
  EXPECT_FALSE(t.find("e3").has_value());
}

TEST(Table, HeaderAndCrlfAccepted) {
  const auto t = parse_table("#dim=3\r\na\t1\t2\t3\r\n");
  EXPECT_EQ(t.dim(), 3);
  EXPECT_THROW(parse_table("#dim=2\na\t1\t2\t3\n"), ShapeError);
  EXPECT_THROW(parse_table("a\t1\t2\n", Index{3}), ShapeError);
}

TEST(Table, DuplicateIdNamesBothLines) {
  try {
    parse_table("e1\t1\t2\ne0\t0\t0\ne1\t3\t4\n", std::nullopt, "x.tsv");
    FAIL();
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("'e1'"), std::string::npos);
    EXPECT_NE(msg.find("line 1"), std::string::npos);
    EXPECT_NE(msg.find("line 3"), std::string::npos);
  }
}

TEST(Table, RejectsNonFiniteWithLocation) {
  for (const char* bad : {"a\t1\tnan\n", "a\t1\tinf\n", "a\t1\t-inf\n"}) {
    try {
      parse_table(std::string("b\t0\t0\n") + bad, std::nullopt, "f.tsv");
      FAIL() << bad;
    } catch (const ParseError& e) {
      EXPECT_NE(std::string(e.what()).find("f.tsv:2"), std::string::npos) << e.what();
    }
  }
  EXPECT_THROW(EmbeddingTable({"a"}, RowMatrix::Constant(1, 1, std::nan(""))), ParseError);
}

TEST(Table, RejectsRaggedAndMalformedRows) {
  EXPECT_THROW(parse_table("a\t1\t2\nb\t1\n"), ParseError);
  EXPECT_THROW(parse_table("a\t1\t2x\n"), ParseError);
  EXPECT_THROW(parse_table("a\t1\t\n"), ParseError);
  EXPECT_THROW(parse_table("\t1\n"), ParseError);
  EXPECT_THROW(parse_table("a\n"), ParseError);
}

TEST(Table, RoundTripPropertyOn500Tables) {
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 500; ++t) {
    const EmbeddingTable a = random_table(rng);
    const EmbeddingTable b = parse_table(format_table(a));
    ASSERT_EQ(a.ids(), b.ids());
    ASSERT_TRUE(bit_identical(a.values(), b.values())) << "table " << t;
  }
}

TEST(Table, FileRoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(1);
  const EmbeddingTable a = random_table(rng);
  write_table(dir.path() / "t.tsv", a);
  const EmbeddingTable b = load_table(dir.path() / "t.tsv");
  EXPECT_EQ(a, b);
  EXPECT_THROW(load_table(dir.path() / "missing.tsv"), ParseError);
}

TEST(Table, SubsetAndWithValues) {
  const auto t = parse_table("a\t1\nb\t2\nc\t3\n");
  const auto s = t.subset({2, 0});
  EXPECT_EQ(s.ids(), (std::vector<std::string>{"c", "a"}));
  EXPECT_EQ(s.row(0)[0], 3.0);
  EXPECT_THROW(t.with_values(RowMatrix::Zero(2, 1)), ShapeError);
}

TEST(Labels, ParseAndRoundTrip) {
  TempDir dir;
  const auto l = parse_labels("a\tx,y\nb\tz\n");
  ASSERT_EQ(l.ids.size(), 2u);
  EXPECT_EQ(l.labels[0], (std::vector<std::string>{"x", "y"}));
  write_labels(dir.path() / "l.tsv", l);
  const auto back = load_labels(dir.path() / "l.tsv");
  EXPECT_EQ(back.ids, l.ids);
  EXPECT_EQ(back.labels, l.labels);
  EXPECT_THROW(parse_labels("a\n"), ParseError);
  EXPECT_THROW(parse_labels("a\tx,,y\n"), ParseError);
  EXPECT_THROW(parse_labels("a\tx\na\ty\n"), ParseError);
}

TEST(Align, IdenticalSetsAreIdentity) {
  const auto kg = parse_table("a\t1\nb\t2\n"), bg = parse_table("a\t5\t6\nb\t7\t8\n");
  const auto al = align(kg, bg, AlignPolicy::Strict);
  EXPECT_EQ(al.kg, kg);
  EXPECT_EQ(al.bg, bg);
  EXPECT_EQ(al.dropped_kg, 0);
}

TEST(Align, IntersectReportsDrops) {
  const auto kg = parse_table("a\t1\nb\t2\nc\t3\n"), bg = parse_table("b\t1\nc\t2\nd\t3\n");
  const auto al = align(kg, bg, AlignPolicy::Intersect);
  EXPECT_EQ(al.kg.ids(), (std::vector<std::string>{"b", "c"}));
  EXPECT_EQ(al.bg.ids(), al.kg.ids());
  EXPECT_EQ(al.dropped_kg, 1);
  EXPECT_EQ(al.dropped_bg, 1);
  try {
    align(kg, bg, AlignPolicy::Strict);
    FAIL();
  } catch (const AlignmentError& e) {
    EXPECT_NE(std::string(e.what()).find("[a]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[d]"), std::string::npos);
  }
}

TEST(Align, IntersectKeepsKgOrderForShuffledBg) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::string> ids;
    for (int i = 0; i < 30; ++i) ids.push_back("n" + std::to_string(i));
    std::shuffle(ids.begin(), ids.end(), rng);
    const EmbeddingTable kg(ids, RowMatrix::Random(30, 2));
    std::vector<std::string> bg_ids(ids.begin(), ids.begin() + 20);
    bg_ids.push_back("extra");
    std::shuffle(bg_ids.begin(), bg_ids.end(), rng);
    const EmbeddingTable bg(bg_ids, RowMatrix::Random(21, 3));
    const auto al = align(kg, bg, AlignPolicy::Intersect);
    std::vector<std::string> expected;
    for (const auto& id : ids)
      if (std::find(bg_ids.begin(), bg_ids.end(), id) != bg_ids.end()) expected.push_back(id);
    EXPECT_EQ(al.kg.ids(), expected);
    for (Index i = 0; i < al.bg.size(); ++i)
      EXPECT_EQ(al.bg.row(i), bg.row(*bg.find(al.bg.ids()[static_cast<std::size_t>(i)])));
  }
}

TEST(Normalize, UnitRowsAndZeroRowsKept) {
  RowMatrix m(2, 2);
  m << 3, 4, 0, 0;
  const RowMatrix n = normalize_rows(m);
  EXPECT_DOUBLE_EQ(n(0, 0), 0.6);
  EXPECT_EQ(n.row(1).norm(), 0.0);
}

// ---------------------------------------------------------------------------

namespace {

struct RandomModel {
  DiffNet f, h;
  TrainConfig cfg;
};

RandomModel random_model(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> size(1, 6), edge(0, 2), model(0, 3);
  RandomModel m;
  m.cfg.edge.kind = static_cast<EdgeKind>(edge(rng));
  m.cfg.model = model(rng) == 0 ? ModelKind::Independent : ModelKind::Pairwise;
  m.cfg.hidden_dim = size(rng);
  m.cfg.lambda1 = std::uniform_real_distribution<double>(0.01, 10)(rng);
  m.cfg.learning_rate = std::uniform_real_distribution<double>(0, 0.1)(rng);
  m.cfg.seed = rng();
  m.cfg.normalize_inputs = rng() % 2;
  const Index d_w = size(rng), d_z = size(rng);
  m.f = oracle::random_net(d_w, m.cfg.hidden_dim, d_z, rng);
  m.h = oracle::random_net(d_w + d_z, m.cfg.hidden_dim, 2 * d_w + 2 * m.cfg.scale_dim(d_z), rng);
  return m;
}

std::string with_crc(std::string bytes) {
  bytes.resize(bytes.size() - 4);
  const std::uint32_t c = crc32(bytes.data(), bytes.size());
  char buf[4];
  std::memcpy(buf, &c, 4);
  bytes.append(buf, 4);
  return bytes;
}

}  // namespace

TEST(ModelFile, RoundTripPropertyOn500Models) {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 500; ++t) {
    const RandomModel m = random_model(rng);
    const ModelBundle b = deserialize_model(serialize_model(m.f, m.h, m.cfg));
    ASSERT_EQ(b.f, m.f);
    ASSERT_EQ(b.h, m.h);
    ASSERT_EQ(to_key_values(b.config), to_key_values(m.cfg));
  }
}

TEST(ModelFile, SaveLoadBitIdentical) {
  TempDir dir;
  std::mt19937_64 rng(3);
  const RandomModel m = random_model(rng);
  save_model(dir.path() / "m.bin", m.f, m.h, m.cfg);
  const ModelBundle b = load_model(dir.path() / "m.bin");
  EXPECT_EQ(b.f, m.f);
  EXPECT_EQ(b.h, m.h);
  EXPECT_EQ(parameter_checksum(b.f, b.h), parameter_checksum(m.f, m.h));
}

TEST(ModelFile, TruncatedFileIsChecksumError) {
  std::mt19937_64 rng(4);
  const RandomModel m = random_model(rng);
  const std::string bytes = serialize_model(m.f, m.h, m.cfg);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, bytes.size() / 2, bytes.size() - 1}) {
    try {
      deserialize_model(std::string_view(bytes).substr(0, cut));
      FAIL() << cut;
    } catch (const ModelFileError& e) {
      EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos) << e.what();
    }
  }
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(deserialize_model(flipped), ModelFileError);
}

TEST(ModelFile, HeaderCrossFieldValidation) {
  DiffNet f(2, 3, 4), h(6, 3, 2 * 2 + 2 * 4);
  TrainConfig cfg;
  const std::string bytes = serialize_model(f, h, cfg);
  const auto pos = bytes.find("d_s = 4");
  ASSERT_NE(pos, std::string::npos);
  std::string bad = bytes;
  bad[pos + 6] = '5';
  try {
    deserialize_model(with_crc(bad));
    FAIL();
  } catch (const ModelFileError& e) {
    EXPECT_NE(std::string(e.what()).find("does not match"), std::string::npos) << e.what();
  }
  // The configuration must agree with the stored d_s as well.
  cfg.edge.kind = EdgeKind::InnerProduct;
  EXPECT_THROW(serialize_model(f, h, cfg), Error);
}

TEST(ModelFile, VersionAndMagicChecked) {
  DiffNet f(1, 1, 1), h(2, 1, 4);
  const std::string bytes = serialize_model(f, h, TrainConfig{});
  std::string v2 = bytes;
  v2[4] = 2;
  try {
    deserialize_model(with_crc(v2));
    FAIL();
  } catch (const ModelFileError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_model(with_crc(magic)), ModelFileError);
}

TEST(Files, AtomicWriteReplacesWholeFile) {
  TempDir dir;
  const fs::path p = dir.path() / "x.txt";
  write_file_atomic(p, "first version, long");
  write_file_atomic(p, "second");
  EXPECT_EQ(read_file(p), "second");
  for (const auto& e : fs::directory_iterator(dir.path())) EXPECT_EQ(e.path().filename(), "x.txt");
}
