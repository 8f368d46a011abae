#include <gtest/gtest.h>

#include "test_util.hpp"
#include "transpref/common.hpp"
#include "transpref/random.hpp"

using namespace transpref;

TEST(Utf8, RoundTripAndReplacement) {
  std::string s = "a\xc3\xbc\xe4\xb8\xad\xf0\x9f\x98\x80";
  auto u = utf8_decode(s);
  ASSERT_EQ(u.size(), 4u);
  EXPECT_EQ(u[1], U'ü');
  EXPECT_EQ(utf8_encode(u), s);
  EXPECT_EQ(utf8_decode("\xff")[0], U'�');
  EXPECT_EQ(utf8_decode("\xe4\xb8").back(), U'�');
}

TEST(Trim, UnicodeWhitespace) {
  EXPECT_EQ(trim("　 ab c\t\n"), "ab c");
  EXPECT_EQ(trim("   "), "");
}

TEST(Jsonl, CollectsMalformedLines) {
  testutil::TempDir dir;
  testutil::write_text(dir / "x.jsonl", "{\"a\":1}\n\nnot json\n[1,2]\n{\"b\":2}\n");
  std::vector<LineError> errs;
  auto rows = read_jsonl(dir / "x.jsonl", &errs);
  ASSERT_EQ(rows.size(), 2u);
  ASSERT_EQ(errs.size(), 2u);
  EXPECT_EQ(errs[0].line_no, 3u);
  EXPECT_EQ(errs[1].line_no, 4u);
  EXPECT_THROW(read_jsonl(dir / "missing.jsonl"), IoError);
}

TEST(Jsonl, WriteIsReadable) {
  testutil::TempDir dir;
  std::vector<json> rows = {{{"a", 1}}, {{"b", "ü"}}};
  write_jsonl(dir / "y.jsonl", rows);
  EXPECT_EQ(read_jsonl(dir / "y.jsonl"), rows);
}

TEST(PairwiseSum, PartitionIndependent) {
  std::vector<double> xs;
  for (int i = 0; i < 1000; ++i) xs.push_back(1.0 / (i + 1));
  double whole = pairwise_sum(xs);
  double naive = 0;
  for (double v : xs) naive += v;
  EXPECT_NEAR(whole, naive, 1e-12);
}

TEST(Fnv, KnownVector) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Rng, DeterministicPerSeed) {
  Rng a(5), b(5), c(6);
  for (int i = 0; i < 10; ++i) {
    auto x = a.next();
    EXPECT_EQ(x, b.next());
    EXPECT_NE(x, c.next());
  }
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(r.below(7), 7u);
  }
  std::vector<int> v{1, 2, 3, 4, 5};
  Rng(9).shuffle(v);
  std::vector<int> w{1, 2, 3, 4, 5};
  Rng(9).shuffle(w);
  EXPECT_EQ(v, w);
}

TEST(Orientation, Parse) {
  EXPECT_EQ(parse_orientation("lower_better"), Orientation::lower_better);
  EXPECT_TRUE(better(1.0, 2.0, Orientation::lower_better));
  EXPECT_THROW(parse_orientation("sideways"), Error);
}
