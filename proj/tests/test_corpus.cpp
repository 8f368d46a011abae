#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"
#include "transpref/corpus.hpp"

using namespace transpref;
using namespace transpref::corpus;

namespace {

SourceSegment seg(std::string id, std::string text, std::string lang, std::optional<double> ppl) {
  return {std::move(id), std::move(text), std::move(lang), "", std::nullopt, ppl};
}

}  // namespace

TEST(Ingest, ThreeValidLinesInOrder) {
  testutil::TempDir dir;
  testutil::write_text(dir / "c.jsonl",
                       "{\"id\":\"a\",\"text\":\"one\",\"lang\":\"en\",\"ppl\":10}\n"
                       "{\"id\":\"b\",\"text\":\"two\",\"lang\":\"en\"}\n"
                       "{\"id\":\"c\",\"text\":\"three\",\"lang\":\"en\",\"date\":\"2023-01-01\"}\n");
  auto res = ingest_segments(dir / "c.jsonl", "en");
  ASSERT_EQ(res.segments.size(), 3u);
  EXPECT_TRUE(res.rejects.empty());
  EXPECT_EQ(res.segments[0].id, "a");
  EXPECT_EQ(res.segments[2].text, "three");
  EXPECT_EQ(*res.segments[0].perplexity, 10.0);
  EXPECT_FALSE(res.segments[1].perplexity);
  EXPECT_EQ(*res.segments[2].published_after, "2023-01-01");
}

TEST(Ingest, MalformedLineBecomesReject) {
  testutil::TempDir dir;
  testutil::write_text(dir / "c.jsonl",
                       "{\"text\":\"one\",\"lang\":\"en\"}\n"
                       "{\"text\": broken\n"
                       "{\"text\":\"two\",\"lang\":\"en\"}\n");
  auto res = ingest_segments(dir / "c.jsonl", "en");
  ASSERT_EQ(res.segments.size(), 2u);
  ASSERT_EQ(res.rejects.size(), 1u);
  EXPECT_TRUE(res.rejects[0].contains("error"));
  EXPECT_EQ(res.segments[0].id, "en-1");
  EXPECT_EQ(res.segments[1].id, "en-2");
}

TEST(Ingest, EmptyFile) {
  testutil::TempDir dir;
  testutil::write_text(dir / "c.jsonl", "");
  auto res = ingest_segments(dir / "c.jsonl", "en");
  EXPECT_TRUE(res.segments.empty());
  EXPECT_TRUE(res.rejects.empty());
}

TEST(Ingest, RecordLevelValidation) {
  std::vector<json> rows = {
      {{"id", "x"}, {"text", "   "}, {"lang", "en"}},
      {{"id", "y"}, {"text", "ok"}, {"lang", "de"}},
      {{"id", "z"}, {"text", "ok"}, {"lang", "en"}, {"ppl", -1}},
      {{"id", "w"}, {"text", "ok"}, {"lang", "en"}},
      {{"id", "w"}, {"text", "dup"}, {"lang", "en"}},
  };
  auto res = ingest_segments_from_rows(rows, {}, "en");
  ASSERT_EQ(res.segments.size(), 1u);
  EXPECT_EQ(res.rejects.size(), 4u);
  for (const auto& r : res.rejects) EXPECT_TRUE(r.contains("error"));
}

TEST(Ingest, UnreadableFileIsFatal) {
  EXPECT_THROW(ingest_segments("/nonexistent/file.jsonl", "en"), IoError);
}

TEST(Ingest, SerializationRoundTripIsFixpoint) {
  testutil::TempDir dir;
  std::vector<SourceSegment> segs = {seg("a", "Grüße 中文", "de", 12.5), seg("b", "x", "de", std::nullopt)};
  segs[0].source_collection = "news";
  segs[1].published_after = "2024-01-01";
  write_segments(dir / "s.jsonl", segs);
  auto once = ingest_segments(dir / "s.jsonl", "de");
  EXPECT_EQ(once.segments, segs);
  write_segments(dir / "t.jsonl", once.segments);
  EXPECT_EQ(read_file(dir / "s.jsonl"), read_file(dir / "t.jsonl"));
}

TEST(Filter, ThresholdSemantics) {
  CorpusFilterConfig cfg;
  cfg.ppl_threshold = {{"de", 100}};
  auto out = filter_segments({seg("a", "x", "de", 50), seg("b", "y", "de", 150)}, cfg);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].id, "a");
}

TEST(Filter, HugeThresholdKeepsAll) {
  CorpusFilterConfig cfg;
  cfg.default_threshold = 1e300;
  std::vector<SourceSegment> in = {seg("a", "x", "de", 50), seg("b", "y", "fr", 1e12)};
  EXPECT_EQ(filter_segments(in, cfg), in);
}

TEST(Filter, MissingPerplexityDroppedByDefault) {
  CorpusFilterConfig cfg;
  cfg.default_threshold = 10;
  std::vector<SourceSegment> in = {seg("a", "x", "de", std::nullopt)};
  EXPECT_TRUE(filter_segments(in, cfg).empty());
  cfg.keep_missing_perplexity = true;
  EXPECT_EQ(filter_segments(in, cfg).size(), 1u);
}

TEST(Filter, MissingThresholdIsConfigError) {
  CorpusFilterConfig cfg;
  cfg.ppl_threshold = {{"de", 10}};
  EXPECT_THROW(filter_segments({seg("a", "x", "fr", 1)}, cfg), ConfigError);
}

TEST(Filter, InvalidConfig) {
  CorpusFilterConfig cfg;
  cfg.ppl_threshold = {{"de", 0}};
  EXPECT_THROW(cfg.validate(), ConfigError);
  CorpusFilterConfig c2;
  c2.min_chars = 10;
  c2.max_chars = 10;
  EXPECT_THROW(c2.validate(), ConfigError);
}

TEST(Filter, CharBoundsCountCodePoints) {
  CorpusFilterConfig cfg;
  cfg.default_threshold = 100;
  cfg.min_chars = 2;
  cfg.max_chars = 3;
  auto out = filter_segments({seg("a", "中", "zh", 1), seg("b", "中文", "zh", 1), seg("c", "中文字", "zh", 1),
                              seg("d", "中文字字", "zh", 1)},
                             cfg);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].id, "b");
  EXPECT_EQ(out[1].id, "c");
}

TEST(Filter, MatchesPredicateOracleAndProperties) {
  std::mt19937_64 rng(42);
  const std::vector<std::string> langs = {"en", "de", "zh", "ko"};
  std::uniform_real_distribution<double> u(0, 300);
  std::vector<SourceSegment> segs;
  for (int i = 0; i < 1000; ++i) {
    std::optional<double> ppl;
    if (rng() % 10 != 0) ppl = u(rng);
    segs.push_back(seg("s" + std::to_string(i), testutil::random_unicode(rng, 12) + "x", langs[rng() % 4], ppl));
  }
  for (int trial = 0; trial < 20; ++trial) {
    CorpusFilterConfig cfg;
    for (const auto& l : langs) cfg.ppl_threshold[l] = 1 + u(rng);
    cfg.keep_missing_perplexity = trial % 2;
    cfg.min_chars = rng() % 4;
    cfg.max_chars = cfg.min_chars + 1 + rng() % 12;
    auto out = filter_segments(segs, cfg);

    std::vector<SourceSegment> expect;
    for (const auto& s : segs) {
      auto n = utf8_decode(s.text).size();
      bool len_ok = n >= cfg.min_chars && n <= cfg.max_chars;
      bool ppl_ok = s.perplexity ? *s.perplexity <= cfg.ppl_threshold[s.language] : cfg.keep_missing_perplexity;
      if (len_ok && ppl_ok) expect.push_back(s);
    }
    EXPECT_EQ(out, expect);
    EXPECT_EQ(filter_segments(out, cfg), out);  // idempotent

    std::vector<SourceSegment> a(segs.begin(), segs.begin() + 400), b(segs.begin() + 400, segs.end());
    auto fa = filter_segments(a, cfg), fb = filter_segments(b, cfg);
    fa.insert(fa.end(), fb.begin(), fb.end());
    EXPECT_EQ(fa, out);  // commutes with concatenation
  }
}
