#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "scd/embedstore.hpp"
#include "test_util.hpp"

namespace scd {
namespace {

using testing::random_store;
using testing::slurp;
using testing::TempDir;

EmbeddingStore tiny_store() {
  StoreBuilder b(3);
  b.add({1, "d1", 1924, "PR-C", "virtual", 0}, std::vector<float>{1.f, 2.f, 3.f});
  b.add({2, "d2", 1925, "PR-D", "virtual", 0}, std::vector<float>{-1.5f, 0.f, 1e-30f});
  return std::move(b).build();
}

TEST(EmbedStore, VecFileSizeIsHeaderPlusPayload) {
  TempDir dir("size");
  write_store(tiny_store(), dir / "s");
  EXPECT_EQ(std::filesystem::file_size(dir / "s.vec"), 40u);
}

TEST(EmbedStore, HeaderLayout) {
  TempDir dir("header");
  write_store(tiny_store(), dir / "s");
  const std::string bytes = slurp(dir / "s.vec");
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 4), "SCDE");
  auto u8 = [&](std::size_t i) { return static_cast<unsigned>(static_cast<unsigned char>(bytes[i])); };
  EXPECT_EQ(u8(4) | (u8(5) << 8), 1u);  // version
  EXPECT_EQ(u8(6) | (u8(7) << 8), 0u);
  EXPECT_EQ(u8(8), 3u);    // dim
  EXPECT_EQ(u8(12), 2u);   // count
  // First float 1.0f = 0x3f800000 little-endian.
  EXPECT_EQ(u8(16), 0x00u);
  EXPECT_EQ(u8(19), 0x3fu);
}

TEST(EmbedStore, MetaLinesHaveFixedKeyOrder) {
  TempDir dir("meta");
  write_store(tiny_store(), dir / "s");
  std::ifstream in(dir / "s.meta.jsonl");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, R"({"occurrence_id":1,"doc_id":"d1","year":1924,"journal":"PR-C","token":"virtual"})");
}

TEST(EmbedStore, RoundtripIsBitExact) {
  TempDir dir("roundtrip");
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto store = random_store({1990, 1990, 1991, 1995, 1995, 1995}, 7, seed);
    write_store(store, dir / "a");
    auto back = read_store(dir / "a");
    EXPECT_EQ(back, store);
    write_store(back, dir / "b");
    EXPECT_EQ(slurp(dir / "a.vec"), slurp(dir / "b.vec"));
    EXPECT_EQ(slurp(dir / "a.meta.jsonl"), slurp(dir / "b.meta.jsonl"));
  }
}

TEST(EmbedStore, EmptyStoreRoundtrips) {
  TempDir dir("empty");
  EmbeddingStore empty(4, {}, {});
  write_store(empty, dir / "e");
  EXPECT_EQ(std::filesystem::file_size(dir / "e.vec"), 16u);
  EXPECT_EQ(read_store(dir / "e"), empty);
}

TEST(EmbedStore, NanIsRejectedBeforeWriting) {
  TempDir dir("nan");
  std::vector<float> m{1.f, std::numeric_limits<float>::quiet_NaN()};
  try {
    EmbeddingStore bad(2, m, {{1, "d", 1950, "PR", "virtual", 0}});
    FAIL() << "constructor accepted NaN";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invariant_violation);
  }
  EXPECT_FALSE(std::filesystem::exists(dir / "s.vec"));
}

TEST(EmbedStore, InvariantsAreEnforced) {
  auto expect_violation = [](auto&& make) {
    try {
      make();
      ADD_FAILURE() << "no error";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::invariant_violation);
    }
  };
  expect_violation([] { EmbeddingStore(1, {1.f}, {{1, "d", 999, "PR", "v", 0}}); });
  expect_violation([] { EmbeddingStore(1, {1.f, 2.f}, {{1, "d", 1950, "PR", "v", 0}, {1, "d", 1950, "PR", "v", 1}}); });
  expect_violation([] { EmbeddingStore(1, {1.f, 2.f}, {{1, "d", 1950, "PR", "v", 0}}); });
  expect_violation([] { EmbeddingStore(1, {std::numeric_limits<float>::infinity()}, {{1, "d", 1950, "PR", "v", 0}}); });
}

TEST(EmbedStore, ReadErrors) {
  TempDir dir("errors");
  auto store = random_store({1950, 1951, 1952}, 4, 9);
  write_store(store, dir / "s");
  const std::string vec = slurp(dir / "s.vec");
  const std::string meta = slurp(dir / "s.meta.jsonl");

  auto expect_code = [&](Errc code) {
    try {
      read_store(dir / "s");
      ADD_FAILURE() << "read succeeded";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), code) << e.what();
    }
  };
  auto put = [&](const std::string& name, const std::string& bytes) {
    std::ofstream(dir / name, std::ios::binary | std::ios::trunc) << bytes;
  };

  put("s.vec", vec.substr(0, vec.size() - 1));
  expect_code(Errc::truncated_payload);

  std::string bad_magic = vec;
  bad_magic[0] = 'X';
  put("s.vec", bad_magic);
  expect_code(Errc::bad_magic);

  std::string bad_version = vec;
  bad_version[4] = 2;
  put("s.vec", bad_version);
  expect_code(Errc::unsupported_version);

  put("s.vec", vec);
  put("s.meta.jsonl", meta.substr(0, meta.rfind('\n', meta.size() - 2) + 1));
  expect_code(Errc::metadata_mismatch);

  put("s.meta.jsonl", meta + "{\"occurrence_id\": 5}\n");
  expect_code(Errc::metadata_mismatch);

  std::string broken = meta;
  broken.replace(0, 1, "[");
  put("s.meta.jsonl", broken);
  expect_code(Errc::malformed_metadata);

  std::filesystem::remove(dir / "s.meta.jsonl");
  expect_code(Errc::io_error);
}

TEST(EmbedStore, SliceByYear) {
  auto store = random_store({1924, 1924, 1924, 1925, 1925}, 2, 1);
  auto s = slice_by_year(store, 1924);
  EXPECT_EQ(s.year, 1924);
  EXPECT_EQ(s.indices, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_TRUE(slice_by_year(store, 1800).empty());
}

TEST(EmbedStore, SlicesPartitionRows) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> year(1900, 1920);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> years(60);
    for (auto& y : years) y = year(rng);
    auto store = random_store(years, 2, trial);
    std::vector<std::size_t> seen;
    for (int y : store.years()) {
      auto s = slice_by_year(store, y);
      EXPECT_TRUE(std::is_sorted(s.indices.begin(), s.indices.end()));
      seen.insert(seen.end(), s.indices.begin(), s.indices.end());
    }
    std::ranges::sort(seen);
    std::vector<std::size_t> all(store.count());
    std::iota(all.begin(), all.end(), std::size_t{0});
    EXPECT_EQ(seen, all);
  }
}

TEST(EmbedStore, FilterByJournalAndYears) {
  std::vector<int> years(15, 1950);
  std::vector<std::string> journals;
  for (int i = 0; i < 10; ++i) journals.push_back("PR-C");
  for (int i = 0; i < 5; ++i) journals.push_back("PR-D");
  auto store = random_store(years, 3, 2, 0.0, journals);

  EXPECT_EQ(filter_store(store, {}), store);

  auto only_c = filter_store(store, {.journals = std::set<std::string>{"PR-C"}});
  EXPECT_EQ(only_c.count(), 10u);
  for (std::size_t i = 0; i < only_c.count(); ++i) {
    EXPECT_EQ(only_c.record(i).row, i);
    EXPECT_EQ(only_c.record(i).journal, "PR-C");
  }
  EXPECT_EQ(filter_store(only_c, {.journals = std::set<std::string>{"PR-C"}}), only_c);

  EXPECT_TRUE(filter_store(store, {.year_range = std::pair{3000, 3001}}).empty());
  EXPECT_THROW(filter_store(store, {.year_range = std::pair{1960, 1950}}), Error);
}

TEST(EmbedStore, FilterKeepsVectorsWithTheirRecords) {
  auto store = random_store({1950, 1951, 1950, 1951}, 3, 4);
  auto y51 = filter_store(store, {.year_range = std::pair{1951, 1951}});
  ASSERT_EQ(y51.count(), 2u);
  EXPECT_EQ(y51.record(0).occurrence_id, store.record(1).occurrence_id);
  EXPECT_TRUE(std::ranges::equal(y51.row(1), store.row(3)));
}

}  // namespace
}  // namespace scd
