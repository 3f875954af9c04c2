#include <doctest.h>

#include <algorithm>
#include <array>
#include <numeric>
#include <sstream>

#include "dsbo/dataset.hpp"
#include "dsbo/errors.hpp"

using namespace dsbo;

namespace {

SparseDataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_libsvm(in);
}

SparseDataset balanced(std::size_t pos, std::size_t neg) {
  SparseDataset d(2);
  for (std::size_t i = 0; i < pos + neg; ++i) {
    const SparseDataset::Entry e[] = {{0, static_cast<double>(i)}};
    d.add_sample(e, i < pos ? 1 : -1);
  }
  return d;
}

}  // namespace

TEST_CASE("parse a single sample") {
  const SparseDataset d = parse("+1 1:0.5 3:2.0\n");
  REQUIRE(d.size() == 1);
  CHECK(d.dimension() >= 3);
  CHECK(d.label(0) == 1);
  const auto f = d.features(0);
  REQUIRE(f.size() == 2);
  CHECK(f[0].index == 0);
  CHECK(f[0].value == 0.5);
  CHECK(f[1].index == 2);
  CHECK(f[1].value == 2.0);
}

TEST_CASE("label mapping") {
  const SparseDataset d = parse("0 2:1\n1 1:1\n");
  CHECK(d.label(0) == -1);
  CHECK(d.label(1) == 1);
  const SparseDataset e = parse("2 1:1\n4 1:1\n");
  CHECK(e.label(0) == -1);
  CHECK(e.label(1) == 1);
}

TEST_CASE("comments and blank lines") {
  const SparseDataset d = parse("# header\n\n-1 1:1\n+1 2:1 # trailing\n");
  CHECK(d.size() == 2);
}

TEST_CASE("parse errors carry line numbers") {
  auto line_of = [](const std::string& text) {
    try {
      parse(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  CHECK(line_of("1 3:abc\n") == 1);
  CHECK(line_of("1 1:1\n1 3:1 2:1\n") == 2);
  CHECK(line_of("1 1:1\n1 2:1 2:3\n") == 2);
  CHECK(line_of("1 1:1\n2 1:1\n3 1:1\n") == 3);
  CHECK(line_of("x 1:1\n") == 1);
  CHECK(line_of("1 0:1\n") == 1);
}

TEST_CASE("libsvm round trip") {
  const SparseDataset d = synthetic_binary_dataset({.samples = 50, .dimension = 20, .active = 4, .seed = 3});
  std::stringstream s;
  write_libsvm(s, d);
  const SparseDataset e = parse_libsvm(s);
  REQUIRE(e.size() == d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(e.label(i) == d.label(i));
    REQUIRE(e.features(i).size() == d.features(i).size());
    for (std::size_t j = 0; j < d.features(i).size(); ++j) {
      CHECK(e.features(i)[j].index == d.features(i)[j].index);
      CHECK(e.features(i)[j].value == d.features(i)[j].value);
    }
  }
}

TEST_CASE("split sizes") {
  auto sizes = [](std::size_t n) {
    const DatasetSplit s = split_dataset(balanced(n / 2, n - n / 2), 1);
    return std::array<std::size_t, 3>{s.test.size(), s.train.size(), s.validation.size()};
  };
  CHECK(sizes(100) == std::array<std::size_t, 3>{10, 63, 27});
  CHECK(sizes(10) == std::array<std::size_t, 3>{1, 6, 3});

  const SparseDataset d = balanced(30, 70);
  const DatasetSplit a = split_dataset(d, 9);
  const DatasetSplit b = split_dataset(d, 9);
  for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train.features(i)[0].value == b.train.features(i)[0].value);
}

TEST_CASE("partition keeps the ratio at or below target") {
  // 400 samples over 4 shards of 100, each about half positive
  const SparseDataset d = balanced(200, 200);
  const Partition p = partition_heterogeneous(d, {{0.1, 0.25, 0.5, 0.45}, 5});
  REQUIRE(p.shards.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& r = p.report[k];
    CHECK(r.positives == p.shards[k].count_label(1));
    CHECK(r.negatives == p.shards[k].count_label(-1));
    CHECK(r.positives >= 1);
    CHECK(r.negatives >= 1);
    CHECK(r.deviation_samples() <= 1.0);
  }
}

TEST_CASE("partition of a 50/50 shard to 0.1") {
  const Partition p = partition_heterogeneous(balanced(50, 50), {{0.1}, 0});
  CHECK(p.report[0].positives == 5);
  CHECK(p.report[0].negatives == 50);
  CHECK(p.report[0].dropped == 45);
}

TEST_CASE("balanced target drops nothing") {
  const Partition p = partition_heterogeneous(balanced(50, 50), {{0.5}, 0});
  CHECK(p.report[0].dropped == 0);
}

TEST_CASE("partition error names the worker") {
  SparseDataset only_neg = balanced(0, 40);
  try {
    partition_heterogeneous(only_neg, {{0.3, 0.3}, 0});
    FAIL("expected PartitionError");
  } catch (const PartitionError& e) {
    CHECK(e.worker() == 0);
  }
}

TEST_CASE("even sharding covers every sample once") {
  const SparseDataset d = balanced(13, 20);
  const auto shards = shard_evenly(d, 4, 2);
  std::vector<double> seen;
  for (const auto& s : shards) {
    CHECK((s.size() == 8 || s.size() == 9));
    for (std::size_t i = 0; i < s.size(); ++i) seen.push_back(s.features(i)[0].value);
  }
  std::sort(seen.begin(), seen.end());
  std::vector<double> want(33);
  std::iota(want.begin(), want.end(), 0.0);
  CHECK(seen == want);
}

TEST_CASE("synthetic dataset shape") {
  const SparseDataset d = synthetic_binary_dataset({});
  CHECK(d.size() == 8000);
  CHECK(d.dimension() == 123);
  const double pos = static_cast<double>(d.count_label(1)) / d.size();
  CHECK(pos == doctest::Approx(0.5).epsilon(0.05));
}
