#include "support.hpp"

#include "uniot/memory.hpp"

#include <vector>

using namespace uniot;
using memory::MemoryQueue;
using uniot::testing::basis_rows;
using uniot::testing::unit_rows;

namespace {

FeatureMatrix row_of(Index dim, Index hot) {
  FeatureMatrix m = FeatureMatrix::Zero(1, dim);
  m(0, hot) = 1.0;
  return m;
}

std::vector<std::int64_t> iota_ids(std::int64_t start, Index n) {
  std::vector<std::int64_t> ids;
  for (Index i = 0; i < n; ++i) ids.push_back(start + i);
  return ids;
}

}  // namespace

TEST_SUITE("memory") {
  TEST_CASE("enqueue evicts the oldest rows first") {
    MemoryQueue q(4, 5);
    const FeatureMatrix abc = basis_rows(3, 5);
    q.enqueue(abc, iota_ids(0, 3));
    FeatureMatrix de(2, 5);
    de << row_of(5, 3), row_of(5, 4);
    q.enqueue(de, iota_ids(3, 2));
    CHECK(q.size() == 4);
    const FeatureMatrix f = q.features();
    CHECK(f.row(0) == row_of(5, 1).row(0));
    CHECK(f.row(1) == row_of(5, 2).row(0));
    CHECK(f.row(2) == row_of(5, 3).row(0));
    CHECK(f.row(3) == row_of(5, 4).row(0));
    CHECK(q.ids() == std::vector<std::int64_t>{1, 2, 3, 4});
  }

  TEST_CASE("enqueue of an empty batch is a no-op") {
    MemoryQueue q(3, 2);
    q.enqueue(basis_rows(2, 2), iota_ids(0, 2));
    const FeatureMatrix before = q.features();
    q.enqueue(FeatureMatrix(0, 2), {});
    CHECK(q.size() == 2);
    CHECK(q.features() == before);
  }

  TEST_CASE("oversized batch keeps its last rows") {
    Rng rng(1);
    MemoryQueue q(3, 4);
    const FeatureMatrix big = unit_rows(7, 4, rng);
    q.enqueue(big, iota_ids(10, 7));
    CHECK(q.size() == 3);
    CHECK(q.features() == big.bottomRows(3));
    CHECK(q.ids() == std::vector<std::int64_t>{14, 15, 16});
  }

  TEST_CASE("enqueue rejects non-unit rows and mismatched ids") {
    MemoryQueue q(3, 2);
    FeatureMatrix bad(1, 2);
    bad << 1.0, 1.0;
    CHECK_THROWS_AS(q.enqueue(bad, iota_ids(0, 1)), std::invalid_argument);
    CHECK_THROWS_AS(q.enqueue(basis_rows(2, 2), iota_ids(0, 1)), std::invalid_argument);
    CHECK_THROWS_AS(q.enqueue(basis_rows(2, 3), iota_ids(0, 2)), std::invalid_argument);
    CHECK(q.empty());
  }

  TEST_CASE("single-row enqueues keep the last min(n, c) rows in order") {
    Rng rng(2);
    for (Index cap : {1, 3, 8}) {
      MemoryQueue q(cap, 3);
      const FeatureMatrix rows = unit_rows(13, 3, rng);
      for (Index n = 1; n <= rows.rows(); ++n) {
        q.enqueue(rows.row(n - 1), iota_ids(n - 1, 1));
        const Index keep = std::min(n, cap);
        REQUIRE(q.size() == keep);
        CHECK(q.features() == rows.middleRows(n - keep, keep));
      }
    }
  }

  TEST_CASE("fill_batch stacks the batch over the queue") {
    Rng rng(3);
    MemoryQueue q(5, 3);
    const FeatureMatrix batch = unit_rows(2, 3, rng);
    const memory::FilledBatch empty = q.fill_batch(batch);
    CHECK(empty.rows == batch);
    CHECK(empty.batch_rows == 2);

    q.enqueue(unit_rows(3, 3, rng), iota_ids(0, 3));
    const memory::FilledBatch filled = q.fill_batch(batch);
    CHECK(filled.rows.rows() == 5);
    CHECK(filled.rows.topRows(2) == batch);
    CHECK(filled.rows.bottomRows(3) == q.features());
    CHECK(q.fill_batch(batch).rows == filled.rows);
  }

  TEST_CASE("nearest neighbor examples") {
    MemoryQueue q(4, 2);
    q.enqueue(basis_rows(2, 2), iota_ids(0, 2));
    Vector e1(2);
    e1 << 1.0, 0.0;
    memory::Neighbor n = q.nearest_neighbor(e1, -1);
    CHECK(n.feature == e1);
    CHECK(n.position == 0);

    Vector a(2);
    a << 0.8, 0.6;
    CHECK(q.nearest_neighbor(a, -1).feature == e1);

    MemoryQueue only(2, 2);
    only.enqueue(row_of(2, 1), iota_ids(7, 1));
    const memory::Neighbor fb = only.nearest_neighbor(a, 7);
    CHECK(fb.fallback);
    CHECK(fb.position == -1);
    CHECK(fb.feature == a);
  }

  TEST_CASE("nearest neighbor skips the excluded id and prefers the oldest tie") {
    MemoryQueue q(4, 2);
    FeatureMatrix rows(3, 2);
    rows << 1, 0, 0, 1, 0, 1;
    q.enqueue(rows, std::vector<std::int64_t>{5, 6, 7});
    Vector anchor(2);
    anchor << 1.0, 0.0;
    CHECK(q.nearest_neighbor(anchor, 5).position == 1);
  }

  TEST_CASE("nearest neighbor is at least as similar as every eligible entry") {
    Rng rng(4);
    MemoryQueue q(50, 6);
    const FeatureMatrix stored = unit_rows(50, 6, rng);
    std::vector<std::int64_t> ids;
    for (Index i = 0; i < 50; ++i) ids.push_back(i % 10);
    q.enqueue(stored, ids);
    const FeatureMatrix anchors = unit_rows(20, 6, rng);
    for (Index a = 0; a < anchors.rows(); ++a) {
      const std::int64_t exclude = a % 10;
      const Vector anchor = anchors.row(a).transpose();
      const memory::Neighbor n = q.nearest_neighbor(anchor, exclude);
      REQUIRE_FALSE(n.fallback);
      const double best = anchor.dot(n.feature);
      for (Index i = 0; i < 50; ++i) {
        if (ids[static_cast<size_t>(i)] == exclude) continue;
        CHECK(best >= anchor.dot(stored.row(i).transpose()) - 1e-15);
      }
    }
  }

  TEST_CASE("batched neighbors count fallbacks") {
    Rng rng(5);
    MemoryQueue q(4, 3);
    q.enqueue(unit_rows(1, 3, rng), iota_ids(0, 1));
    const FeatureMatrix anchors = unit_rows(3, 3, rng);
    Index fallbacks = 0;
    const FeatureMatrix n = q.nearest_neighbors(anchors, std::vector<std::int64_t>{0, 1, 0}, &fallbacks);
    CHECK(fallbacks == 2);
    CHECK(n.row(0) == anchors.row(0));
    CHECK(n.row(1) == q.features().row(0));
  }

  TEST_CASE("copies are independent snapshots") {
    Rng rng(6);
    MemoryQueue q(3, 2);
    q.enqueue(unit_rows(2, 2, rng), iota_ids(0, 2));
    const MemoryQueue snap = q;
    q.enqueue(unit_rows(2, 2, rng), iota_ids(2, 2));
    CHECK(snap.size() == 2);
    CHECK(snap.ids() == std::vector<std::int64_t>{0, 1});
  }
}
