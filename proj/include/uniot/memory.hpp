#pragma once

#include "uniot/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace uniot::memory {

/// Batch rows stacked on top of the queue contents (oldest first).
struct FilledBatch {
  FeatureMatrix rows;
  Index batch_rows = 0;  // rows [0, batch_rows) are the batch
};

struct Neighbor {
  Vector feature;
  Index position = -1;    // queue position, 0 = oldest; -1 on fallback
  bool fallback = false;  // nothing eligible: the anchor itself was returned
};

/// Fixed-capacity FIFO of unit-norm target features tagged with sample ids.
/// Backed by a ring buffer; copying the queue yields an independent snapshot.
class MemoryQueue {
 public:
  MemoryQueue(Index capacity, Index dim);

  /// Appends rows in order, evicting the oldest beyond capacity. Rejects
  /// rows that are not unit-norm.
  void enqueue(const FeatureMatrix& batch, std::span<const std::int64_t> ids);

  FilledBatch fill_batch(const FeatureMatrix& batch) const;

  /// Most similar stored row (cosine) whose id differs from `exclude_id`;
  /// ties go to the oldest entry.
  Neighbor nearest_neighbor(const Vector& anchor, std::int64_t exclude_id) const;

  /// Row-wise nearest_neighbor for a batch of anchors.
  FeatureMatrix nearest_neighbors(const FeatureMatrix& anchors, std::span<const std::int64_t> exclude_ids,
                                  Index* fallbacks = nullptr) const;

  Index size() const { return size_; }
  Index capacity() const { return capacity_; }
  Index dim() const { return storage_.cols(); }
  bool empty() const { return size_ == 0; }

  /// Contents in queue order, oldest first.
  FeatureMatrix features() const;
  std::vector<std::int64_t> ids() const;

 private:
  Index physical(Index position) const { return (head_ + position) % capacity_; }

  Matrix storage_;
  std::vector<std::int64_t> ids_;
  Index head_ = 0;  // physical slot of the oldest entry
  Index size_ = 0;
  Index capacity_ = 0;
};

}  // namespace uniot::memory
