#include "uniot/memory.hpp"

#include <limits>
#include <stdexcept>
#include <string>

namespace uniot::memory {

MemoryQueue::MemoryQueue(Index capacity, Index dim)
    : storage_(Matrix::Zero(capacity, dim)), ids_(static_cast<size_t>(capacity), -1), capacity_(capacity) {
  if (capacity <= 0) throw std::invalid_argument("queue capacity must be positive");
  if (dim <= 0) throw std::invalid_argument("queue feature dimension must be positive");
}

void MemoryQueue::enqueue(const FeatureMatrix& batch, std::span<const std::int64_t> ids) {
  if (batch.rows() == 0) return;
  if (batch.cols() != dim()) {
    throw std::invalid_argument("enqueue: batch has dim " + std::to_string(batch.cols()) + ", queue has " +
                                std::to_string(dim()));
  }
  if (static_cast<Index>(ids.size()) != batch.rows()) throw std::invalid_argument("enqueue: one id per row");
  require_unit_rows(batch, "enqueue");

  // Only the last `capacity` rows can survive.
  const Index first = batch.rows() > capacity_ ? batch.rows() - capacity_ : 0;
  for (Index r = first; r < batch.rows(); ++r) {
    Index slot;
    if (size_ < capacity_) {
      slot = physical(size_);
      ++size_;
    } else {
      slot = head_;
      head_ = (head_ + 1) % capacity_;
    }
    storage_.row(slot) = batch.row(r);
    ids_[static_cast<size_t>(slot)] = ids[static_cast<size_t>(r)];
  }
}

FeatureMatrix MemoryQueue::features() const {
  FeatureMatrix out(size_, dim());
  for (Index p = 0; p < size_; ++p) out.row(p) = storage_.row(physical(p));
  return out;
}

std::vector<std::int64_t> MemoryQueue::ids() const {
  std::vector<std::int64_t> out(static_cast<size_t>(size_));
  for (Index p = 0; p < size_; ++p) out[static_cast<size_t>(p)] = ids_[static_cast<size_t>(physical(p))];
  return out;
}

FilledBatch MemoryQueue::fill_batch(const FeatureMatrix& batch) const {
  if (size_ > 0 && batch.cols() != dim()) throw std::invalid_argument("fill_batch: dimension mismatch");
  FilledBatch out;
  out.batch_rows = batch.rows();
  out.rows.resize(batch.rows() + size_, batch.cols());
  out.rows.topRows(batch.rows()) = batch;
  for (Index p = 0; p < size_; ++p) out.rows.row(batch.rows() + p) = storage_.row(physical(p));
  return out;
}

Neighbor MemoryQueue::nearest_neighbor(const Vector& anchor, std::int64_t exclude_id) const {
  if (anchor.size() != dim()) throw std::invalid_argument("nearest_neighbor: dimension mismatch");
  Neighbor best;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (Index p = 0; p < size_; ++p) {
    const Index slot = physical(p);
    if (ids_[static_cast<size_t>(slot)] == exclude_id) continue;
    const double sim = storage_.row(slot).dot(anchor);
    if (sim > best_sim) {  // strict: earlier (older) entries win ties
      best_sim = sim;
      best.position = p;
    }
  }
  if (best.position < 0) {
    best.feature = anchor;
    best.fallback = true;
  } else {
    best.feature = storage_.row(physical(best.position)).transpose();
  }
  return best;
}

FeatureMatrix MemoryQueue::nearest_neighbors(const FeatureMatrix& anchors, std::span<const std::int64_t> exclude_ids,
                                             Index* fallbacks) const {
  if (static_cast<Index>(exclude_ids.size()) != anchors.rows()) {
    throw std::invalid_argument("nearest_neighbors: one exclude id per anchor");
  }
  FeatureMatrix out(anchors.rows(), anchors.cols());
  Index fallback_count = 0;
  for (Index i = 0; i < anchors.rows(); ++i) {
    Neighbor nb = nearest_neighbor(anchors.row(i).transpose(), exclude_ids[static_cast<size_t>(i)]);
    fallback_count += nb.fallback ? 1 : 0;
    out.row(i) = nb.feature.transpose();
  }
  if (fallbacks != nullptr) *fallbacks = fallback_count;
  return out;
}

}  // namespace uniot::memory
