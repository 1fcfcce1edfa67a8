#pragma once

#include "sdvg/core.hpp"

#include <cstdint>
#include <vector>

namespace sdvg {

enum class CacheOwner { Drafter, Target };

struct KVEntry {
  int block_index = 0;
  Producer producer = Producer::Draft;
  std::uint64_t digest = 0;
  LatentBlock payload;

  bool operator==(const KVEntry& other) const {
    return block_index == other.block_index && producer == other.producer &&
           digest == other.digest;
  }
};

// Append-only commit log of the blocks a generator conditions on.
class KVCache {
 public:
  explicit KVCache(CacheOwner owner) : owner_(owner) {}

  // Event-sourcing reconstruction; every entry goes through commit().
  static KVCache replay(CacheOwner owner, const std::vector<KVEntry>& entries);

  // Throws Error(Contiguity) unless block.block_index == size().
  void commit(const LatentBlock& block);

  CacheOwner owner() const { return owner_; }
  const std::vector<KVEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const KVEntry& back() const { return entries_.back(); }

  // Digest of the whole log; the conditioning key used by synthetic generators.
  std::uint64_t context_digest() const;

  // Recomputes each payload digest and compares with the stored one.
  bool verify() const;

  bool operator==(const KVCache& other) const {
    return owner_ == other.owner_ && entries_ == other.entries_;
  }

 private:
  CacheOwner owner_;
  std::vector<KVEntry> entries_;
};

// Covers the payload, block index and producer.
std::uint64_t content_digest(const LatentBlock& block);

// Temporal state of a causal decoder.  Decoders keep all of their cross-block
// state here so it can be captured and restored around draft scoring.
struct DecoderState {
  int frame_size = 0;
  int next_block = 0;
  bool warmed_up = false;
  Frame last_frame;

  std::uint64_t digest() const;
  bool operator==(const DecoderState&) const = default;
};

class DecodeCacheSnapshot {
 public:
  int block_index() const { return block_index_; }
  std::uint64_t digest() const { return digest_; }
  const DecoderState& state() const { return state_; }

 private:
  friend DecodeCacheSnapshot decode_snapshot(const DecoderState& state);
  DecoderState state_;
  int block_index_ = 0;
  std::uint64_t digest_ = 0;
};

DecodeCacheSnapshot decode_snapshot(const DecoderState& state);

// Throws Error(Restore) when the snapshot came from a decoder with a different
// frame geometry.
void decode_restore(DecoderState& state, const DecodeCacheSnapshot& snapshot);

}  // namespace sdvg
