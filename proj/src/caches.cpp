#include "sdvg/caches.hpp"

#include "sdvg/hashing.hpp"

namespace sdvg {

std::uint64_t content_digest(const LatentBlock& block) {
  return hash_combine(hash_combine(digest(block.data), static_cast<std::uint64_t>(block.block_index)),
                      block.producer == Producer::Draft ? 1 : 2);
}

KVCache KVCache::replay(CacheOwner owner, const std::vector<KVEntry>& entries) {
  KVCache cache(owner);
  for (const auto& e : entries) cache.commit(e.payload);
  return cache;
}

void KVCache::commit(const LatentBlock& block) {
  if (block.block_index != static_cast<int>(entries_.size())) {
    throw Error(ErrorKind::Contiguity,
                std::string(owner_ == CacheOwner::Drafter ? "drafter" : "target") +
                    " KV cache expects block " + std::to_string(entries_.size()) + ", got " +
                    std::to_string(block.block_index));
  }
  entries_.push_back(KVEntry{block.block_index, block.producer, content_digest(block), block});
}

std::uint64_t KVCache::context_digest() const {
  std::uint64_t h = hash_combine(0x6b76636163686500ULL, static_cast<std::uint64_t>(owner_));
  for (const auto& e : entries_) h = hash_combine(h, e.digest);
  return h;
}

bool KVCache::verify() const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.block_index != static_cast<int>(i)) return false;
    if (e.digest != content_digest(e.payload)) return false;
  }
  return true;
}

std::uint64_t DecoderState::digest() const {
  std::uint64_t h = hash_combine(static_cast<std::uint64_t>(frame_size),
                                 static_cast<std::uint64_t>(next_block));
  h = hash_combine(h, warmed_up ? 1 : 0);
  return hash_combine(h, sdvg::digest(last_frame));
}

DecodeCacheSnapshot decode_snapshot(const DecoderState& state) {
  DecodeCacheSnapshot snap;
  snap.state_ = state;
  snap.block_index_ = state.next_block;
  snap.digest_ = state.digest();
  return snap;
}

void decode_restore(DecoderState& state, const DecodeCacheSnapshot& snapshot) {
  if (state.frame_size != snapshot.state().frame_size) {
    throw Error(ErrorKind::Restore, "snapshot frame size " +
                                        std::to_string(snapshot.state().frame_size) +
                                        " does not match decoder frame size " +
                                        std::to_string(state.frame_size));
  }
  state = snapshot.state();
  if (state.digest() != snapshot.digest()) {
    throw Error(ErrorKind::Restore, "restored decoder state digest mismatch");
  }
}

}  // namespace sdvg
