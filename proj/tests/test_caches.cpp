#include "sdvg/caches.hpp"
#include "sdvg/synthmodels.hpp"

#include <gtest/gtest.h>

#include <random>
#include <vector>

using namespace sdvg;

namespace {

LatentBlock random_block(const GenerationConfig& c, int b, std::mt19937_64& rng,
                         Producer producer = Producer::Draft) {
  std::normal_distribution<double> n(0.0, 1.0);
  LatentBlock block;
  block.block_index = b;
  block.producer = producer;
  block.data = Tensor(c.latent_frames_per_block, c.latent_frame_size());
  for (Eigen::Index i = 0; i < block.data.size(); ++i) block.data.data()[i] = n(rng);
  return block;
}

}  // namespace

TEST(KVCache, CommitIsContiguous) {
  const GenerationConfig c = default_config();
  std::mt19937_64 rng(1);
  KVCache kv(CacheOwner::Target);
  kv.commit(random_block(c, 0, rng));
  kv.commit(random_block(c, 1, rng));
  try {
    kv.commit(random_block(c, 3, rng));
    FAIL() << "gap accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Contiguity);
  }
  EXPECT_THROW(kv.commit(random_block(c, 1, rng)), Error);
  EXPECT_EQ(kv.size(), 2u);
}

TEST(KVCache, AppendOnlyDigests) {
  const GenerationConfig c = default_config();
  std::mt19937_64 rng(2);
  KVCache kv(CacheOwner::Drafter);
  std::vector<std::uint64_t> entry_digests;
  std::vector<std::uint64_t> context_digests{kv.context_digest()};
  for (int b = 0; b < 9; ++b) {
    kv.commit(random_block(c, b, rng));
    entry_digests.push_back(kv.back().digest);
    context_digests.push_back(kv.context_digest());
    // Earlier entries never change as the log grows.
    for (int i = 0; i <= b; ++i) EXPECT_EQ(kv.entries()[i].digest, entry_digests[i]);
  }
  for (std::size_t i = 1; i < context_digests.size(); ++i) {
    EXPECT_NE(context_digests[i], context_digests[i - 1]);
  }
  EXPECT_TRUE(kv.verify());
}

TEST(KVCache, ReplayReconstructsLog) {
  const GenerationConfig c = default_config();
  std::mt19937_64 rng(3);
  KVCache kv(CacheOwner::Target);
  for (int b = 0; b < 5; ++b) {
    kv.commit(random_block(c, b, rng, b % 2 ? Producer::Draft : Producer::Target));
  }
  const KVCache copy = KVCache::replay(CacheOwner::Target, kv.entries());
  EXPECT_EQ(copy, kv);
  EXPECT_EQ(copy.context_digest(), kv.context_digest());

  auto shuffled = kv.entries();
  std::swap(shuffled[1], shuffled[2]);
  EXPECT_THROW(KVCache::replay(CacheOwner::Target, shuffled), Error);
}

TEST(KVCache, DigestDependsOnProducerAndContent) {
  const GenerationConfig c = default_config();
  std::mt19937_64 rng(4);
  LatentBlock a = random_block(c, 0, rng);
  LatentBlock b = a;
  b.producer = Producer::Target;
  EXPECT_NE(content_digest(a), content_digest(b));
  b = a;
  b.data(0, 0) += 1e-12;
  EXPECT_NE(content_digest(a), content_digest(b));
}

TEST(DecodeCache, RestoreRejectsForeignGeometry) {
  GenerationConfig small = default_config();
  small.latent_width = 4;
  const SyntheticDecoder big_decoder(default_config());
  const SyntheticDecoder small_decoder(small);
  DecoderState state = big_decoder.initial_state();
  const DecodeCacheSnapshot foreign = decode_snapshot(small_decoder.initial_state());
  try {
    decode_restore(state, foreign);
    FAIL() << "restore accepted a foreign snapshot";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Restore);
  }
}

// Random interleavings of decode / snapshot / restore, checked against an
// oracle that keeps full copies of the state on a stack.
TEST(DecodeCache, RandomizedSnapshotStateMachine) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    GenerationConfig c = default_config();
    c.num_blocks = 64;
    const SyntheticDecoder decoder(c);
    std::mt19937_64 rng(seed);
    DecoderState state = decoder.initial_state();
    std::vector<DecodeCacheSnapshot> snapshots;
    std::vector<DecoderState> oracle;

    for (int step = 0; step < 200; ++step) {
      const int op = static_cast<int>(rng() % 3);
      if (op == 0 && state.next_block < c.num_blocks) {
        const LatentBlock block = random_block(c, state.next_block, rng);
        const DecoderState before = state;
        const DecodedFrames frames = decoder.decode(block, state);
        EXPECT_EQ(static_cast<int>(frames.frames.size()), pixel_frame_count(c, block.block_index));
        EXPECT_EQ(state.next_block, before.next_block + 1);
        EXPECT_NE(state.digest(), before.digest());
      } else if (op == 1) {
        snapshots.push_back(decode_snapshot(state));
        oracle.push_back(state);
        EXPECT_EQ(snapshots.back().digest(), state.digest());
        EXPECT_EQ(snapshots.back().block_index(), state.next_block);
      } else if (!snapshots.empty()) {
        decode_restore(state, snapshots.back());
        EXPECT_EQ(state, oracle.back());
        EXPECT_EQ(state.digest(), oracle.back().digest());
        snapshots.pop_back();
        oracle.pop_back();
      }
    }
  }
}

TEST(DecodeCache, RestoreThenDecodeMatchesFreshPath) {
  const GenerationConfig c = default_config();
  const SyntheticDecoder decoder(c);
  std::mt19937_64 rng(9);
  const LatentBlock b0 = random_block(c, 0, rng);
  const LatentBlock draft = random_block(c, 1, rng);
  const LatentBlock replacement = random_block(c, 1, rng, Producer::Target);

  DecoderState live = decoder.initial_state();
  decoder.decode(b0, live);
  const auto snap = decode_snapshot(live);
  decoder.decode(draft, live);
  decode_restore(live, snap);
  const DecodedFrames after_restore = decoder.decode(replacement, live);

  DecoderState fresh = decoder.initial_state();
  decoder.decode(b0, fresh);
  const DecodedFrames direct = decoder.decode(replacement, fresh);

  ASSERT_EQ(after_restore.frames.size(), direct.frames.size());
  for (std::size_t i = 0; i < direct.frames.size(); ++i) {
    EXPECT_EQ(after_restore.frames[i], direct.frames[i]);
  }
  EXPECT_EQ(live, fresh);
}
