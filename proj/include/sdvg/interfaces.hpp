#pragma once

#include "sdvg/caches.hpp"
#include "sdvg/core.hpp"

#include <cstdint>

namespace sdvg {

// Block generator (drafter or target).  Must be deterministic in
// (noise_seed, kv contents, block_index, prompt).
class GeneratorInterface {
 public:
  virtual ~GeneratorInterface() = default;
  virtual LatentBlock generate(std::uint64_t noise_seed, const KVCache& kv, int block_index,
                               const PromptSpec& prompt) const = 0;
  virtual Producer cost_class() const = 0;
};

// Causal decoder.  All temporal state lives in the DecoderState passed in, so
// the engine can snapshot and restore it around draft scoring.
class DecoderInterface {
 public:
  virtual ~DecoderInterface() = default;
  virtual DecoderState initial_state() const = 0;
  virtual DecodedFrames decode(const LatentBlock& latent, DecoderState& state) const = 0;
};

// Per-frame reward R(frame, prompt).
class ScorerInterface {
 public:
  virtual ~ScorerInterface() = default;
  virtual double score(const Frame& frame, const PromptSpec& prompt) const = 0;
};

}  // namespace sdvg
