#pragma once

#include "sdvg/caches.hpp"
#include "sdvg/costmodel.hpp"
#include "sdvg/interfaces.hpp"
#include "sdvg/router.hpp"
#include "sdvg/synthmodels.hpp"

#include <cstdint>
#include <string_view>
#include <vector>

namespace sdvg {

// Per-block initial-noise seed shared by the drafter and, on rejection, the
// target.
std::uint64_t noise_seed(std::uint64_t master_seed, std::string_view prompt_id, int block_index);

struct RunOptions {
  LatencyParams latency;
  // When null the summary's quality_proxy is NaN.
  const QualityProxyModel* quality = nullptr;
  // Keep emitted frames and both KV caches in the result.
  bool keep_artifacts = true;
};

struct VideoRun {
  RunSummary summary;
  std::vector<DecodedFrames> emitted;
  KVCache drafter_kv{CacheOwner::Drafter};
  KVCache target_kv{CacheOwner::Target};
};

// One video, block by block:
//   draft -> commit to drafter KV -> snapshot decoder -> decode -> score ->
//   route -> (accept: commit draft to target KV, emit)
//          | (reject: restore decoder, regenerate with target from the same
//             noise seed, commit, decode, emit)
// Generator, decoder and scorer failures are rethrown as Error(Generation)
// tagged with the failing block.
VideoRun run_video(const GenerationConfig& config, const PromptSpec& prompt,
                   const GeneratorInterface& drafter, const GeneratorInterface& target,
                   const DecoderInterface& decoder, const ScorerInterface& scorer,
                   const Policy& policy, AggregationMode aggregation,
                   const RunOptions& options = {});

}  // namespace sdvg
