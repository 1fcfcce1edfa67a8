#include "sdvg/engine.hpp"

#include "sdvg/hashing.hpp"

#include <cmath>
#include <limits>
#include <utility>

namespace sdvg {

std::uint64_t noise_seed(std::uint64_t master_seed, std::string_view prompt_id, int block_index) {
  return hash_combine(hash_string(master_seed, prompt_id), static_cast<std::uint64_t>(block_index));
}

namespace {

template <typename F>
auto guarded(int block_index, const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.block_index()) throw;
    throw Error(e.kind(), std::string(stage) + ": " + e.what(), block_index);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::Generation, std::string(stage) + ": " + e.what(), block_index);
  }
}

FrameScoreVector score_frames(const GenerationConfig& config, const DecodedFrames& decoded,
                              const ScorerInterface& scorer, const PromptSpec& prompt) {
  FrameScoreVector scores;
  scores.block_index = decoded.block_index;
  for (std::size_t i = 0; i < decoded.frames.size(); ++i) {
    if (config.score_frames == ScoreFrames::Latent) {
      // Last pixel frame decoded from each latent frame.
      const bool last_of_group = i + 1 == decoded.frames.size() ||
                                 decoded.latent_origin[i + 1] != decoded.latent_origin[i];
      if (!last_of_group) continue;
    }
    scores.scores.push_back(scorer.score(decoded.frames[i], prompt));
  }
  return scores;
}

}  // namespace

VideoRun run_video(const GenerationConfig& config, const PromptSpec& prompt,
                   const GeneratorInterface& drafter, const GeneratorInterface& target,
                   const DecoderInterface& decoder, const ScorerInterface& scorer,
                   const Policy& policy, AggregationMode aggregation, const RunOptions& options) {
  validate(config);
  validate(options.latency);

  VideoRun run;
  run.summary.prompt_id = prompt.prompt_id;
  DecoderState decoder_state = decoder.initial_state();
  const std::uint64_t stream_key = hash_string(config.seed, prompt.prompt_id);

  for (int b = 0; b < config.num_blocks; ++b) {
    BlockTrace trace;
    trace.block_index = b;
    trace.noise_seed = noise_seed(config.seed, prompt.prompt_id, b);

    LatentBlock draft = guarded(b, "drafter", [&] {
      return drafter.generate(trace.noise_seed, run.drafter_kv, b, prompt);
    });
    draft.block_index = b;
    draft.producer = Producer::Draft;
    draft.noise_seed = trace.noise_seed;
    run.drafter_kv.commit(draft);
    trace.draft_digest = run.drafter_kv.back().digest;

    const DecodeCacheSnapshot snapshot = decode_snapshot(decoder_state);
    DecodedFrames frames = guarded(b, "decoder", [&] { return decoder.decode(draft, decoder_state); });
    if (static_cast<int>(frames.frames.size()) != pixel_frame_count(config, b)) {
      throw Error(ErrorKind::Generation, "decoder produced " + std::to_string(frames.frames.size()) +
                                             " frames, expected " +
                                             std::to_string(pixel_frame_count(config, b)), b);
    }

    const bool scored = !forces_reject(policy, b) || config.score_forced_rejections;
    if (scored) {
      FrameScoreVector scores =
          guarded(b, "scorer", [&] { return score_frames(config, frames, scorer, prompt); });
      trace.aggregate_score = guarded(b, "scorer", [&] { return aggregate(scores, aggregation); });
      trace.frame_scores = std::move(scores);
    }

    trace.decision = decide(policy, b, trace.aggregate_score, stream_key);

    if (trace.decision.accepted()) {
      run.target_kv.commit(draft);
    } else {
      decode_restore(decoder_state, snapshot);
      trace.target_noise_seed = trace.noise_seed;
      LatentBlock regenerated = guarded(b, "target", [&] {
        return target.generate(trace.noise_seed, run.target_kv, b, prompt);
      });
      regenerated.block_index = b;
      regenerated.producer = Producer::Target;
      regenerated.noise_seed = trace.noise_seed;
      run.target_kv.commit(regenerated);
      frames = guarded(b, "decoder", [&] { return decoder.decode(regenerated, decoder_state); });
    }
    trace.committed_digest = run.target_kv.back().digest;

    const BlockCharge cost = charge(options.latency, trace.decision, scored);
    trace.draft_time_s = cost.draft;
    trace.decode_time_s = cost.decode;
    trace.score_time_s = cost.score;
    trace.target_time_s = cost.target;
    trace.timing_source = TimingSource::Simulated;

    if (options.keep_artifacts) run.emitted.push_back(std::move(frames));
    run.summary.block_traces.push_back(std::move(trace));
  }

  auto& s = run.summary;
  s.accept_rate_excl_block0 = accept_rate_excl_block0(s.block_traces);
  s.total_time_s = simulate_time(s.block_traces, options.latency, config.num_blocks);
  s.quality_proxy = options.quality ? options.quality->evaluate(s.block_traces)
                                    : std::numeric_limits<double>::quiet_NaN();
  if (!options.keep_artifacts) {
    run.drafter_kv = KVCache(CacheOwner::Drafter);
    run.target_kv = KVCache(CacheOwner::Target);
  }
  return run;
}

}  // namespace sdvg
