#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdvg {

// Row-major so each row is one latent frame laid out as (channel, height, width).
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Frame = Eigen::VectorXd;

enum class ErrorKind {
  Parse,
  Validation,
  Calibration,
  Contiguity,
  Restore,
  Generation,
  Io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message,
        std::optional<int> block_index = std::nullopt);

  ErrorKind kind() const { return kind_; }
  std::optional<int> block_index() const { return block_index_; }

 private:
  ErrorKind kind_;
  std::optional<int> block_index_;
};

// Which decoded frames are handed to the scorer.  Pixel scores every decoded
// frame; Latent scores one representative frame per latent frame (F = 3 under
// the default layout).
enum class ScoreFrames { Pixel, Latent };

struct Resolution {
  int width = 832;
  int height = 480;
  bool operator==(const Resolution&) const = default;
};

struct GenerationConfig {
  int num_blocks = 9;
  int denoise_steps = 4;
  std::vector<int> timestep_schedule{1000, 937, 833, 625, 0};
  double guidance_scale = 3.0;
  double timestep_shift = 5.0;
  int latent_frames_per_block = 3;
  int pixel_frames_first_block = 9;
  int pixel_frames_later_block = 12;
  double threshold = -0.7;
  std::uint64_t seed = 42;
  Resolution resolution;

  // Desk-scale latent geometry.  The last channel carries the synthetic
  // fidelity plane read by the synthetic scorer.
  int latent_channels = 4;
  int latent_height = 8;
  int latent_width = 8;

  // Score the draft even when the decision cannot depend on it (forced
  // rejections, always-reject); diagnostics and trace export only.
  bool score_forced_rejections = false;
  ScoreFrames score_frames = ScoreFrames::Pixel;

  bool operator==(const GenerationConfig&) const = default;

  int latent_frame_size() const {
    return latent_channels * latent_height * latent_width;
  }
};

GenerationConfig default_config();

// Throws Error(Validation) describing the first violated invariant.
void validate(const GenerationConfig& config);

int pixel_frame_count(const GenerationConfig& config, int block_index);

// Pixel frames decoded from each latent frame of a block.  The first latent
// frame of block 0 decodes to a single frame (causal decoder warm-up); the rest
// split the remaining frames evenly.
std::vector<int> frames_per_latent(const GenerationConfig& config,
                                   int block_index);

// Number of frame scores produced for a block under config.score_frames.
int scored_frame_count(const GenerationConfig& config, int block_index);

int total_pixel_frames(const GenerationConfig& config);

std::string serialize_config(const GenerationConfig& config);
GenerationConfig parse_config(const std::string& text);
GenerationConfig load_config(const std::string& path);
void save_config(const GenerationConfig& config, const std::string& path);

struct PromptSpec {
  std::string prompt_id;
  std::string text;
};

enum class Producer { Draft, Target };
const char* to_string(Producer producer);
Producer parse_producer(const std::string& text);

struct LatentBlock {
  int block_index = 0;
  Tensor data;
  Producer producer = Producer::Draft;
  std::uint64_t noise_seed = 0;
};

struct DecodedFrames {
  int block_index = 0;
  std::vector<Frame> frames;
  // Latent frame each pixel frame was decoded from.
  std::vector<int> latent_origin;
};

struct FrameScoreVector {
  int block_index = 0;
  std::vector<double> scores;
  bool operator==(const FrameScoreVector&) const = default;
};

enum class Verdict { Accept, Reject };

enum class DecisionReason {
  AboveThreshold,
  BelowThreshold,
  ForcedFirstBlock,
  RandomPolicy,
  AlwaysAccept,
  AlwaysReject,
};

const char* to_string(Verdict verdict);
const char* to_string(DecisionReason reason);
Verdict parse_verdict(const std::string& text);
DecisionReason parse_reason(const std::string& text);

struct RoutingDecision {
  Verdict verdict = Verdict::Reject;
  DecisionReason reason = DecisionReason::BelowThreshold;
  bool operator==(const RoutingDecision&) const = default;
  bool accepted() const { return verdict == Verdict::Accept; }
};

enum class TimingSource { Simulated, Recorded, Mixed };
const char* to_string(TimingSource source);

struct BlockTrace {
  int block_index = 0;
  std::optional<double> aggregate_score;
  std::optional<FrameScoreVector> frame_scores;
  RoutingDecision decision;
  double draft_time_s = 0.0;
  double score_time_s = 0.0;
  double target_time_s = 0.0;
  double decode_time_s = 0.0;
  TimingSource timing_source = TimingSource::Simulated;

  // Audit fields.
  std::uint64_t noise_seed = 0;
  std::uint64_t draft_digest = 0;
  std::uint64_t committed_digest = 0;
  std::optional<std::uint64_t> target_noise_seed;

  bool operator==(const BlockTrace&) const = default;
};

struct RunSummary {
  std::string prompt_id;
  double accept_rate_excl_block0 = 0.0;
  double total_time_s = 0.0;
  double quality_proxy = 0.0;
  std::vector<BlockTrace> block_traces;

  bool operator==(const RunSummary&) const = default;
};

// (#accepted among blocks 1..B-1) / (B-1); zero when B = 1.
double accept_rate_excl_block0(const std::vector<BlockTrace>& traces);

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
double parse_double(const std::string& text);

}  // namespace sdvg
