#include "sdvg/core.hpp"

#include "sdvg/kvfile.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

namespace sdvg {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Calibration: return "calibration";
    case ErrorKind::Contiguity: return "contiguity";
    case ErrorKind::Restore: return "restore";
    case ErrorKind::Generation: return "generation";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message, std::optional<int> block_index)
    : std::runtime_error(block_index ? "block " + std::to_string(*block_index) + ": " + message
                                     : message),
      kind_(kind),
      block_index_(block_index) {}

GenerationConfig default_config() { return GenerationConfig{}; }

void validate(const GenerationConfig& c) {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::Validation, what); };
  if (c.num_blocks < 1) fail("num_blocks must be >= 1");
  if (c.denoise_steps < 1) fail("denoise_steps must be >= 1");
  if (static_cast<int>(c.timestep_schedule.size()) != c.denoise_steps + 1) {
    fail("timestep_schedule must have denoise_steps+1 entries");
  }
  for (std::size_t i = 0; i < c.timestep_schedule.size(); ++i) {
    if (c.timestep_schedule[i] < 0) fail("timestep_schedule entries must be non-negative");
    if (i > 0 && c.timestep_schedule[i] >= c.timestep_schedule[i - 1]) {
      fail("timestep_schedule must be strictly decreasing");
    }
  }
  if (c.timestep_schedule.back() != 0) fail("timestep_schedule must end at 0");
  if (!(c.guidance_scale > 0.0)) fail("guidance_scale must be positive");
  if (!(c.timestep_shift > 0.0)) fail("timestep_shift must be positive");
  if (c.latent_frames_per_block < 1) fail("latent_frames_per_block must be >= 1");
  if (c.resolution.width < 1 || c.resolution.height < 1) fail("resolution must be positive");
  if (c.latent_channels < 2) fail("latent_channels must be >= 2 (content + fidelity)");
  if (c.latent_height < 1 || c.latent_width < 1) fail("latent height/width must be >= 1");

  const int L = c.latent_frames_per_block;
  if (c.pixel_frames_later_block < L) fail("pixel_frames_later_block must be >= latent frames");
  const int first_min = L == 1 ? 1 : L;
  if (c.pixel_frames_first_block < first_min) {
    fail("pixel_frames_first_block too small for the latent layout");
  }
  for (int b : {0, 1}) {
    for (int n : frames_per_latent(c, b)) {
      if (n > c.latent_height) fail("more pixel frames per latent frame than latent rows");
    }
  }
}

std::vector<int> frames_per_latent(const GenerationConfig& c, int block_index) {
  const int L = c.latent_frames_per_block;
  std::vector<int> counts(L, 0);
  auto split = [&](int total, int from) {
    const int n = L - from;
    for (int k = from; k < L; ++k) counts[k] = total / n + ((k - from) < total % n ? 1 : 0);
  };
  if (block_index == 0 && L > 1) {
    counts[0] = 1;
    split(c.pixel_frames_first_block - 1, 1);
  } else {
    split(block_index == 0 ? c.pixel_frames_first_block : c.pixel_frames_later_block, 0);
  }
  return counts;
}

int pixel_frame_count(const GenerationConfig& config, int block_index) {
  if (block_index < 0 || block_index >= config.num_blocks) {
    throw Error(ErrorKind::Validation, "block_index " + std::to_string(block_index) +
                                           " outside [0, " + std::to_string(config.num_blocks) +
                                           ")");
  }
  return block_index == 0 ? config.pixel_frames_first_block : config.pixel_frames_later_block;
}

int scored_frame_count(const GenerationConfig& config, int block_index) {
  return config.score_frames == ScoreFrames::Latent ? config.latent_frames_per_block
                                                    : pixel_frame_count(config, block_index);
}

int total_pixel_frames(const GenerationConfig& config) {
  int total = 0;
  for (int b = 0; b < config.num_blocks; ++b) total += pixel_frame_count(config, b);
  return total;
}

namespace {

std::string join_ints(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(values[i]);
  }
  return out;
}

}  // namespace

std::string serialize_config(const GenerationConfig& c) {
  KeyValueFile f;
  f.set("num_blocks", std::to_string(c.num_blocks));
  f.set("denoise_steps", std::to_string(c.denoise_steps));
  f.set("timestep_schedule", join_ints(c.timestep_schedule));
  f.set("guidance_scale", format_double(c.guidance_scale));
  f.set("timestep_shift", format_double(c.timestep_shift));
  f.set("latent_frames_per_block", std::to_string(c.latent_frames_per_block));
  f.set("pixel_frames_first_block", std::to_string(c.pixel_frames_first_block));
  f.set("pixel_frames_later_block", std::to_string(c.pixel_frames_later_block));
  f.set("threshold", format_double(c.threshold));
  f.set("seed", std::to_string(c.seed));
  f.set("resolution", std::to_string(c.resolution.width) + "x" +
                          std::to_string(c.resolution.height));
  f.set("latent_channels", std::to_string(c.latent_channels));
  f.set("latent_height", std::to_string(c.latent_height));
  f.set("latent_width", std::to_string(c.latent_width));
  f.set("score_forced_rejections", c.score_forced_rejections ? "true" : "false");
  f.set("score_frames", c.score_frames == ScoreFrames::Latent ? "latent" : "pixel");
  return f.dump("# sdvg generation config\n");
}

GenerationConfig parse_config(const std::string& text) {
  const KeyValueFile f = KeyValueFile::parse(text);
  GenerationConfig c = default_config();
  // Missing keys keep their defaults so partial override files work.
  auto int_field = [&](const char* key, int& out) {
    if (f.contains(key)) out = static_cast<int>(f.get_int(key));
  };
  auto double_field = [&](const char* key, double& out) {
    if (f.contains(key)) out = f.get_double(key);
  };
  int_field("num_blocks", c.num_blocks);
  int_field("denoise_steps", c.denoise_steps);
  if (f.contains("timestep_schedule")) {
    c.timestep_schedule.clear();
    for (double t : f.get_doubles("timestep_schedule")) {
      if (t != static_cast<int>(t)) {
        throw Error(ErrorKind::Parse, "timestep_schedule entries must be integers");
      }
      c.timestep_schedule.push_back(static_cast<int>(t));
    }
  }
  double_field("guidance_scale", c.guidance_scale);
  double_field("timestep_shift", c.timestep_shift);
  int_field("latent_frames_per_block", c.latent_frames_per_block);
  int_field("pixel_frames_first_block", c.pixel_frames_first_block);
  int_field("pixel_frames_later_block", c.pixel_frames_later_block);
  double_field("threshold", c.threshold);
  if (f.contains("seed")) c.seed = f.get_uint("seed");
  if (f.contains("resolution")) {
    const std::string& r = f.get("resolution");
    const auto x = r.find('x');
    if (x == std::string::npos) throw Error(ErrorKind::Parse, "resolution must be WxH");
    try {
      c.resolution.width = std::stoi(r.substr(0, x));
      c.resolution.height = std::stoi(r.substr(x + 1));
    } catch (const std::exception&) {
      throw Error(ErrorKind::Parse, "resolution must be WxH");
    }
  }
  int_field("latent_channels", c.latent_channels);
  int_field("latent_height", c.latent_height);
  int_field("latent_width", c.latent_width);
  if (f.contains("score_forced_rejections")) {
    c.score_forced_rejections = f.get_bool("score_forced_rejections");
  }
  if (f.contains("score_frames")) {
    const std::string& s = f.get("score_frames");
    if (s == "pixel") c.score_frames = ScoreFrames::Pixel;
    else if (s == "latent") c.score_frames = ScoreFrames::Latent;
    else throw Error(ErrorKind::Parse, "score_frames must be 'pixel' or 'latent'");
  }
  validate(c);
  return c;
}

GenerationConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

void save_config(const GenerationConfig& config, const std::string& path) {
  write_file(path, serialize_config(config));
}

const char* to_string(Producer producer) {
  return producer == Producer::Draft ? "draft" : "target";
}

Producer parse_producer(const std::string& text) {
  if (text == "draft") return Producer::Draft;
  if (text == "target") return Producer::Target;
  throw Error(ErrorKind::Parse, "unknown producer '" + text + "'");
}

const char* to_string(Verdict verdict) {
  return verdict == Verdict::Accept ? "accept" : "reject";
}

Verdict parse_verdict(const std::string& text) {
  if (text == "accept") return Verdict::Accept;
  if (text == "reject") return Verdict::Reject;
  throw Error(ErrorKind::Parse, "unknown verdict '" + text + "'");
}

const char* to_string(DecisionReason reason) {
  switch (reason) {
    case DecisionReason::AboveThreshold: return "above_threshold";
    case DecisionReason::BelowThreshold: return "below_threshold";
    case DecisionReason::ForcedFirstBlock: return "forced_first_block";
    case DecisionReason::RandomPolicy: return "random_policy";
    case DecisionReason::AlwaysAccept: return "always_accept";
    case DecisionReason::AlwaysReject: return "always_reject";
  }
  return "unknown";
}

DecisionReason parse_reason(const std::string& text) {
  for (auto r : {DecisionReason::AboveThreshold, DecisionReason::BelowThreshold,
                 DecisionReason::ForcedFirstBlock, DecisionReason::RandomPolicy,
                 DecisionReason::AlwaysAccept, DecisionReason::AlwaysReject}) {
    if (text == to_string(r)) return r;
  }
  throw Error(ErrorKind::Parse, "unknown decision reason '" + text + "'");
}

const char* to_string(TimingSource source) {
  switch (source) {
    case TimingSource::Simulated: return "simulated";
    case TimingSource::Recorded: return "recorded";
    case TimingSource::Mixed: return "mixed";
  }
  return "unknown";
}

double accept_rate_excl_block0(const std::vector<BlockTrace>& traces) {
  if (traces.size() <= 1) return 0.0;
  const auto accepted = std::count_if(traces.begin() + 1, traces.end(),
                                      [](const BlockTrace& t) { return t.decision.accepted(); });
  return static_cast<double>(accepted) / static_cast<double>(traces.size() - 1);
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  (void)ec;
  return std::string(buf, ptr);
}

double parse_double(const std::string& text) {
  std::string_view s(text);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw Error(ErrorKind::Parse, "not a number: '" + text + "'");
  }
  return value;
}

}  // namespace sdvg
