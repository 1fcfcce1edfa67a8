#include "sdvg/synthmodels.hpp"

#include "sdvg/hashing.hpp"
#include "sdvg/nnls.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace sdvg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

constexpr std::uint64_t kNoiseTag = 0x6e6f697365ULL;
constexpr std::uint64_t kScoreTag = 0x73636f7265ULL;

}  // namespace

DraftQualityModel::DraftQualityModel(std::vector<QuantileKnot> knots, double upper_tail_slope,
                                     double lower_tail_slope, double mean_gap,
                                     std::uint64_t rng_seed)
    : knots_(std::move(knots)),
      upper_slope_(upper_tail_slope),
      lower_slope_(lower_tail_slope),
      mean_gap_(mean_gap),
      rng_seed_(rng_seed) {
  if (knots_.empty()) throw Error(ErrorKind::Calibration, "quantile model needs at least one knot");
  for (std::size_t i = 0; i < knots_.size(); ++i) {
    const auto& k = knots_[i];
    if (!(k.accept_rate > 0.0 && k.accept_rate < 1.0) || !std::isfinite(k.tau)) {
      throw Error(ErrorKind::Calibration, "knot accept rates must lie in (0, 1)");
    }
    if (i > 0 && !(k.tau < knots_[i - 1].tau && k.accept_rate > knots_[i - 1].accept_rate)) {
      throw Error(ErrorKind::Calibration,
                  "knots must have accept rate strictly increasing as tau decreases");
    }
  }
  if (!(upper_slope_ > 0.0) || !(lower_slope_ > 0.0)) {
    throw Error(ErrorKind::Calibration, "tail slopes must be positive");
  }
  if (!(mean_gap_ >= 0.0)) throw Error(ErrorKind::Calibration, "mean gap must be non-negative");
}

double DraftQualityModel::upper_support() const {
  return knots_.front().tau + knots_.front().accept_rate / upper_slope_;
}

double DraftQualityModel::lower_support() const {
  return knots_.back().tau - (1.0 - knots_.back().accept_rate) / lower_slope_;
}

double DraftQualityModel::accept_rate(double tau) const {
  const auto& hi = knots_.front();
  const auto& lo = knots_.back();
  if (tau >= hi.tau) return std::max(0.0, hi.accept_rate - upper_slope_ * (tau - hi.tau));
  if (tau <= lo.tau) return std::min(1.0, lo.accept_rate + lower_slope_ * (lo.tau - tau));
  // knots_ is sorted by decreasing tau.
  auto it = std::find_if(knots_.begin(), knots_.end(),
                         [&](const QuantileKnot& k) { return k.tau <= tau; });
  const auto& right = *it;        // tau_k <= tau
  const auto& left = *(it - 1);   // tau_{k-1} > tau
  if (right.tau == tau) return right.accept_rate;
  const double w = (left.tau - tau) / (left.tau - right.tau);
  return left.accept_rate + w * (right.accept_rate - left.accept_rate);
}

double DraftQualityModel::tau_for_rate(double rate) const {
  const auto& hi = knots_.front();
  const auto& lo = knots_.back();
  rate = std::clamp(rate, 0.0, 1.0);
  if (rate <= hi.accept_rate) return hi.tau + (hi.accept_rate - rate) / upper_slope_;
  if (rate >= lo.accept_rate) return lo.tau - (rate - lo.accept_rate) / lower_slope_;
  auto it = std::find_if(knots_.begin(), knots_.end(),
                         [&](const QuantileKnot& k) { return k.accept_rate >= rate; });
  const auto& right = *it;
  const auto& left = *(it - 1);
  const double w = (rate - left.accept_rate) / (right.accept_rate - left.accept_rate);
  return left.tau + w * (right.tau - left.tau);
}

DraftQualityModel DraftQualityModel::with_mean_gap(double gap) const {
  return DraftQualityModel(knots_, upper_slope_, lower_slope_, gap, rng_seed_);
}

DraftQualityModel DraftQualityModel::with_seed(std::uint64_t seed) const {
  return DraftQualityModel(knots_, upper_slope_, lower_slope_, mean_gap_, seed);
}

DraftQualityModel fit_quantile(std::vector<QuantileKnot> knots, const QuantileFitOptions& options) {
  if (knots.empty()) throw Error(ErrorKind::Calibration, "no quantile knots");
  std::sort(knots.begin(), knots.end(),
            [](const QuantileKnot& a, const QuantileKnot& b) { return a.tau > b.tau; });
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (!(knots[i].accept_rate > knots[i - 1].accept_rate) || knots[i].tau == knots[i - 1].tau) {
      throw Error(ErrorKind::Calibration,
                  "non-monotone knots: accept rate must increase strictly as tau decreases (at tau=" +
                      format_double(knots[i].tau) + ")");
    }
  }
  auto segment_slope = [&](std::size_t i) {
    return (knots[i + 1].accept_rate - knots[i].accept_rate) / (knots[i].tau - knots[i + 1].tau);
  };
  double upper = options.upper_tail_slope.value_or(knots.size() > 1 ? segment_slope(0) : 0.1);
  double lower = options.lower_tail_slope.value_or(
      knots.size() > 1 ? segment_slope(knots.size() - 2) : 0.1);
  return DraftQualityModel(std::move(knots), upper, lower, options.mean_gap, options.rng_seed);
}

double fit_mean_gap(const DraftQualityModel& model, std::span<const QuantileKnot> rows) {
  if (rows.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : rows) sum += r.tau - model.tau_for_rate(r.accept_rate);
  return std::max(0.0, sum / static_cast<double>(rows.size()));
}

FrameScoreVector sample_block_score(const DraftQualityModel& model, std::string_view prompt_id,
                                    int block_index, int frame_count) {
  if (frame_count < 1) throw Error(ErrorKind::Validation, "frame_count must be >= 1");
  KeyedStream stream(hash_combine(hash_string(hash_combine(model.rng_seed(), kScoreTag), prompt_id),
                                  static_cast<std::uint64_t>(block_index)));
  const double worst = model.tau_for_rate(stream.next_unit());
  const auto worst_at = static_cast<int>(stream.next_unit() * frame_count);

  FrameScoreVector out;
  out.block_index = block_index;
  out.scores.assign(static_cast<std::size_t>(frame_count), worst);
  if (frame_count > 1) {
    // Uniform offsets on [0, 2gF/(F-1)] give E[mean - min] = g.
    const double span = 2.0 * model.mean_gap() * frame_count / (frame_count - 1);
    for (int i = 0; i < frame_count; ++i) {
      if (i != worst_at) out.scores[static_cast<std::size_t>(i)] += span * stream.next_unit();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

QualityProxyModel::QualityProxyModel(double base_quality, std::vector<double> breakpoints,
                                     std::vector<double> penalties, double anchor_penalty)
    : base_quality_(base_quality),
      breakpoints_(std::move(breakpoints)),
      penalties_(std::move(penalties)),
      anchor_penalty_(anchor_penalty) {
  if (penalties_.size() != breakpoints_.size() + 1) {
    throw Error(ErrorKind::Calibration, "quality proxy needs one more penalty than breakpoints");
  }
  for (std::size_t i = 1; i < breakpoints_.size(); ++i) {
    if (!(breakpoints_[i] < breakpoints_[i - 1])) {
      throw Error(ErrorKind::Calibration, "quality proxy breakpoints must decrease");
    }
  }
  for (std::size_t i = 0; i < penalties_.size(); ++i) {
    if (!(penalties_[i] >= 0.0) || (i > 0 && penalties_[i] < penalties_[i - 1])) {
      throw Error(ErrorKind::Calibration,
                  "quality proxy penalties must be non-negative and non-increasing in q");
    }
  }
  if (!(anchor_penalty_ >= 0.0)) {
    throw Error(ErrorKind::Calibration, "anchor penalty must be non-negative");
  }
}

double QualityProxyModel::penalty(double q) const {
  const auto above = std::count_if(breakpoints_.begin(), breakpoints_.end(),
                                   [&](double bp) { return q < bp; });
  return penalties_[static_cast<std::size_t>(above)];
}

double QualityProxyModel::evaluate(const std::vector<BlockTrace>& traces) const {
  if (traces.empty()) throw Error(ErrorKind::Validation, "cannot evaluate an empty run");
  double loss = 0.0;
  for (const auto& t : traces) {
    if (!t.decision.accepted()) continue;
    if (!t.frame_scores || t.frame_scores->scores.empty()) {
      throw Error(ErrorKind::Validation, "accepted block has no frame scores", t.block_index);
    }
    loss += penalty(aggregate(*t.frame_scores, AggregationMode::MinFrame));
    if (t.block_index == 0) loss += anchor_penalty_;
  }
  return base_quality_ - loss / static_cast<double>(traces.size());
}

double QualityProxyModel::expected_penalty_above(const DraftQualityModel& dq, double tau) const {
  double total = 0.0;
  const std::size_t K = breakpoints_.size();
  for (std::size_t j = 0; j <= K; ++j) {
    const double hi = j == 0 ? kInf : breakpoints_[j - 1];
    const double lo = j == K ? -kInf : breakpoints_[j];
    const double from = std::max(lo, tau);
    if (!(from < hi)) continue;
    const double mass = (from == -kInf ? 1.0 : dq.accept_rate(from)) -
                        (hi == kInf ? 0.0 : dq.accept_rate(hi));
    total += penalties_[j] * mass;
  }
  return total;
}

double QualityProxyModel::expected_threshold_quality(const DraftQualityModel& dq, double tau,
                                                     int num_blocks) const {
  const double B = num_blocks;
  return base_quality_ - (B - 1.0) / B * expected_penalty_above(dq, tau);
}

double QualityProxyModel::expected_random_quality(const DraftQualityModel& dq, double rate,
                                                  bool force_first, int num_blocks) const {
  const double B = num_blocks;
  const double e = expected_penalty_above(dq, -kInf);
  const double first = force_first ? 0.0 : rate * (anchor_penalty_ + e);
  return base_quality_ - (first + (B - 1.0) * rate * e) / B;
}

double QualityProxyModel::expected_draft_only_quality(const DraftQualityModel& dq,
                                                      int num_blocks) const {
  const double B = num_blocks;
  return base_quality_ - (anchor_penalty_ + B * expected_penalty_above(dq, -kInf)) / B;
}

double QualityProxyFit::max_fit_residual() const {
  double worst = 0.0;
  for (const auto& r : residuals) {
    if (r.in_fit) worst = std::max(worst, std::abs(r.residual()));
  }
  return worst;
}

QualityProxyFit fit_quality_proxy(const QualityFitInput& in, const DraftQualityModel& dq) {
  if (in.threshold_rows.size() < 3) {
    throw Error(ErrorKind::Calibration, "quality proxy fit needs >= 3 threshold rows");
  }
  if (in.num_blocks < 2) throw Error(ErrorKind::Calibration, "quality proxy fit needs B >= 2");

  std::vector<double> bps;
  for (const auto& r : in.threshold_rows) bps.push_back(r.tau);
  std::sort(bps.begin(), bps.end(), std::greater<>());
  bps.erase(std::unique(bps.begin(), bps.end()), bps.end());

  const std::size_t K = bps.size();
  const bool with_anchor = in.forced_random.has_value() && in.plain_random.has_value();
  const auto n = static_cast<Eigen::Index>(K + 1 + (with_anchor ? 1 : 0));
  const Eigen::Index anchor_col = static_cast<Eigen::Index>(K + 1);

  // Segment masses: segment 0 above bps[0], segment K below bps[K-1].
  Eigen::VectorXd mass(static_cast<Eigen::Index>(K + 1));
  for (std::size_t j = 0; j <= K; ++j) {
    const double hi = j == 0 ? 0.0 : dq.accept_rate(bps[j - 1]);
    const double lo = j == K ? 1.0 : dq.accept_rate(bps[j]);
    mass(static_cast<Eigen::Index>(j)) = lo - hi;
  }
  // penalty_j = p0 + sum_{k<=j} delta_k, so column k collects segments j >= k.
  auto penalty_columns = [&](std::size_t last_segment) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n);
    for (std::size_t k = 0; k <= K; ++k) {
      for (std::size_t j = k; j <= last_segment; ++j) row(static_cast<Eigen::Index>(k)) += mass(static_cast<Eigen::Index>(j));
    }
    return row;
  };

  const double B = in.num_blocks;
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  for (const auto& r : in.threshold_rows) {
    const auto seg = static_cast<std::size_t>(std::find(bps.begin(), bps.end(), r.tau) - bps.begin());
    rows.push_back(penalty_columns(seg) * ((B - 1.0) / B));
    rhs.push_back(in.target_only - r.quality);
  }
  {
    Eigen::RowVectorXd row = penalty_columns(K);
    if (with_anchor) row(anchor_col) = 1.0 / B;
    rows.push_back(row);
    rhs.push_back(in.target_only - in.draft_only);
  }
  if (with_anchor) {
    const double rp = in.plain_random->accept_rate;
    const double rf = in.forced_random->accept_rate;
    Eigen::RowVectorXd row = penalty_columns(K) * (rp - (B - 1.0) / B * rf);
    row(anchor_col) = rp / B;
    rows.push_back(row * in.random_gap_weight);
    rhs.push_back((in.forced_random->quality - in.plain_random->quality) * in.random_gap_weight);
  }

  Eigen::MatrixXd A(static_cast<Eigen::Index>(rows.size()), n);
  Eigen::VectorXd b(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    A.row(static_cast<Eigen::Index>(i)) = rows[i];
    b(static_cast<Eigen::Index>(i)) = rhs[i];
  }
  const auto solved = nnls(A, b);
  if (!solved.converged) throw Error(ErrorKind::Calibration, "quality proxy fit did not converge");

  std::vector<double> penalties(K + 1);
  double acc = 0.0;
  for (std::size_t j = 0; j <= K; ++j) {
    acc += solved.x(static_cast<Eigen::Index>(j));
    penalties[j] = acc;
  }
  const double anchor = with_anchor ? solved.x(anchor_col) : 0.0;

  QualityProxyFit fit;
  fit.model = QualityProxyModel(in.target_only, bps, std::move(penalties), anchor);
  fit.tolerance = in.tolerance;
  fit.residuals.push_back({"target-only", in.target_only, fit.model.base_quality(), true});
  for (const auto& r : in.threshold_rows) {
    fit.residuals.push_back(
        {r.label, r.quality, fit.model.expected_threshold_quality(dq, r.tau, in.num_blocks), true});
  }
  fit.residuals.push_back(
      {"draft-only", in.draft_only, fit.model.expected_draft_only_quality(dq, in.num_blocks), true});
  if (in.forced_random) {
    fit.residuals.push_back({in.forced_random->label, in.forced_random->quality,
                             fit.model.expected_random_quality(dq, in.forced_random->accept_rate,
                                                               true, in.num_blocks),
                             false});
  }
  if (in.plain_random) {
    fit.residuals.push_back({in.plain_random->label, in.plain_random->quality,
                             fit.model.expected_random_quality(dq, in.plain_random->accept_rate,
                                                               false, in.num_blocks),
                             false});
  }
  return fit;
}

// ---------------------------------------------------------------------------

namespace {

// Runs the timestep schedule: at each step the state moves towards the
// model's prediction by the fraction of noise removed.
Eigen::ArrayXXd denoise(Eigen::ArrayXXd x, const Eigen::ArrayXXd& context, double gain,
                        const std::vector<int>& schedule) {
  for (std::size_t k = 0; k + 1 < schedule.size(); ++k) {
    const double keep = static_cast<double>(schedule[k + 1]) / schedule[k];
    const Eigen::ArrayXXd prediction = (gain * x + context).tanh();
    x = keep * x + (1.0 - keep) * prediction;
  }
  return x;
}

Eigen::ArrayXXd gaussian_noise(std::uint64_t noise_seed, Eigen::Index rows, Eigen::Index cols) {
  std::mt19937_64 rng(hash_combine(noise_seed, kNoiseTag));
  std::normal_distribution<double> normal;
  Eigen::ArrayXXd noise(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) noise(r, c) = normal(rng);
  }
  return noise;
}

// Smooth conditioning signal keyed by the KV log and the prompt.
Eigen::ArrayXXd context_signal(const KVCache& kv, const PromptSpec& prompt, Eigen::Index rows,
                               Eigen::Index cols) {
  KeyedStream stream(hash_string(kv.context_digest(), prompt.text));
  const double offset = stream.next_unit() - 0.5;
  const double amplitude = 0.5 * stream.next_unit();
  const double frequency = 0.05 + 0.2 * stream.next_unit();
  const Eigen::ArrayXd phase = Eigen::ArrayXd::LinSpaced(cols, 0.0, static_cast<double>(cols - 1)) * frequency;
  Eigen::ArrayXXd ctx(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    ctx.row(r) = (offset + amplitude * (phase + 0.7 * static_cast<double>(r)).sin()).transpose();
  }
  return ctx;
}

LatentBlock make_block(const GenerationConfig& config, std::uint64_t noise_seed, const KVCache& kv,
                       int block_index, const PromptSpec& prompt, double gain, Producer producer) {
  const Eigen::Index rows = config.latent_frames_per_block;
  const Eigen::Index cols = config.latent_frame_size();
  const Eigen::ArrayXXd x = denoise(gaussian_noise(noise_seed, rows, cols),
                                    context_signal(kv, prompt, rows, cols), gain,
                                    config.timestep_schedule);
  LatentBlock block;
  block.block_index = block_index;
  block.producer = producer;
  block.noise_seed = noise_seed;
  block.data = x.matrix();
  return block;
}

Eigen::Index fidelity_offset(const GenerationConfig& c) {
  return static_cast<Eigen::Index>(c.latent_channels - 1) * c.latent_height * c.latent_width;
}

}  // namespace

SyntheticDrafter::SyntheticDrafter(GenerationConfig config, const DraftQualityModel& quality)
    : config_(std::move(config)),
      quality_(quality.with_seed(hash_combine(quality.rng_seed(), config_.seed))) {
  validate(config_);
}

LatentBlock SyntheticDrafter::generate(std::uint64_t noise_seed, const KVCache& kv,
                                       int block_index, const PromptSpec& prompt) const {
  LatentBlock block = make_block(config_, noise_seed, kv, block_index, prompt, 0.5, Producer::Draft);

  const int H = config_.latent_height;
  const int W = config_.latent_width;
  const Eigen::Index offset = fidelity_offset(config_);
  const auto counts = frames_per_latent(config_, block_index);
  const FrameScoreVector target_scores = sample_block_score(
      quality_, prompt.prompt_id, block_index, scored_frame_count(config_, block_index));

  std::size_t next = 0;
  for (int k = 0; k < config_.latent_frames_per_block; ++k) {
    auto plane = block.data.row(k).segment(offset, H * W).reshaped<Eigen::RowMajor>(H, W);
    if (config_.score_frames == ScoreFrames::Latent) {
      plane.setConstant(target_scores.scores[static_cast<std::size_t>(k)]);
      continue;
    }
    const int count = counts[static_cast<std::size_t>(k)];
    for (int j = 0; j < count; ++j) {
      const int r0 = j * H / count;
      const int r1 = (j + 1) * H / count;
      plane.middleRows(r0, r1 - r0).setConstant(target_scores.scores[next++]);
    }
  }
  return block;
}

SyntheticTarget::SyntheticTarget(GenerationConfig config, double fidelity)
    : config_(std::move(config)), fidelity_(fidelity) {
  validate(config_);
}

LatentBlock SyntheticTarget::generate(std::uint64_t noise_seed, const KVCache& kv, int block_index,
                                      const PromptSpec& prompt) const {
  LatentBlock block = make_block(config_, noise_seed, kv, block_index, prompt, 0.8, Producer::Target);
  const Eigen::Index offset = fidelity_offset(config_);
  const Eigen::Index plane = static_cast<Eigen::Index>(config_.latent_height) * config_.latent_width;
  block.data.middleCols(offset, plane).setConstant(fidelity_);
  return block;
}

SyntheticDecoder::SyntheticDecoder(GenerationConfig config) : config_(std::move(config)) {
  validate(config_);
}

DecoderState SyntheticDecoder::initial_state() const {
  DecoderState state;
  state.frame_size = config_.latent_frame_size();
  state.last_frame = Frame::Zero(state.frame_size);
  return state;
}

DecodedFrames SyntheticDecoder::decode(const LatentBlock& latent, DecoderState& state) const {
  if (latent.block_index != state.next_block) {
    throw Error(ErrorKind::Generation,
                "decoder expected block " + std::to_string(state.next_block), latent.block_index);
  }
  if (latent.data.rows() != config_.latent_frames_per_block ||
      latent.data.cols() != state.frame_size) {
    throw Error(ErrorKind::Generation, "latent shape does not match decoder", latent.block_index);
  }
  const int H = config_.latent_height;
  const int W = config_.latent_width;
  const Eigen::Index offset = fidelity_offset(config_);
  const auto counts = frames_per_latent(config_, latent.block_index);

  DecodedFrames out;
  out.block_index = latent.block_index;
  for (int k = 0; k < config_.latent_frames_per_block; ++k) {
    const Eigen::VectorXd row = latent.data.row(k).transpose();
    const auto plane = row.segment(offset, H * W).reshaped<Eigen::RowMajor>(H, W);
    const int count = counts[static_cast<std::size_t>(k)];
    for (int j = 0; j < count; ++j) {
      Frame frame(state.frame_size);
      frame.head(offset) = 0.6 * row.head(offset) + 0.4 * state.last_frame.head(offset) +
                           Eigen::VectorXd::Constant(offset, 0.02 * j);
      const int r0 = j * H / count;
      const int r1 = (j + 1) * H / count;
      frame.tail(H * W).setConstant(plane.middleRows(r0, r1 - r0).mean());
      state.last_frame = frame;
      out.frames.push_back(std::move(frame));
      out.latent_origin.push_back(k);
    }
  }
  state.next_block += 1;
  state.warmed_up = true;
  return out;
}

SyntheticScorer::SyntheticScorer(GenerationConfig config) : config_(std::move(config)) {
  validate(config_);
}

double SyntheticScorer::score(const Frame& frame, const PromptSpec&) const {
  const Eigen::Index plane = static_cast<Eigen::Index>(config_.latent_height) * config_.latent_width;
  if (frame.size() != static_cast<Eigen::Index>(config_.latent_frame_size())) {
    throw Error(ErrorKind::Generation, "frame size does not match scorer geometry");
  }
  return frame.tail(plane).mean();
}

}  // namespace sdvg
