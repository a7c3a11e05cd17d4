#include "asiseg/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include "asiseg/error.hpp"

namespace asiseg {

namespace {

constexpr double kMelBreakHz = 1000.0;
constexpr double kMelBreak = 15.0;  // 1000 Hz / (200 / 3)
constexpr double kMelLinearHz = 200.0 / 3.0;
const double kMelLogStep = std::log(6.4) / 27.0;

// Reflect about the end samples without repeating them (numpy "reflect").
int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  const int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

void MelConfig::validate() const {
  check(n_mels >= 1, ErrorCode::kConfig, "n_mels must be >= 1");
  check(hop_samples > 0 && hop_samples <= window_samples && window_samples <= fft_size,
        ErrorCode::kConfig, "mel config requires 0 < hop <= window <= fft_size");
}

void validate_clip(const AudioClip& clip, const MelConfig& config) {
  check(clip.sample_rate_hz == kSampleRateHz, ErrorCode::kSampleRate,
        "expected " + std::to_string(kSampleRateHz) + " Hz audio, got " +
            std::to_string(clip.sample_rate_hz));
  check(static_cast<int64_t>(clip.samples.size()) >= config.window_samples,
        ErrorCode::kInputTooShort,
        "clip has " + std::to_string(clip.samples.size()) + " samples, shorter than one " +
            std::to_string(config.window_samples) + "-sample window");
  for (float s : clip.samples) {
    check(std::isfinite(s) && s >= -1.0f && s <= 1.0f, ErrorCode::kValidation,
          "audio samples must be finite and within [-1, 1]");
  }
}

int64_t mel_frame_count(int64_t n_samples, const MelConfig& config) {
  const int64_t pad = config.fft_size / 2;
  return 1 + (n_samples + 2 * pad - config.fft_size) / config.hop_samples;
}

double hz_to_mel(double hz) {
  if (hz < kMelBreakHz) return hz / kMelLinearHz;
  return kMelBreak + std::log(hz / kMelBreakHz) / kMelLogStep;
}

double mel_to_hz(double mel) {
  if (mel < kMelBreak) return mel * kMelLinearHz;
  return kMelBreakHz * std::exp((mel - kMelBreak) * kMelLogStep);
}

namespace {

std::vector<double> mel_edges_hz(const MelConfig& config, int sample_rate_hz) {
  const double lo = hz_to_mel(0.0);
  const double hi = hz_to_mel(sample_rate_hz / 2.0);
  std::vector<double> edges(config.n_mels + 2);
  for (size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (config.n_mels + 1));
  }
  return edges;
}

}  // namespace

double mel_center_hz(const MelConfig& config, int channel, int sample_rate_hz) {
  check(channel >= 0 && channel < config.n_mels, ErrorCode::kArgument, "mel channel out of range");
  return mel_edges_hz(config, sample_rate_hz)[channel + 1];
}

torch::Tensor mel_filterbank(const MelConfig& config, int sample_rate_hz) {
  config.validate();
  const int n_bins = config.fft_size / 2 + 1;
  const auto edges = mel_edges_hz(config, sample_rate_hz);
  auto fb = torch::zeros({config.n_mels, n_bins}, torch::kFloat64);
  auto acc = fb.accessor<double, 2>();
  for (int m = 0; m < config.n_mels; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    const double norm = 2.0 / (hi - lo);
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate_hz / config.fft_size;
      const double rise = (f - lo) / (center - lo);
      const double fall = (hi - f) / (hi - center);
      acc[m][k] = std::max(0.0, std::min(rise, fall)) * norm;
    }
  }
  return fb;
}

torch::Tensor analysis_window(const MelConfig& config) {
  auto window = torch::zeros({config.fft_size}, torch::kFloat64);
  auto acc = window.accessor<double, 1>();
  const int offset = (config.fft_size - config.window_samples) / 2;
  for (int n = 0; n < config.window_samples; ++n) {
    acc[offset + n] =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / config.window_samples);
  }
  return window;
}

MelSpectrogram compute_mel(const AudioClip& clip, const MelConfig& config) {
  config.validate();
  validate_clip(clip, config);

  const auto n = static_cast<int64_t>(clip.samples.size());
  const int64_t pad = config.fft_size / 2;
  auto padded = torch::empty({n + 2 * pad}, torch::kFloat64);
  auto p = padded.accessor<double, 1>();
  for (int64_t i = 0; i < n + 2 * pad; ++i) {
    p[i] = clip.samples[reflect_index(i - pad, n)];
  }

  auto frames = padded.unfold(0, config.fft_size, config.hop_samples) * analysis_window(config);
  auto power = torch::fft::rfft(frames, c10::nullopt, 1).abs().square();
  auto mel = torch::matmul(power, mel_filterbank(config, clip.sample_rate_hz).t());
  auto values = mel.clamp_min(kMelPowerFloor).log().t().contiguous();
  return {values, config};
}

NormStats fit_norm_stats(std::span<const MelSpectrogram> mels) {
  check(!mels.empty(), ErrorCode::kEmptyDataset, "cannot fit normalisation stats on no spectrograms");
  const int64_t n_mels = mels.front().values.size(0);
  long double sum = 0.0L;
  int64_t count = 0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& mel : mels) {
    check(mel.values.size(0) == n_mels, ErrorCode::kShape, "spectrograms disagree on n_mels");
    auto flat = mel.values.contiguous().to(torch::kFloat64);
    const double* data = flat.data_ptr<double>();
    for (int64_t i = 0; i < flat.numel(); ++i) {
      sum += data[i];
      lo = std::min(lo, data[i]);
      hi = std::max(hi, data[i]);
    }
    count += flat.numel();
  }
  return {static_cast<double>(sum / count), lo, hi, static_cast<int>(n_mels)};
}

NormalizedMel normalize_mel(const MelSpectrogram& mel, const NormStats& stats, NormMode mode) {
  check(stats.max_val > stats.min_val, ErrorCode::kDegenerateRange,
        "normalisation range is degenerate (max == min)");
  check(stats.n_mels == 0 || stats.n_mels == mel.values.size(0), ErrorCode::kShape,
        "normalisation stats were fitted for a different n_mels");
  const double anchor = mode == NormMode::kAsWritten ? stats.mu : stats.min_val;
  auto values = 2.0 * (mel.values - anchor) / (stats.max_val - stats.min_val) - 1.0;
  return {values, stats};
}

nlohmann::json to_json(const NormStats& stats) {
  return {{"mu", stats.mu}, {"min", stats.min_val}, {"max", stats.max_val}, {"n_mels", stats.n_mels}};
}

NormStats norm_stats_from_json(const nlohmann::json& j) {
  try {
    return {j.at("mu").get<double>(), j.at("min").get<double>(), j.at("max").get<double>(),
            j.at("n_mels").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchema, std::string("bad norm stats: ") + e.what());
  }
}

PerturbKind parse_perturb_kind(std::string_view name) {
  if (name == "noise") return PerturbKind::kNoise;
  if (name == "time_warp") return PerturbKind::kTimeWarp;
  if (name == "segment_swap") return PerturbKind::kSegmentSwap;
  fail(ErrorCode::kArgument, "unknown perturbation kind '" + std::string(name) + "'");
}

std::string_view perturb_kind_name(PerturbKind kind) {
  switch (kind) {
    case PerturbKind::kNoise: return "noise";
    case PerturbKind::kTimeWarp: return "time_warp";
    case PerturbKind::kSegmentSwap: return "segment_swap";
  }
  return "unknown";
}

double noise_magnitude_for_snr(double snr_db) { return std::pow(10.0, -snr_db / 20.0); }

double measure_snr_db(std::span<const float> clean, std::span<const float> noisy) {
  check(clean.size() == noisy.size(), ErrorCode::kShape, "SNR needs equal-length signals");
  double signal = 0.0, noise = 0.0;
  for (size_t i = 0; i < clean.size(); ++i) {
    signal += static_cast<double>(clean[i]) * clean[i];
    const double diff = static_cast<double>(noisy[i]) - clean[i];
    noise += diff * diff;
  }
  return 10.0 * std::log10(signal / noise);
}

AudioClip perturb_audio(const AudioClip& clip, PerturbKind kind, double magnitude, uint64_t seed) {
  check(magnitude >= 0.0 && std::isfinite(magnitude), ErrorCode::kArgument,
        "perturbation magnitude must be >= 0");
  if (magnitude == 0.0) return clip;

  std::mt19937_64 rng(seed);
  AudioClip out{{}, clip.sample_rate_hz};
  const auto& x = clip.samples;
  const size_t n = x.size();

  switch (kind) {
    case PerturbKind::kNoise: {
      std::normal_distribution<double> gauss(0.0, 1.0);
      std::vector<double> noise(n);
      double signal_power = 0.0, noise_power = 0.0;
      for (size_t i = 0; i < n; ++i) {
        noise[i] = gauss(rng);
        signal_power += static_cast<double>(x[i]) * x[i];
        noise_power += noise[i] * noise[i];
      }
      const double scale =
          noise_power > 0.0 ? magnitude * std::sqrt(signal_power / noise_power) : 0.0;
      out.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        out.samples[i] = static_cast<float>(std::clamp(x[i] + scale * noise[i], -1.0, 1.0));
      }
      break;
    }
    case PerturbKind::kTimeWarp: {
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const double rate = 1.0 + magnitude * (2.0 * unit(rng) - 1.0);
      const auto m = std::max<size_t>(1, static_cast<size_t>(std::llround(n * rate)));
      out.samples.resize(m);
      for (size_t i = 0; i < m; ++i) {
        const double pos = m == 1 ? 0.0 : static_cast<double>(i) * (n - 1) / (m - 1);
        const auto lo = static_cast<size_t>(pos);
        const size_t hi = std::min(lo + 1, n - 1);
        const double t = pos - lo;
        out.samples[i] = static_cast<float>(std::clamp((1.0 - t) * x[lo] + t * x[hi], -1.0, 1.0));
      }
      break;
    }
    case PerturbKind::kSegmentSwap: {
      std::bernoulli_distribution swap(std::min(magnitude, 1.0));
      constexpr size_t kSegments = 8;
      const size_t seg = n / kSegments;
      out.samples = x;
      for (size_t s = 0; s + 1 < kSegments; s += 2) {
        if (!swap(rng)) continue;
        std::swap_ranges(out.samples.begin() + s * seg, out.samples.begin() + (s + 1) * seg,
                         out.samples.begin() + (s + 1) * seg);
      }
      break;
    }
  }
  return out;
}

namespace {

template <typename T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) fail(ErrorCode::kIo, "truncated WAV file");
  T value = 0;
  for (size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

template <typename T>
void write_le(std::ostream& out, T value) {
  for (size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((value >> (8 * i)) & 0xFF));
}

}  // namespace

AudioClip read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(static_cast<bool>(in), ErrorCode::kIo, "cannot open WAV file " + path);
  char tag[4];
  in.read(tag, 4);
  check(in && std::memcmp(tag, "RIFF", 4) == 0, ErrorCode::kValidation, path + ": not a RIFF file");
  read_le<uint32_t>(in);
  in.read(tag, 4);
  check(in && std::memcmp(tag, "WAVE", 4) == 0, ErrorCode::kValidation, path + ": not a WAVE file");

  bool have_fmt = false;
  AudioClip clip;
  while (in.read(tag, 4)) {
    const auto size = read_le<uint32_t>(in);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      const auto format = read_le<uint16_t>(in);
      const auto channels = read_le<uint16_t>(in);
      const auto rate = read_le<uint32_t>(in);
      read_le<uint32_t>(in);
      read_le<uint16_t>(in);
      const auto bits = read_le<uint16_t>(in);
      check(format == 1 && bits == 16, ErrorCode::kValidation, path + ": only PCM16 WAV is supported");
      check(channels == 1, ErrorCode::kValidation, path + ": only mono WAV is supported");
      check(rate == kSampleRateHz, ErrorCode::kSampleRate,
            path + ": expected 16000 Hz, got " + std::to_string(rate));
      in.ignore(size - 16 + (size & 1));
      clip.sample_rate_hz = static_cast<int>(rate);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      check(have_fmt, ErrorCode::kValidation, path + ": data chunk before fmt chunk");
      clip.samples.resize(size / 2);
      for (auto& s : clip.samples) s = static_cast<float>(static_cast<int16_t>(read_le<uint16_t>(in))) / 32768.0f;
      return clip;
    } else {
      in.ignore(size + (size & 1));
    }
  }
  fail(ErrorCode::kValidation, path + ": no data chunk");
}

void write_wav(const std::string& path, const AudioClip& clip) {
  check(clip.sample_rate_hz == kSampleRateHz, ErrorCode::kSampleRate, "only 16 kHz clips can be written");
  std::ofstream out(path, std::ios::binary);
  check(static_cast<bool>(out), ErrorCode::kIo, "cannot write WAV file " + path);
  const auto data_bytes = static_cast<uint32_t>(clip.samples.size() * 2);
  out.write("RIFF", 4);
  write_le<uint32_t>(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  write_le<uint32_t>(out, 16);
  write_le<uint16_t>(out, 1);
  write_le<uint16_t>(out, 1);
  write_le<uint32_t>(out, kSampleRateHz);
  write_le<uint32_t>(out, kSampleRateHz * 2);
  write_le<uint16_t>(out, 2);
  write_le<uint16_t>(out, 16);
  out.write("data", 4);
  write_le<uint32_t>(out, data_bytes);
  for (float s : clip.samples) {
    const auto q = static_cast<int16_t>(std::lround(std::clamp(s, -1.0f, 1.0f) * 32767.0f));
    write_le<uint16_t>(out, static_cast<uint16_t>(q));
  }
  check(static_cast<bool>(out), ErrorCode::kIo, "failed writing WAV file " + path);
}

}  // namespace asiseg
