#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

namespace asiseg {

inline constexpr int kSampleRateHz = 16000;

// Power values are clamped to this before the natural log, so silence maps to
// log(kMelPowerFloor) everywhere.
inline constexpr double kMelPowerFloor = 1e-10;

struct AudioClip {
  std::vector<float> samples;
  int sample_rate_hz = kSampleRateHz;
};

struct MelConfig {
  int n_mels = 80;
  int window_samples = 400;  // 25 ms
  int hop_samples = 160;     // 10 ms
  int fft_size = 512;

  void validate() const;
};

// Log-mel matrix [n_mels, frames], float64.
struct MelSpectrogram {
  torch::Tensor values;
  MelConfig config;

  int64_t frames() const { return values.size(1); }
};

struct NormStats {
  double mu = 0.0;
  double min_val = 0.0;
  double max_val = 0.0;
  int n_mels = 0;
};

// kAsWritten: 2 (x - mu) / (max - min) - 1, which sends mu to -1.
// kMinAnchored: 2 (x - min) / (max - min) - 1, the symmetric [-1, 1] variant.
enum class NormMode { kAsWritten, kMinAnchored };

struct NormalizedMel {
  torch::Tensor values;  // [n_mels, frames], float64
  NormStats stats_used;
};

enum class PerturbKind { kNoise, kTimeWarp, kSegmentSwap };

// Throws kInputTooShort / kSampleRate / kValidation on bad clips.
void validate_clip(const AudioClip& clip, const MelConfig& config = {});

int64_t mel_frame_count(int64_t n_samples, const MelConfig& config);

// Slaney-style mel scale (linear below 1 kHz, logarithmic above).
double hz_to_mel(double hz);
double mel_to_hz(double mel);
double mel_center_hz(const MelConfig& config, int channel, int sample_rate_hz = kSampleRateHz);

// Area-normalised triangular filters, [n_mels, fft_size / 2 + 1], float64.
torch::Tensor mel_filterbank(const MelConfig& config, int sample_rate_hz = kSampleRateHz);

// Periodic Hann window of window_samples, zero-padded (centred) to fft_size.
torch::Tensor analysis_window(const MelConfig& config);

// Centre-padded (reflect, fft_size / 2 each side) STFT power -> mel -> log.
MelSpectrogram compute_mel(const AudioClip& clip, const MelConfig& config = {});

NormStats fit_norm_stats(std::span<const MelSpectrogram> mels);
NormalizedMel normalize_mel(const MelSpectrogram& mel, const NormStats& stats,
                            NormMode mode = NormMode::kAsWritten);

nlohmann::json to_json(const NormStats& stats);
NormStats norm_stats_from_json(const nlohmann::json& j);

PerturbKind parse_perturb_kind(std::string_view name);
std::string_view perturb_kind_name(PerturbKind kind);

// Noise magnitude is the noise-to-signal RMS ratio, so SNR_dB = -20 log10(m).
double noise_magnitude_for_snr(double snr_db);
double measure_snr_db(std::span<const float> clean, std::span<const float> noisy);

// magnitude 0 returns the input unchanged for every kind.
//   kNoise:       white noise at RMS ratio `magnitude` of the signal RMS
//   kTimeWarp:    resample by a factor in [1 - magnitude, 1 + magnitude]
//   kSegmentSwap: each adjacent pair of 1/8-length segments swaps with
//                 probability `magnitude`
AudioClip perturb_audio(const AudioClip& clip, PerturbKind kind, double magnitude,
                        uint64_t seed = 0);

// RIFF/WAVE, PCM16, mono, 16 kHz. Other formats are rejected.
AudioClip read_wav(const std::string& path);
void write_wav(const std::string& path, const AudioClip& clip);

}  // namespace asiseg
