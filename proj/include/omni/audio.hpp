#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "omni/error.hpp"
#include "omni/rng.hpp"
#include "omni/tensor.hpp"
#include "omni/wav.hpp"

namespace omni {

// 30 s at 16 kHz; every chunk is padded to exactly this many samples.
constexpr int kChunkSamples = 480000;
constexpr int kMelBins = 128;
constexpr int kStftWindow = 400;
constexpr int kStftHop = 160;
constexpr int kFftBins = kStftWindow / 2 + 1;
constexpr int kMelFrames = kChunkSamples / kStftHop;      // 3000 per chunk
constexpr int kSpeechFrames = kMelFrames / 2;             // 1500 after the 2x-stride encoder
constexpr float kMelFloor = 1e-10f;                       // pre-log clamp
constexpr float kMelFmax = 8000.0f;

struct AudioConfig {
    int chunk_cap = 25;     // inference default; the stage-3 plan uses 20
    int speech_dim = 32;
    int music_dim = 16;
    int music_frame = 3200; // raw-sample stride of the music featurizer -> 150 frames/chunk
    int downsample = 10;    // token downsampling factor
};

struct AudioChunk {
    std::vector<float> samples;  // exactly kChunkSamples, tail zero-padded
};

struct MelGram {
    Tensor values;  // kMelBins x frames
};

// Fused per-chunk features: speech channels first, then music channels.
struct AudioFeatures {
    Tensor values;  // frames x (speech_dim + music_dim)
    int speech_dim = 0;
    int music_dim = 0;
};

// ---------------------------------------------------------------------------
// Chunking

inline std::vector<AudioChunk> chunk_waveform(const Waveform& wav, int chunk_cap = 25) {
    if (wav.samples.empty()) throw InputError("empty waveform");
    const std::size_t n = (wav.samples.size() + kChunkSamples - 1) / kChunkSamples;
    if (n > static_cast<std::size_t>(chunk_cap)) {
        throw InputError("audio needs " + std::to_string(n) + " chunks but the cap is " +
                         std::to_string(chunk_cap) + " (max " +
                         std::to_string(chunk_cap * 30) + " s)");
    }
    std::vector<AudioChunk> chunks(n);
    for (std::size_t i = 0; i < n; ++i) {
        chunks[i].samples.assign(kChunkSamples, 0.0f);
        const std::size_t begin = i * kChunkSamples;
        const std::size_t end = std::min(begin + kChunkSamples, wav.samples.size());
        std::copy(wav.samples.begin() + begin, wav.samples.begin() + end,
                  chunks[i].samples.begin());
    }
    return chunks;
}

// ---------------------------------------------------------------------------
// Mel spectrogram: Hann window 400, hop 160, 128 triangular filters on the
// mel scale over 0..8000 Hz. The chunk tail is zero-padded by window-hop
// samples so a 480,000-sample chunk yields exactly 3000 frames, which keeps
// the downstream 1500-frame / 150-token arithmetic exact.

namespace detail {

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct MelTables {
    std::array<float, kStftWindow> window;                     // periodic Hann
    std::vector<float> cos_table;                              // kFftBins x kStftWindow
    std::vector<float> sin_table;
    std::vector<float> filters;                                // kMelBins x kFftBins
    std::array<double, kMelBins> center_hz;

    MelTables() {
        for (int n = 0; n < kStftWindow; ++n) {
            window[n] = 0.5f - 0.5f * static_cast<float>(
                                          std::cos(2.0 * 3.141592653589793 * n / kStftWindow));
        }
        cos_table.resize(static_cast<std::size_t>(kFftBins) * kStftWindow);
        sin_table.resize(cos_table.size());
        for (int k = 0; k < kFftBins; ++k) {
            for (int n = 0; n < kStftWindow; ++n) {
                const double angle = 2.0 * 3.141592653589793 * k * n / kStftWindow;
                cos_table[static_cast<std::size_t>(k) * kStftWindow + n] =
                    static_cast<float>(std::cos(angle));
                sin_table[static_cast<std::size_t>(k) * kStftWindow + n] =
                    static_cast<float>(std::sin(angle));
            }
        }
        // 130 equally spaced mel points span 0..8000 Hz; filter m is the
        // triangle over points (m, m+1, m+2), peak 1 at the center.
        filters.assign(static_cast<std::size_t>(kMelBins) * kFftBins, 0.0f);
        const double mel_hi = hz_to_mel(kMelFmax);
        std::array<double, kMelBins + 2> edges_hz;
        for (int i = 0; i < kMelBins + 2; ++i) {
            edges_hz[i] = mel_to_hz(mel_hi * i / (kMelBins + 1));
        }
        const double bin_hz = static_cast<double>(kSampleRate) / kStftWindow;
        for (int m = 0; m < kMelBins; ++m) {
            const double lo = edges_hz[m], mid = edges_hz[m + 1], hi = edges_hz[m + 2];
            center_hz[m] = mid;
            for (int k = 0; k < kFftBins; ++k) {
                const double f = k * bin_hz;
                double w = 0.0;
                if (f > lo && f < mid) {
                    w = (f - lo) / (mid - lo);
                } else if (f >= mid && f < hi) {
                    w = (hi - f) / (hi - mid);
                }
                filters[static_cast<std::size_t>(m) * kFftBins + k] = static_cast<float>(w);
            }
        }
    }
};

inline const MelTables& mel_tables() {
    static const MelTables tables;
    return tables;
}

}  // namespace detail

// Center frequency (Hz) of mel filter m; exposed so callers can reason about
// which filters cover a given tone.
inline double mel_filter_center_hz(int m) { return detail::mel_tables().center_hz[m]; }

// Pre-log mel energies, kMelBins x 3000. Nonnegative; scales monotonically
// with input amplitude.
inline Tensor mel_power_spectrogram(const AudioChunk& chunk) {
    if (chunk.samples.size() != kChunkSamples) {
        throw InputError("audio chunk has " + std::to_string(chunk.samples.size()) +
                         " samples, need exactly " + std::to_string(kChunkSamples));
    }
    const detail::MelTables& t = detail::mel_tables();

    Tensor mel({kMelBins, kMelFrames});
    std::array<float, kStftWindow> frame;
    std::array<double, kFftBins> power;
    for (int fi = 0; fi < kMelFrames; ++fi) {
        const int start = fi * kStftHop;
        for (int n = 0; n < kStftWindow; ++n) {
            const int idx = start + n;
            const float s = idx < kChunkSamples ? chunk.samples[idx] : 0.0f;
            frame[n] = s * t.window[n];
        }
        for (int k = 0; k < kFftBins; ++k) {
            const float* ct = &t.cos_table[static_cast<std::size_t>(k) * kStftWindow];
            const float* st = &t.sin_table[static_cast<std::size_t>(k) * kStftWindow];
            float re = 0.0f, im = 0.0f;
            for (int n = 0; n < kStftWindow; ++n) {
                re += frame[n] * ct[n];
                im -= frame[n] * st[n];
            }
            power[k] = static_cast<double>(re) * re + static_cast<double>(im) * im;
        }
        for (int m = 0; m < kMelBins; ++m) {
            const float* fw = &t.filters[static_cast<std::size_t>(m) * kFftBins];
            double acc = 0.0;
            for (int k = 0; k < kFftBins; ++k) acc += fw[k] * power[k];
            mel.at(m, fi) = static_cast<float>(acc);
        }
    }
    return mel;
}

inline MelGram mel_spectrogram(const AudioChunk& chunk) {
    Tensor mel = mel_power_spectrogram(chunk);
    for (float& v : mel.data) v = std::log10(std::max(v, kMelFloor));
    return MelGram{std::move(mel)};
}

// ---------------------------------------------------------------------------
// Speech encoder stand-in: a fixed seeded temporal convolution, kernel 3,
// stride 2, zero padding 1, mapping 128 x 3000 -> 1500 x speech_dim.

struct SpeechEncoder {
    Tensor weight;  // 3 x kMelBins x speech_dim
    Tensor bias;    // 1 x speech_dim

    int dim() const { return weight.shape[2]; }

    static SpeechEncoder seeded(int speech_dim, std::uint64_t seed) {
        Rng rng(seed);
        SpeechEncoder e;
        e.weight = Tensor::random_uniform({3, kMelBins, speech_dim}, rng,
                                          1.0f / std::sqrt(3.0f * kMelBins));
        e.bias = Tensor::random_uniform({1, speech_dim}, rng, 0.1f);
        return e;
    }

    Tensor encode(const MelGram& mel) const {
        if (mel.values.shape[0] != kMelBins) {
            throw InputError("mel spectrogram has " + std::to_string(mel.values.shape[0]) +
                             " bins, need " + std::to_string(kMelBins));
        }
        const int frames = mel.values.shape[1];
        const int out_frames = frames / 2;
        const int d = dim();
        Tensor out({out_frames, d});
        for (int ot = 0; ot < out_frames; ++ot) {
            for (int ch = 0; ch < d; ++ch) out.at(ot, ch) = bias.at(0, ch);
            for (int j = 0; j < 3; ++j) {
                const int it = 2 * ot + j - 1;
                if (it < 0 || it >= frames) continue;
                for (int b = 0; b < kMelBins; ++b) {
                    const float x = mel.values.at(b, it);
                    if (x == 0.0f) continue;
                    for (int ch = 0; ch < d; ++ch) out.at(ot, ch) += x * weight.at(j, b, ch);
                }
            }
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Music encoder stand-in: strided frame-energy featurizer over raw samples.
// Per frame it measures [rms, mean |x|, max |x|, zero-crossing rate] and maps
// the four stats through a fixed seeded affine layer.

struct MusicEncoder {
    Tensor weight;  // 4 x music_dim
    Tensor bias;    // 1 x music_dim
    int frame_len = 3200;

    int dim() const { return weight.shape[1]; }
    int frames_per_chunk() const { return kChunkSamples / frame_len; }

    static MusicEncoder seeded(int music_dim, int frame_len, std::uint64_t seed) {
        Rng rng(seed);
        MusicEncoder e;
        e.weight = Tensor::random_uniform({4, music_dim}, rng, 0.5f);
        e.bias = Tensor::random_uniform({1, music_dim}, rng, 0.1f);
        e.frame_len = frame_len;
        return e;
    }

    // Per-frame measurements [rms, mean |x|, max |x|, zero-crossing rate],
    // M x 4. Kept separate from the affine map so the weight gradient is a
    // plain matmul backward over this matrix.
    Tensor stats(const AudioChunk& chunk) const {
        if (chunk.samples.size() != kChunkSamples) {
            throw InputError("audio chunk has " + std::to_string(chunk.samples.size()) +
                             " samples, need exactly " + std::to_string(kChunkSamples));
        }
        const int m = frames_per_chunk();
        Tensor out({m, 4});
        for (int fi = 0; fi < m; ++fi) {
            const float* s = &chunk.samples[static_cast<std::size_t>(fi) * frame_len];
            double energy = 0.0, mean_abs = 0.0, max_abs = 0.0;
            int crossings = 0;
            for (int n = 0; n < frame_len; ++n) {
                const double v = s[n];
                energy += v * v;
                mean_abs += std::abs(v);
                max_abs = std::max(max_abs, std::abs(v));
                if (n > 0 && ((s[n - 1] < 0.0f) != (s[n] < 0.0f))) ++crossings;
            }
            out.at(fi, 0) = static_cast<float>(std::sqrt(energy / frame_len));
            out.at(fi, 1) = static_cast<float>(mean_abs / frame_len);
            out.at(fi, 2) = static_cast<float>(max_abs);
            out.at(fi, 3) = static_cast<float>(crossings) / frame_len;
        }
        return out;
    }

    Tensor encode_stats(const Tensor& st) const {
        Tensor out = matmul(st, weight);
        for (int i = 0; i < out.shape[0]; ++i) {
            for (int j = 0; j < out.shape[1]; ++j) out.at(i, j) += bias.at(0, j);
        }
        return out;
    }

    Tensor encode(const AudioChunk& chunk) const { return encode_stats(stats(chunk)); }
};

// ---------------------------------------------------------------------------
// Channel fusion and token downsampling

// Aligns music frames to the speech frame count by nearest-frame resampling,
// then concatenates along the channel axis (speech first).
inline AudioFeatures fuse_audio(const Tensor& speech, const Tensor& music) {
    if (speech.rank() != 2 || music.rank() != 2 || speech.numel() == 0 || music.numel() == 0) {
        throw InputError("fuse_audio expects nonempty frames x channels tensors");
    }
    const int frames = speech.shape[0], ds = speech.shape[1];
    const int m = music.shape[0], dm = music.shape[1];
    AudioFeatures fused{Tensor({frames, ds + dm}), ds, dm};
    for (int t = 0; t < frames; ++t) {
        for (int ch = 0; ch < ds; ++ch) fused.values.at(t, ch) = speech.at(t, ch);
        int src = static_cast<int>((static_cast<double>(t) + 0.5) * m / frames);
        if (src >= m) src = m - 1;
        for (int ch = 0; ch < dm; ++ch) fused.values.at(t, ds + ch) = music.at(src, ch);
    }
    return fused;
}

// Non-overlapping mean over groups of `factor` frames: 1500 fused frames
// become the chunk's 150 audio tokens.
inline Tensor downsample_audio_tokens(const AudioFeatures& feats, int factor = 10) {
    const int frames = feats.values.shape[0], channels = feats.values.shape[1];
    if (frames % factor != 0) {
        throw InputError("frame count " + std::to_string(frames) + " not divisible by " +
                         std::to_string(factor));
    }
    Tensor out({frames / factor, channels});
    for (int g = 0; g < frames / factor; ++g) {
        for (int ch = 0; ch < channels; ++ch) {
            double acc = 0.0;
            for (int j = 0; j < factor; ++j) acc += feats.values.at(g * factor + j, ch);
            out.at(g, ch) = static_cast<float>(acc / factor);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Whole front-end bundled with its seeded stand-in encoders. Chunks are
// independent; results are emitted in chunk order.

class AudioFrontend {
public:
    AudioFrontend(AudioConfig cfg, std::uint64_t seed)
        : cfg_(cfg),
          speech_(SpeechEncoder::seeded(cfg.speech_dim, seed)),
          music_(MusicEncoder::seeded(cfg.music_dim, cfg.music_frame, seed + 1)) {}

    const AudioConfig& config() const { return cfg_; }
    const SpeechEncoder& speech_encoder() const { return speech_; }
    const MusicEncoder& music_encoder() const { return music_; }

    AudioFeatures encode_chunk(const AudioChunk& chunk) const {
        const Tensor speech = speech_.encode(mel_spectrogram(chunk));
        const Tensor music = music_.encode(chunk);
        return fuse_audio(speech, music);
    }

    // Per-chunk token tensors, each (kSpeechFrames / downsample) x channels.
    std::vector<Tensor> encode(const Waveform& wav) const {
        std::vector<Tensor> out;
        for (const AudioChunk& chunk : chunk_waveform(wav, cfg_.chunk_cap)) {
            out.push_back(downsample_audio_tokens(encode_chunk(chunk), cfg_.downsample));
        }
        return out;
    }

    int tokens_per_chunk() const { return kSpeechFrames / cfg_.downsample; }

private:
    AudioConfig cfg_;
    SpeechEncoder speech_;
    MusicEncoder music_;
};

}  // namespace omni
