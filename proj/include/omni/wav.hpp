#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "omni/error.hpp"

namespace omni {

constexpr int kSampleRate = 16000;  // the only supported rate; no resampling

// Mono 16 kHz sample buffer in [-1, 1].
struct Waveform {
    std::vector<float> samples;

    static Waveform of(std::vector<float> s) {
        if (s.empty()) throw InputError("empty waveform");
        return Waveform{std::move(s)};
    }
};

namespace detail {

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("truncated WAV file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint16_t read_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    if (!is) throw IoError("truncated WAV file");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u16(std::ostream& os, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace detail

// Reads a RIFF/WAVE file. Accepts PCM-16 mono 16 kHz only; anything else is
// rejected rather than resampled.
inline Waveform read_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    char tag[4];
    is.read(tag, 4);
    if (!is || std::memcmp(tag, "RIFF", 4) != 0) throw IoError("'" + path + "' is not RIFF");
    detail::read_u32(is);  // riff size
    is.read(tag, 4);
    if (!is || std::memcmp(tag, "WAVE", 4) != 0) throw IoError("'" + path + "' is not WAVE");

    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    std::vector<float> samples;
    bool have_data = false;

    while (is.read(tag, 4)) {
        const std::uint32_t size = detail::read_u32(is);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            format = detail::read_u16(is);
            channels = detail::read_u16(is);
            rate = detail::read_u32(is);
            detail::read_u32(is);  // byte rate
            detail::read_u16(is);  // block align
            bits = detail::read_u16(is);
            if (size > 16) is.ignore(size - 16);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!have_fmt) throw IoError("WAV data chunk before fmt chunk");
            if (format != 1) throw InputError("WAV format " + std::to_string(format) +
                                              " unsupported; need PCM");
            if (channels != 1) throw InputError("WAV has " + std::to_string(channels) +
                                                " channels; need mono");
            if (bits != 16) throw InputError("WAV has " + std::to_string(bits) +
                                             "-bit samples; need PCM-16");
            if (rate != kSampleRate) {
                throw InputError("WAV sample rate " + std::to_string(rate) + " Hz rejected; need " +
                                 std::to_string(kSampleRate) + " Hz (no resampling)");
            }
            const std::size_t n = size / 2;
            samples.resize(n);
            std::vector<unsigned char> raw(size);
            is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(size));
            if (!is) throw IoError("truncated WAV data");
            for (std::size_t i = 0; i < n; ++i) {
                const std::int16_t s =
                    static_cast<std::int16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
                samples[i] = static_cast<float>(s) / 32768.0f;
            }
            have_data = true;
        } else {
            is.ignore(size + (size & 1));
        }
        if (have_data) break;
    }
    if (!have_data || samples.empty()) throw IoError("WAV file '" + path + "' has no samples");
    return Waveform{std::move(samples)};
}

inline void write_wav(const std::string& path, const Waveform& wav) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(wav.samples.size() * 2);
    os.write("RIFF", 4);
    detail::write_u32(os, 36 + data_bytes);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    detail::write_u32(os, 16);
    detail::write_u16(os, 1);  // PCM
    detail::write_u16(os, 1);  // mono
    detail::write_u32(os, kSampleRate);
    detail::write_u32(os, kSampleRate * 2);
    detail::write_u16(os, 2);
    detail::write_u16(os, 16);
    os.write("data", 4);
    detail::write_u32(os, data_bytes);
    for (float v : wav.samples) {
        v = v < -1.0f ? -1.0f : (v > 1.0f ? 1.0f : v);
        const std::int16_t s = static_cast<std::int16_t>(v * 32767.0f);
        detail::write_u16(os, static_cast<std::uint16_t>(s));
    }
}

}  // namespace omni
