/*
 * Copyright 2026 The muscap Authors. All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "muscap/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "muscap/error.hpp"

namespace muscap {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t read_u32(const unsigned char *p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char *p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string &out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

void put_u16(std::string &out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

double decode_sample(const unsigned char *p, std::uint16_t format, std::uint16_t bits) {
    if (format == kFormatFloat) {
        if (bits == 32) {
            float f;
            std::uint32_t u = read_u32(p);
            std::memcpy(&f, &u, sizeof f);
            return f;
        }
        std::uint64_t u = static_cast<std::uint64_t>(read_u32(p)) |
                          (static_cast<std::uint64_t>(read_u32(p + 4)) << 32);
        double d;
        std::memcpy(&d, &u, sizeof d);
        return d;
    }
    switch (bits) {
    case 8:
        return (static_cast<double>(p[0]) - 128.0) / 128.0;
    case 16:
        return static_cast<std::int16_t>(read_u16(p)) / 32768.0;
    case 24: {
        std::int32_t v = p[0] | (p[1] << 8) | (p[2] << 16);
        if (v & 0x800000) {
            v |= ~0xFFFFFF;
        }
        return v / 8388608.0;
    }
    case 32:
        return static_cast<std::int32_t>(read_u32(p)) / 2147483648.0;
    default:
        throw IoError("wav: unsupported PCM bit depth " + std::to_string(bits));
    }
}

} // namespace

void AudioClip::validate() const {
    if (samples.empty()) {
        throw InvalidInput("audio clip has no samples");
    }
    if (!(sample_rate > 0) || !std::isfinite(sample_rate)) {
        throw InvalidInput("audio clip sample rate must be positive");
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!std::isfinite(samples[i])) {
            throw InvalidInput("audio clip has a non-finite sample at index " + std::to_string(i));
        }
    }
}

AudioClip slice(const AudioClip &clip, std::size_t begin, std::size_t count) {
    AudioClip out;
    out.sample_rate = clip.sample_rate;
    if (begin >= clip.samples.size()) {
        return out;
    }
    const std::size_t end = std::min(clip.samples.size(), begin + count);
    out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                       clip.samples.begin() + static_cast<std::ptrdiff_t>(end));
    return out;
}

AudioClip resample_linear(const AudioClip &clip, double target_rate) {
    clip.validate();
    if (!(target_rate > 0)) {
        throw InvalidInput("resample target rate must be positive");
    }
    if (target_rate == clip.sample_rate) {
        return clip;
    }
    const double ratio = clip.sample_rate / target_rate;
    const auto n_out = static_cast<std::size_t>(
        std::max(1.0, std::floor(static_cast<double>(clip.samples.size()) / ratio)));
    AudioClip out;
    out.sample_rate = target_rate;
    out.samples.resize(n_out);
    const std::size_t last = clip.samples.size() - 1;
    for (std::size_t i = 0; i < n_out; ++i) {
        const double pos = static_cast<double>(i) * ratio;
        const auto lo = std::min(static_cast<std::size_t>(pos), last);
        const std::size_t hi = std::min(lo + 1, last);
        const double frac = pos - static_cast<double>(lo);
        out.samples[i] = clip.samples[lo] * (1.0 - frac) + clip.samples[hi] * frac;
    }
    return out;
}

AudioClip read_wav(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open audio file: " + path.string());
    }
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto *data = reinterpret_cast<const unsigned char *>(bytes.data());
    if (bytes.size() < 12 || std::memcmp(data, "RIFF", 4) != 0 ||
        std::memcmp(data + 8, "WAVE", 4) != 0) {
        throw IoError("not a RIFF/WAVE file: " + path.string());
    }

    std::uint16_t format = 0;
    std::uint16_t channels = 0;
    std::uint32_t rate = 0;
    std::uint16_t bits = 0;
    const unsigned char *pcm = nullptr;
    std::size_t pcm_size = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char *chunk = data + pos;
        const std::uint32_t size = read_u32(chunk + 4);
        const std::size_t body = pos + 8;
        const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (avail < 16) {
                throw IoError("wav: truncated fmt chunk in " + path.string());
            }
            format = read_u16(data + body);
            channels = read_u16(data + body + 2);
            rate = read_u32(data + body + 4);
            bits = read_u16(data + body + 14);
            if (format == kFormatExtensible && avail >= 26) {
                format = read_u16(data + body + 24);
            }
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            pcm = data + body;
            pcm_size = avail;
        }
        pos = body + size + (size & 1U);
    }

    if (channels == 0 || rate == 0 || bits == 0) {
        throw IoError("wav: missing or invalid fmt chunk in " + path.string());
    }
    if (pcm == nullptr) {
        throw IoError("wav: missing data chunk in " + path.string());
    }
    if (format != kFormatPcm && format != kFormatFloat) {
        throw IoError("wav: unsupported sample format " + std::to_string(format));
    }
    if (format == kFormatFloat && bits != 32 && bits != 64) {
        throw IoError("wav: unsupported float bit depth " + std::to_string(bits));
    }

    const std::size_t width = bits / 8;
    const std::size_t frame = width * channels;
    const std::size_t frames = pcm_size / frame;
    AudioClip clip;
    clip.sample_rate = rate;
    clip.samples.resize(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
            acc += decode_sample(pcm + f * frame + c * width, format, bits);
        }
        clip.samples[f] = acc / channels;
    }
    return clip;
}

void write_wav(const std::filesystem::path &path, const AudioClip &clip) {
    clip.validate();
    const auto n = static_cast<std::uint32_t>(clip.samples.size());
    const auto rate = static_cast<std::uint32_t>(std::lround(clip.sample_rate));
    std::string out;
    out.reserve(44 + 4 * static_cast<std::size_t>(n));
    out += "RIFF";
    put_u32(out, 36 + 4 * n);
    out += "WAVEfmt ";
    put_u32(out, 16);
    put_u16(out, kFormatFloat);
    put_u16(out, 1);
    put_u32(out, rate);
    put_u32(out, rate * 4);
    put_u16(out, 4);
    put_u16(out, 32);
    out += "data";
    put_u32(out, 4 * n);
    for (double s : clip.samples) {
        const auto f = static_cast<float>(s);
        std::uint32_t u;
        std::memcpy(&u, &f, sizeof u);
        put_u32(out, u);
    }
    std::ofstream file(path, std::ios::binary);
    if (!file) {
        throw IoError("cannot write audio file: " + path.string());
    }
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
}

} // namespace muscap
