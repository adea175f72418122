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

#pragma once

#include <filesystem>
#include <vector>

namespace muscap {

/// Mono audio with amplitudes nominally in [-1, 1].
struct AudioClip {
    std::vector<double> samples;
    double sample_rate = 0.0;

    double duration_s() const {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }

    /// Throws InvalidInput when empty, when the rate is not positive, or when
    /// any sample is non-finite.
    void validate() const;
};

/// Returns samples [begin, begin + count) as a new clip, clamped to the end.
AudioClip slice(const AudioClip &clip, std::size_t begin, std::size_t count);

/// Linear-interpolation resampling. Identity when the rates already agree.
AudioClip resample_linear(const AudioClip &clip, double target_rate);

// WAV I/O. Reads 8/16/24/32-bit integer PCM and 32/64-bit float; multichannel
// input is downmixed by channel mean. Throws IoError on unreadable or
// malformed files.
AudioClip read_wav(const std::filesystem::path &path);
void write_wav(const std::filesystem::path &path, const AudioClip &clip);

} // namespace muscap
