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

#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "muscap/audio.hpp"

namespace muscap {

struct EncoderConfig {
    double sample_rate = 24000.0;
    int layers = 13;
    int dim = 768;
    double frames_per_second = 75.0;
    // Analysis window length in hops. 1 gives non-overlapping frames.
    int window_hops = 1;
    int bands = 32;
    std::uint64_t seed = 0;

    std::size_t hop() const;
    std::size_t window() const { return hop() * static_cast<std::size_t>(window_hops); }
    void validate() const;
};

/// Hierarchical encoder output with layer, frame and channel axes.
class LayeredEmbedding {
  public:
    LayeredEmbedding() = default;
    LayeredEmbedding(int layers, Eigen::Index frames, Eigen::Index dim);
    explicit LayeredEmbedding(std::vector<Eigen::MatrixXd> layers);

    int layers() const { return static_cast<int>(layers_.size()); }
    Eigen::Index frames() const { return layers_.empty() ? 0 : layers_.front().rows(); }
    Eigen::Index dim() const { return layers_.empty() ? 0 : layers_.front().cols(); }

    /// Frames x channels matrix for one layer.
    const Eigen::MatrixXd &layer(int l) const { return layers_.at(static_cast<std::size_t>(l)); }
    Eigen::MatrixXd &layer(int l) { return layers_.at(static_cast<std::size_t>(l)); }

    double operator()(int l, Eigen::Index t, Eigen::Index d) const {
        return layers_[static_cast<std::size_t>(l)](t, d);
    }

    /// Layers x channels matrix of per-layer means over time.
    Eigen::MatrixXd time_average_per_layer() const;

    bool all_finite() const;
    void validate() const;

  private:
    std::vector<Eigen::MatrixXd> layers_;
};

class AudioEncoder {
  public:
    virtual ~AudioEncoder() = default;

    virtual LayeredEmbedding encode(const AudioClip &clip) const = 0;
    virtual const EncoderConfig &config() const = 0;
    /// Fingerprint of the (frozen) parameters.
    virtual std::uint64_t parameter_hash() const = 0;
};

// Frozen spectral encoder: per frame, Hann-windowed log band energies are
// lifted to every layer through a fixed seeded projection and a tanh.
// Frames start at multiples of the hop and are zero padded at the end, so the
// number of frames is ceil(samples / hop).
class ToyEncoder final : public AudioEncoder {
  public:
    explicit ToyEncoder(EncoderConfig config);

    LayeredEmbedding encode(const AudioClip &clip) const override;
    const EncoderConfig &config() const override { return config_; }
    std::uint64_t parameter_hash() const override;

    /// Band energy features, frames x bands, before the layer projections.
    Eigen::MatrixXd band_features(const AudioClip &clip) const;

  private:
    EncoderConfig config_;
    std::size_t window_ = 0;
    std::vector<int> band_of_bin_;
    Eigen::MatrixXd cos_table_;
    Eigen::MatrixXd sin_table_;
    Eigen::RowVectorXd hann_;
    std::vector<Eigen::MatrixXd> projections_;
    std::vector<Eigen::RowVectorXd> biases_;
};

/// Validates `clip`, resamples it to the configured rate and encodes it.
LayeredEmbedding encode(const AudioClip &clip, const AudioEncoder &encoder);

/// Convenience: toy encoder built from `config` with its seed replaced.
LayeredEmbedding toy_encode(const AudioClip &clip, std::uint64_t seed, EncoderConfig config = {});

std::unique_ptr<AudioEncoder> make_encoder(const EncoderConfig &config);

} // namespace muscap
