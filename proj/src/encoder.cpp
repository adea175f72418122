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

#include "muscap/encoder.hpp"

#include <cmath>
#include <string>

#include "muscap/error.hpp"
#include "muscap/hash.hpp"
#include "muscap/random.hpp"

namespace muscap {

namespace {
constexpr double kTwoPi = 6.283185307179586476925;
}

std::size_t EncoderConfig::hop() const {
    const double h = std::round(sample_rate / frames_per_second);
    return h < 1.0 ? 1 : static_cast<std::size_t>(h);
}

void EncoderConfig::validate() const {
    if (!(sample_rate > 0)) {
        throw ConfigError("encoder.sample_rate must be positive");
    }
    if (layers < 1) {
        throw ConfigError("encoder.layers must be >= 1");
    }
    if (dim < 1) {
        throw ConfigError("encoder.dim must be >= 1");
    }
    if (!(frames_per_second > 0)) {
        throw ConfigError("encoder.frames_per_second must be positive");
    }
    if (window_hops < 1) {
        throw ConfigError("encoder.window_hops must be >= 1");
    }
    if (bands < 1) {
        throw ConfigError("encoder.bands must be >= 1");
    }
}

// ---------------------------------------------------------------------------

LayeredEmbedding::LayeredEmbedding(int layers, Eigen::Index frames, Eigen::Index dim)
    : layers_(static_cast<std::size_t>(layers), Eigen::MatrixXd::Zero(frames, dim)) {
    validate();
}

LayeredEmbedding::LayeredEmbedding(std::vector<Eigen::MatrixXd> layers)
    : layers_(std::move(layers)) {
    validate();
}

Eigen::MatrixXd LayeredEmbedding::time_average_per_layer() const {
    Eigen::MatrixXd out(layers(), dim());
    for (int l = 0; l < layers(); ++l) {
        out.row(l) = layers_[static_cast<std::size_t>(l)].colwise().mean();
    }
    return out;
}

bool LayeredEmbedding::all_finite() const {
    for (const auto &m : layers_) {
        if (!m.allFinite()) {
            return false;
        }
    }
    return true;
}

void LayeredEmbedding::validate() const {
    if (layers_.empty()) {
        throw ShapeError("layered embedding needs at least one layer");
    }
    const Eigen::Index t = layers_.front().rows();
    const Eigen::Index d = layers_.front().cols();
    if (t < 1 || d < 1) {
        throw ShapeError("layered embedding needs at least one frame and one channel");
    }
    for (const auto &m : layers_) {
        if (m.rows() != t || m.cols() != d) {
            throw ShapeError("layered embedding layers differ in shape");
        }
    }
}

// ---------------------------------------------------------------------------

ToyEncoder::ToyEncoder(EncoderConfig config) : config_(config) {
    config_.validate();
    window_ = config_.window();
    const std::size_t bins = window_ / 2 + 1;

    // Bin 0 (DC) is skipped; bins 1..bins-1 are spread over the bands on a
    // log-frequency axis.
    band_of_bin_.assign(bins, -1);
    const std::size_t top = bins > 1 ? bins - 1 : 1;
    for (std::size_t k = 1; k < bins; ++k) {
        const double pos = std::log(static_cast<double>(k)) / std::log(static_cast<double>(top) + 1.0);
        const int b = static_cast<int>(std::floor(pos * config_.bands));
        band_of_bin_[k] = std::min(b, config_.bands - 1);
    }

    cos_table_.resize(static_cast<Eigen::Index>(window_), static_cast<Eigen::Index>(bins));
    sin_table_.resize(static_cast<Eigen::Index>(window_), static_cast<Eigen::Index>(bins));
    for (std::size_t n = 0; n < window_; ++n) {
        for (std::size_t k = 0; k < bins; ++k) {
            // Reduce n*k modulo the window before scaling to keep the phase exact.
            const double phase = kTwoPi * static_cast<double>((n * k) % window_) / window_;
            cos_table_(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) = std::cos(phase);
            sin_table_(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) = -std::sin(phase);
        }
    }
    hann_.resize(static_cast<Eigen::Index>(window_));
    for (std::size_t n = 0; n < window_; ++n) {
        hann_(static_cast<Eigen::Index>(n)) =
            window_ == 1 ? 1.0 : 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(n) / window_);
    }

    const double stddev = 1.0 / std::sqrt(static_cast<double>(config_.bands));
    for (int l = 0; l < config_.layers; ++l) {
        Rng rng(mix_seed(config_.seed, static_cast<std::uint64_t>(l)));
        projections_.push_back(rng.normal_matrix(config_.bands, config_.dim, stddev));
        biases_.push_back(rng.uniform_matrix(1, config_.dim, 0.1).row(0));
    }
}

Eigen::MatrixXd ToyEncoder::band_features(const AudioClip &clip) const {
    const std::size_t hop = config_.hop();
    const std::size_t n = clip.samples.size();
    const std::size_t frames = (n + hop - 1) / hop;
    const auto bins = cos_table_.cols();
    const double norm = 2.0 / hann_.sum();

    Eigen::MatrixXd features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(frames), config_.bands);
    Eigen::RowVectorXd frame(static_cast<Eigen::Index>(window_));
    for (std::size_t f = 0; f < frames; ++f) {
        frame.setZero();
        const std::size_t start = f * hop;
        for (std::size_t i = 0; i < window_ && start + i < n; ++i) {
            frame(static_cast<Eigen::Index>(i)) = clip.samples[start + i];
        }
        frame.array() *= hann_.array();
        const Eigen::RowVectorXd re = frame * cos_table_;
        const Eigen::RowVectorXd im = frame * sin_table_;
        for (Eigen::Index k = 1; k < bins; ++k) {
            const int b = band_of_bin_[static_cast<std::size_t>(k)];
            const double power = (re(k) * re(k) + im(k) * im(k)) * norm * norm;
            features(static_cast<Eigen::Index>(f), b) += power;
        }
    }
    return features.unaryExpr([](double e) { return std::log1p(10.0 * e); });
}

LayeredEmbedding ToyEncoder::encode(const AudioClip &clip) const {
    clip.validate();
    if (clip.sample_rate != config_.sample_rate) {
        return encode(resample_linear(clip, config_.sample_rate));
    }
    const Eigen::MatrixXd features = band_features(clip);
    std::vector<Eigen::MatrixXd> layers;
    layers.reserve(projections_.size());
    for (std::size_t l = 0; l < projections_.size(); ++l) {
        Eigen::MatrixXd h = features * projections_[l];
        h.rowwise() += biases_[l];
        layers.push_back(h.array().tanh().matrix());
    }
    return LayeredEmbedding(std::move(layers));
}

std::uint64_t ToyEncoder::parameter_hash() const {
    Fnv1a64 h;
    for (std::size_t l = 0; l < projections_.size(); ++l) {
        h.update(projections_[l]);
        h.update(Eigen::MatrixXd(biases_[l]));
    }
    h.update(cos_table_);
    h.update(sin_table_);
    return h.value();
}

LayeredEmbedding encode(const AudioClip &clip, const AudioEncoder &encoder) {
    clip.validate();
    LayeredEmbedding out = encoder.encode(clip);
    if (!out.all_finite()) {
        throw NumericalError("encoder produced non-finite embeddings");
    }
    return out;
}

LayeredEmbedding toy_encode(const AudioClip &clip, std::uint64_t seed, EncoderConfig config) {
    config.seed = seed;
    return encode(clip, ToyEncoder(config));
}

std::unique_ptr<AudioEncoder> make_encoder(const EncoderConfig &config) {
    return std::make_unique<ToyEncoder>(config);
}

} // namespace muscap
