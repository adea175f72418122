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
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "muscap/autograd.hpp"
#include "muscap/encoder.hpp"

namespace muscap {

/// One auxiliary classification head and the tokens its prediction maps to.
struct HeadConfig {
    std::string name;
    int classes = 1;
    int tokens = 5;
    // Fingerprint of the label vocabulary order; part of the checkpoint digest.
    std::string labels_digest;
};

struct ProjectorConfig {
    int layers = 13;
    int input_dim = 768;
    int lm_dim = 16;
    int content_tokens = 35;
    // Hidden width of every token MLP; 0 means "same as lm_dim".
    int hidden = 0;
    int token_budget = 60;
    std::vector<HeadConfig> heads;
    std::uint64_t seed = 0;

    int hidden_width() const { return hidden > 0 ? hidden : lm_dim; }
    int feature_tokens() const;
    int music_tokens() const { return content_tokens + feature_tokens(); }

    /// Throws ConfigError describing the first violated constraint.
    void validate() const;
    /// Stable fingerprint of everything that fixes parameter shapes and meaning.
    std::string digest() const;
};

/// Default head order: key, instrument, mood, genre, vocals.
std::vector<std::string> default_head_order();

// ---------------------------------------------------------------------------
// Layer weighting

/// Unconstrained parameters mapped onto the probability simplex by a
/// normalised exponential.
struct LayerWeights {
    RowVector raw;

    static LayerWeights uniform(int layers) { return {RowVector::Zero(layers)}; }
    RowVector effective() const;
};

RowVector softmax(const RowVector &raw);

/// Frames x channels: sum over layers of weight[l] * H[l].
Matrix pool_layers(const LayeredEmbedding &h, const RowVector &weights);
/// Mean over the frame axis.
RowVector time_average(const Matrix &pooled);

// ---------------------------------------------------------------------------
// Token blocks

enum class TokenKind { content, feature, query };

const char *to_string(TokenKind kind);

struct TokenBlock {
    Matrix vectors; // n_tokens x d
    TokenKind kind = TokenKind::content;

    Eigen::Index size() const { return vectors.rows(); }
    Eigen::Index dim() const { return vectors.cols(); }
    void validate() const;
};

struct FeaturePrediction {
    RowVector logits;
    RowVector probabilities;

    static FeaturePrediction from_logits(RowVector logits);
};

/// Concatenates content, feature and query rows in that order.
Matrix assemble_tokens(const TokenBlock &content, const TokenBlock &feature, const TokenBlock &query);

// ---------------------------------------------------------------------------
// Projector

struct Parameter {
    std::string group; // checkpoint group, e.g. "content_mlps" or "head_key"
    std::string name;  // unique, e.g. "content_mlps.3.w1"
    Matrix value;
};

class Projector {
  public:
    explicit Projector(ProjectorConfig config);

    const ProjectorConfig &config() const { return config_; }

    std::vector<Parameter> &parameters() { return params_; }
    const std::vector<Parameter> &parameters() const { return params_; }
    Parameter &parameter(const std::string &name);
    const Parameter &parameter(const std::string &name) const;

    LayerWeights content_layer_weights() const;
    LayerWeights shared_layer_weights() const;

    // Inference helpers; no gradients are recorded.
    TokenBlock content_tokens(const LayeredEmbedding &h) const;
    std::vector<FeaturePrediction> feature_logits(const LayeredEmbedding &h) const;
    TokenBlock feature_tokens(const std::vector<FeaturePrediction> &preds) const;
    /// Content rows followed by feature rows.
    Matrix music_tokens(const LayeredEmbedding &h) const;

    /// Differentiable forward pass from per-layer time averages (layers x D).
    /// Because pooling is linear, averaging over time before weighting the
    /// layers gives the same result as the other order.
    struct Graph {
        std::vector<ad::Var> params; // parallel to parameters()
        ad::Var content;             // M x d
        std::vector<ad::Var> logits; // one 1 x C_k row per head
        ad::Var feature;             // N x d
    };
    Graph build(ad::Tape &tape, const Matrix &layer_means, bool trainable) const;

    /// Fingerprint of all parameter values.
    std::uint64_t parameter_hash() const;

    // Checkpoints: JSON with named parameter groups and the config digest.
    nlohmann::json to_json() const;
    static Projector from_json(const nlohmann::json &j, const std::string &expected_digest);

  private:
    void check_embedding(const LayeredEmbedding &h) const;
    ad::Var token_mlp(ad::Tape &tape, const Graph &g, std::size_t first_param, const ad::Var &x) const;

    ProjectorConfig config_;
    std::vector<Parameter> params_;
    std::size_t content_layer_index_ = 0;
    std::size_t shared_layer_index_ = 0;
    std::vector<std::size_t> content_mlp_first_;
    std::vector<std::size_t> head_first_;
    std::vector<std::vector<std::size_t>> feat_mlp_first_;
};

nlohmann::json to_json(const ProjectorConfig &config);
ProjectorConfig projector_config_from_json(const nlohmann::json &j);

void save_checkpoint(const std::filesystem::path &path, const Projector &projector,
                     const nlohmann::json &extra = nlohmann::json::object());
/// Loads and verifies the digest; `extra_out` receives the extra payload.
Projector load_checkpoint(const std::filesystem::path &path, const std::string &expected_digest,
                          nlohmann::json *extra_out = nullptr);
/// Reads a checkpoint's embedded extra payload without building the projector.
nlohmann::json read_checkpoint_extra(const std::filesystem::path &path);

} // namespace muscap
