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

#include "muscap/projector.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "muscap/error.hpp"
#include "muscap/hash.hpp"
#include "muscap/random.hpp"

namespace muscap {

using nlohmann::json;

namespace {

constexpr const char *kCheckpointFormat = "muscap-projector/1";

std::uint64_t name_salt(const std::string &name) { return Fnv1a64().update(name).value(); }

json matrix_to_json(const Matrix &m) {
    std::vector<double> data(static_cast<std::size_t>(m.size()));
    // Row-major on disk.
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
        }
    }
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix matrix_from_json(const json &j, const std::string &name) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
        throw ConfigError("checkpoint: malformed tensor " + name);
    }
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
        }
    }
    return m;
}

} // namespace

std::vector<std::string> default_head_order() {
    return {"key", "instrument", "mood", "genre", "vocals"};
}

int ProjectorConfig::feature_tokens() const {
    int n = 0;
    for (const auto &h : heads) {
        n += h.tokens;
    }
    return n;
}

void ProjectorConfig::validate() const {
    auto fail = [](const std::string &msg) { throw ConfigError("projector." + msg); };
    if (layers < 1) {
        fail("layers must be >= 1");
    }
    if (input_dim < 1) {
        fail("input_dim must be >= 1");
    }
    if (lm_dim < 1) {
        fail("lm_dim must be >= 1");
    }
    if (content_tokens < 1) {
        fail("content_tokens must be >= 1");
    }
    if (hidden < 0) {
        fail("hidden must be >= 0");
    }
    std::set<std::string> names;
    for (const auto &h : heads) {
        if (h.name.empty()) {
            fail("heads: every head needs a name");
        }
        if (!names.insert(h.name).second) {
            fail("heads: duplicate head '" + h.name + "'");
        }
        if (h.classes < 1) {
            fail("heads." + h.name + ".classes must be >= 1");
        }
        if (h.tokens < 1) {
            fail("heads." + h.name + ".tokens must be >= 1");
        }
    }
    if (music_tokens() != token_budget) {
        std::ostringstream msg;
        msg << "token_budget: content_tokens (" << content_tokens << ") + feature tokens ("
            << feature_tokens() << ") = " << music_tokens() << " but token_budget is "
            << token_budget;
        fail(msg.str());
    }
}

json to_json(const ProjectorConfig &c) {
    json heads = json::array();
    for (const auto &h : c.heads) {
        heads.push_back({{"name", h.name},
                         {"classes", h.classes},
                         {"tokens", h.tokens},
                         {"labels_digest", h.labels_digest}});
    }
    return json{{"layers", c.layers},
                {"input_dim", c.input_dim},
                {"lm_dim", c.lm_dim},
                {"content_tokens", c.content_tokens},
                {"hidden", c.hidden},
                {"token_budget", c.token_budget},
                {"heads", heads},
                {"seed", c.seed}};
}

ProjectorConfig projector_config_from_json(const json &j) {
    ProjectorConfig c;
    c.layers = j.value("layers", c.layers);
    c.input_dim = j.value("input_dim", c.input_dim);
    c.lm_dim = j.value("lm_dim", c.lm_dim);
    c.content_tokens = j.value("content_tokens", c.content_tokens);
    c.hidden = j.value("hidden", c.hidden);
    c.token_budget = j.value("token_budget", c.token_budget);
    c.seed = j.value("seed", c.seed);
    if (j.contains("heads")) {
        for (const auto &h : j.at("heads")) {
            HeadConfig head;
            head.name = h.at("name").get<std::string>();
            head.classes = h.at("classes").get<int>();
            head.tokens = h.value("tokens", 5);
            head.labels_digest = h.value("labels_digest", std::string());
            c.heads.push_back(head);
        }
    }
    return c;
}

std::string ProjectorConfig::digest() const {
    json j = to_json(*this);
    j.erase("seed"); // initialisation only, not compatibility
    return Fnv1a64().update(j.dump()).hex();
}

// ---------------------------------------------------------------------------

RowVector softmax(const RowVector &raw) {
    if (raw.size() == 0) {
        throw ShapeError("softmax of an empty vector");
    }
    const double mx = raw.maxCoeff();
    RowVector e = (raw.array() - mx).exp().matrix();
    return e / e.sum();
}

RowVector LayerWeights::effective() const { return softmax(raw); }

Matrix pool_layers(const LayeredEmbedding &h, const RowVector &weights) {
    if (weights.size() != h.layers()) {
        std::ostringstream msg;
        msg << "pool_layers: " << weights.size() << " weights for " << h.layers() << " layers";
        throw ShapeError(msg.str());
    }
    Matrix out = Matrix::Zero(h.frames(), h.dim());
    for (int l = 0; l < h.layers(); ++l) {
        out += weights(l) * h.layer(l);
    }
    return out;
}

RowVector time_average(const Matrix &pooled) {
    if (pooled.rows() < 1) {
        throw ShapeError("time_average: no frames");
    }
    return pooled.colwise().mean();
}

const char *to_string(TokenKind kind) {
    switch (kind) {
    case TokenKind::content:
        return "content";
    case TokenKind::feature:
        return "feature";
    case TokenKind::query:
        return "query";
    }
    return "unknown";
}

void TokenBlock::validate() const {
    if (vectors.rows() < 1) {
        throw ShapeError(std::string(to_string(kind)) + " token block is empty");
    }
    if (!vectors.allFinite()) {
        throw NumericalError(std::string(to_string(kind)) + " token block has non-finite entries");
    }
}

FeaturePrediction FeaturePrediction::from_logits(RowVector logits) {
    FeaturePrediction p;
    p.probabilities = logits.unaryExpr([](double x) { return ad::sigmoid_value(x); });
    p.logits = std::move(logits);
    return p;
}

Matrix assemble_tokens(const TokenBlock &content, const TokenBlock &feature, const TokenBlock &query) {
    content.validate();
    feature.validate();
    query.validate();
    if (content.dim() != feature.dim() || content.dim() != query.dim()) {
        std::ostringstream msg;
        msg << "assemble_tokens: token widths differ (content " << content.dim() << ", feature "
            << feature.dim() << ", query " << query.dim() << ")";
        throw ShapeError(msg.str());
    }
    Matrix out(content.size() + feature.size() + query.size(), content.dim());
    out.topRows(content.size()) = content.vectors;
    out.middleRows(content.size(), feature.size()) = feature.vectors;
    out.bottomRows(query.size()) = query.vectors;
    return out;
}

// ---------------------------------------------------------------------------

Projector::Projector(ProjectorConfig config) : config_(std::move(config)) {
    config_.validate();
    const int L = config_.layers;
    const int D = config_.input_dim;
    const int d = config_.lm_dim;
    const int h = config_.hidden_width();
    const double final_bound = 1.0 / std::sqrt(static_cast<double>(d));

    auto add = [this](std::string group, std::string name, Matrix value) {
        params_.push_back({std::move(group), std::move(name), std::move(value)});
        return params_.size() - 1;
    };
    // Appends w1, b1, w2, b2 of one token MLP and returns the index of w1.
    auto add_mlp = [&](const std::string &group, const std::string &prefix, int in,
                       std::uint64_t seed) {
        Rng rng(seed);
        const double first_bound = 1.0 / std::sqrt(static_cast<double>(in));
        const std::size_t first = add(group, prefix + ".w1", rng.uniform_matrix(in, h, first_bound));
        add(group, prefix + ".b1", Matrix::Zero(1, h));
        add(group, prefix + ".w2", rng.uniform_matrix(h, d, final_bound));
        add(group, prefix + ".b2", Matrix::Zero(1, d));
        return first;
    };

    content_layer_index_ = add("content_layer_weights", "content_layer_weights.raw", Matrix::Zero(1, L));
    shared_layer_index_ = add("shared_layer_weights", "shared_layer_weights.raw", Matrix::Zero(1, L));

    for (int m = 0; m < config_.content_tokens; ++m) {
        const std::string prefix = "content_mlps." + std::to_string(m);
        content_mlp_first_.push_back(
            add_mlp("content_mlps", prefix, D, mix_seed(config_.seed, name_salt(prefix))));
    }

    // Head parameters are seeded by head name, so reordering heads in the
    // config reorders blocks without changing any head's initial weights.
    for (const auto &head : config_.heads) {
        const std::string group = "head_" + head.name;
        Rng rng(mix_seed(config_.seed, name_salt(group)));
        const double bound = 1.0 / std::sqrt(static_cast<double>(D));
        head_first_.push_back(add(group, group + ".w", rng.uniform_matrix(D, head.classes, bound)));
        add(group, group + ".b", Matrix::Zero(1, head.classes));
    }
    for (const auto &head : config_.heads) {
        const std::string group = "feat_mlp_" + head.name;
        std::vector<std::size_t> firsts;
        for (int j = 0; j < head.tokens; ++j) {
            const std::string prefix = group + "." + std::to_string(j);
            firsts.push_back(add_mlp(group, prefix, head.classes, mix_seed(config_.seed, name_salt(prefix))));
        }
        feat_mlp_first_.push_back(std::move(firsts));
    }
}

Parameter &Projector::parameter(const std::string &name) {
    for (auto &p : params_) {
        if (p.name == name) {
            return p;
        }
    }
    throw InvalidInput("projector has no parameter named " + name);
}

const Parameter &Projector::parameter(const std::string &name) const {
    return const_cast<Projector *>(this)->parameter(name);
}

LayerWeights Projector::content_layer_weights() const {
    return {params_[content_layer_index_].value.row(0)};
}

LayerWeights Projector::shared_layer_weights() const {
    return {params_[shared_layer_index_].value.row(0)};
}

void Projector::check_embedding(const LayeredEmbedding &h) const {
    if (h.layers() != config_.layers || h.dim() != config_.input_dim) {
        std::ostringstream msg;
        msg << "projector expects " << config_.layers << " layers of width " << config_.input_dim
            << ", got " << h.layers() << " x " << h.dim();
        throw ShapeError(msg.str());
    }
}

ad::Var Projector::token_mlp(ad::Tape &, const Graph &g, std::size_t first, const ad::Var &x) const {
    const ad::Var hidden = ad::gelu(ad::add_row(ad::matmul(x, g.params[first]), g.params[first + 1]));
    return ad::add_row(ad::matmul(hidden, g.params[first + 2]), g.params[first + 3]);
}

Projector::Graph Projector::build(ad::Tape &tape, const Matrix &layer_means, bool trainable) const {
    if (layer_means.rows() != config_.layers || layer_means.cols() != config_.input_dim) {
        throw ShapeError("projector: layer means have the wrong shape");
    }
    Graph g;
    g.params.reserve(params_.size());
    for (const auto &p : params_) {
        g.params.push_back(trainable ? tape.variable(p.value) : tape.constant(p.value));
    }
    const ad::Var means = tape.constant(layer_means);

    // Content pathway.
    const ad::Var alpha = ad::softmax_rows(g.params[content_layer_index_]);
    const ad::Var pooled = ad::matmul(alpha, means);
    std::vector<ad::Var> content;
    content.reserve(content_mlp_first_.size());
    for (std::size_t first : content_mlp_first_) {
        content.push_back(token_mlp(tape, g, first, pooled));
    }
    g.content = ad::concat_rows(content);

    // Feature pathway: one shared pooled vector feeds every head.
    const ad::Var beta = ad::softmax_rows(g.params[shared_layer_index_]);
    const ad::Var shared = ad::matmul(beta, means);
    std::vector<ad::Var> feature;
    for (std::size_t k = 0; k < config_.heads.size(); ++k) {
        const std::size_t first = head_first_[k];
        const ad::Var logits = ad::add_row(ad::matmul(shared, g.params[first]), g.params[first + 1]);
        g.logits.push_back(logits);
        const ad::Var probs = ad::sigmoid(logits);
        for (std::size_t mlp : feat_mlp_first_[k]) {
            feature.push_back(token_mlp(tape, g, mlp, probs));
        }
    }
    if (!feature.empty()) {
        g.feature = ad::concat_rows(feature);
    }
    return g;
}

TokenBlock Projector::content_tokens(const LayeredEmbedding &h) const {
    check_embedding(h);
    ad::Tape tape;
    const Graph g = build(tape, h.time_average_per_layer(), false);
    return {g.content.value(), TokenKind::content};
}

std::vector<FeaturePrediction> Projector::feature_logits(const LayeredEmbedding &h) const {
    check_embedding(h);
    const RowVector shared = time_average(pool_layers(h, shared_layer_weights().effective()));
    std::vector<FeaturePrediction> out;
    for (std::size_t first : head_first_) {
        RowVector logits = shared * params_[first].value;
        logits += params_[first + 1].value.row(0);
        out.push_back(FeaturePrediction::from_logits(std::move(logits)));
    }
    return out;
}

TokenBlock Projector::feature_tokens(const std::vector<FeaturePrediction> &preds) const {
    if (preds.size() != config_.heads.size()) {
        throw ShapeError("feature_tokens: expected one prediction per head");
    }
    ad::Tape tape;
    Graph g;
    for (const auto &p : params_) {
        g.params.push_back(tape.constant(p.value));
    }
    std::vector<ad::Var> rows;
    for (std::size_t k = 0; k < preds.size(); ++k) {
        if (preds[k].probabilities.size() != config_.heads[k].classes) {
            throw ShapeError("feature_tokens: prediction width differs from head '" +
                             config_.heads[k].name + "'");
        }
        const ad::Var probs = tape.constant(preds[k].probabilities);
        for (std::size_t mlp : feat_mlp_first_[k]) {
            rows.push_back(token_mlp(tape, g, mlp, probs));
        }
    }
    if (rows.empty()) {
        throw ShapeError("feature_tokens: projector has no heads");
    }
    return {ad::concat_rows(rows).value(), TokenKind::feature};
}

Matrix Projector::music_tokens(const LayeredEmbedding &h) const {
    check_embedding(h);
    ad::Tape tape;
    const Graph g = build(tape, h.time_average_per_layer(), false);
    if (config_.heads.empty()) {
        return g.content.value();
    }
    Matrix out(config_.music_tokens(), config_.lm_dim);
    out.topRows(config_.content_tokens) = g.content.value();
    out.bottomRows(config_.feature_tokens()) = g.feature.value();
    return out;
}

std::uint64_t Projector::parameter_hash() const {
    Fnv1a64 h;
    for (const auto &p : params_) {
        h.update(p.name);
        h.update(p.value);
    }
    return h.value();
}

json Projector::to_json() const {
    json groups = json::object();
    for (const auto &p : params_) {
        groups[p.group][p.name] = matrix_to_json(p.value);
    }
    return json{{"format", kCheckpointFormat},
                {"config", muscap::to_json(config_)},
                {"config_digest", config_.digest()},
                {"groups", groups}};
}

Projector Projector::from_json(const json &j, const std::string &expected_digest) {
    if (j.value("format", std::string()) != kCheckpointFormat) {
        throw ConfigError("checkpoint: unknown format");
    }
    ProjectorConfig config = projector_config_from_json(j.at("config"));
    const std::string stored = j.at("config_digest").get<std::string>();
    if (stored != config.digest()) {
        throw ConfigError("checkpoint: stored digest does not match its own config");
    }
    if (!expected_digest.empty() && stored != expected_digest) {
        throw ConfigError("checkpoint digest " + stored + " does not match config digest " +
                          expected_digest);
    }
    Projector p(std::move(config));
    const json &groups = j.at("groups");
    for (auto &param : p.params_) {
        if (!groups.contains(param.group) || !groups.at(param.group).contains(param.name)) {
            throw ConfigError("checkpoint: missing parameter " + param.name);
        }
        Matrix m = matrix_from_json(groups.at(param.group).at(param.name), param.name);
        if (m.rows() != param.value.rows() || m.cols() != param.value.cols()) {
            throw ConfigError("checkpoint: parameter " + param.name + " has the wrong shape");
        }
        param.value = std::move(m);
    }
    return p;
}

void save_checkpoint(const std::filesystem::path &path, const Projector &projector, const json &extra) {
    json j = projector.to_json();
    j["extra"] = extra;
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write checkpoint " + path.string());
    }
    out << j.dump() << '\n';
}

namespace {
json read_json_file(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read checkpoint " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::exception &e) {
        throw ConfigError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
    }
}
} // namespace

Projector load_checkpoint(const std::filesystem::path &path, const std::string &expected_digest,
                          json *extra_out) {
    const json j = read_json_file(path);
    try {
        if (extra_out != nullptr) {
            *extra_out = j.value("extra", json::object());
        }
        return Projector::from_json(j, expected_digest);
    } catch (const json::exception &e) {
        throw ConfigError("checkpoint " + path.string() + " is malformed: " + e.what());
    }
}

json read_checkpoint_extra(const std::filesystem::path &path) {
    return read_json_file(path).value("extra", json::object());
}

} // namespace muscap
