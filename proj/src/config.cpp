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

#include "muscap/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "muscap/error.hpp"
#include "muscap/hash.hpp"
#include "muscap/lm_ipc.hpp"

namespace muscap {

using nlohmann::json;

namespace {

// Typed access to one JSON object with field paths in every error.
class Fields {
  public:
    Fields(const json &j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) {
            throw ConfigError(where() + "expected an object");
        }
    }

    std::string field(const std::string &key) const { return path_.empty() ? key : path_ + "." + key; }
    bool has(const std::string &key) const { return j_.contains(key) && !j_.at(key).is_null(); }
    const json &raw(const std::string &key) const { return j_.at(key); }

    template <class T> T get(const std::string &key, T fallback) const {
        if (!has(key)) {
            return fallback;
        }
        return as<T>(key);
    }

    template <class T> T require(const std::string &key) const {
        if (!has(key)) {
            throw ConfigError(field(key) + ": required field is missing");
        }
        return as<T>(key);
    }

    void reject_unknown(std::initializer_list<std::string_view> allowed) const {
        for (const auto &[k, v] : j_.items()) {
            bool ok = false;
            for (auto a : allowed) {
                ok = ok || a == k;
            }
            if (!ok) {
                throw ConfigError(field(k) + ": unknown field");
            }
        }
    }

  private:
    std::string where() const { return path_.empty() ? "" : path_ + ": "; }

    template <class T> T as(const std::string &key) const {
        const json &v = j_.at(key);
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError("expected true or false");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) throw ConfigError("expected an integer");
                if constexpr (std::is_unsigned_v<T>) {
                    if (v.get<long long>() < 0) throw ConfigError("expected a non-negative integer");
                }
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw ConfigError("expected a number");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError("expected a string");
            }
            return v.get<T>();
        } catch (const ConfigError &e) {
            throw ConfigError(field(key) + ": " + e.what());
        } catch (const json::exception &e) {
            throw ConfigError(field(key) + ": " + e.what());
        }
    }

    const json &j_;
    std::string path_;
};

json interpolate_tree(const json &j, const std::string &path) {
    if (j.is_string()) {
        return interpolate_env(j.get<std::string>(), path);
    }
    if (j.is_object()) {
        json out = json::object();
        for (const auto &[k, v] : j.items()) {
            out[k] = interpolate_tree(v, path.empty() ? k : path + "." + k);
        }
        return out;
    }
    if (j.is_array()) {
        json out = json::array();
        for (std::size_t i = 0; i < j.size(); ++i) {
            out.push_back(interpolate_tree(j[i], path + "[" + std::to_string(i) + "]"));
        }
        return out;
    }
    return j;
}

std::filesystem::path resolve(const std::filesystem::path &base, const std::string &p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

EncoderConfig parse_encoder(const json &j) {
    Fields f(j, "encoder");
    f.reject_unknown({"sample_rate", "layers", "dim", "frames_per_second", "window_hops", "bands", "seed"});
    EncoderConfig c;
    c.sample_rate = f.get("sample_rate", c.sample_rate);
    c.layers = f.get("layers", c.layers);
    c.dim = f.get("dim", c.dim);
    c.frames_per_second = f.get("frames_per_second", c.frames_per_second);
    c.window_hops = f.get("window_hops", c.window_hops);
    c.bands = f.get("bands", c.bands);
    c.seed = f.get<std::uint64_t>("seed", c.seed);
    try {
        c.validate();
    } catch (const Error &e) {
        throw ConfigError(std::string("encoder: ") + e.what());
    }
    return c;
}

json encoder_json(const EncoderConfig &c) {
    return {{"sample_rate", c.sample_rate}, {"layers", c.layers},           {"dim", c.dim},
            {"frames_per_second", c.frames_per_second}, {"window_hops", c.window_hops}, {"bands", c.bands},
            {"seed", c.seed}};
}

std::vector<std::string> read_lines(const std::filesystem::path &path, const std::string &field) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(field + ": cannot read " + path.string());
    }
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        auto e = line.find_last_not_of(" \t\r");
        out.push_back(line.substr(b, e - b + 1));
    }
    return out;
}

bool default_multi_label(const std::string &task) { return task != "key" && task != "vocals"; }

TaskVocabulary parse_vocabulary(const std::string &task, const json &v, const std::filesystem::path &base) {
    const std::string field = "vocabularies." + task;
    bool multi = default_multi_label(task);
    json spec = v;
    if (v.is_object()) {
        Fields f(v, field);
        f.reject_unknown({"labels", "file", "multi_label"});
        multi = f.get("multi_label", multi);
        if (f.has("labels") == f.has("file")) {
            throw ConfigError(field + ": give exactly one of 'labels' or 'file'");
        }
        spec = f.has("labels") ? f.raw("labels") : f.raw("file");
    }
    try {
        if (spec.is_string()) {
            std::string s = spec.get<std::string>();
            if (s == "default") {
                if (task == "key") return default_key_vocabulary();
                if (task == "vocals") return default_vocals_vocabulary();
                throw ConfigError(field + ": no built-in vocabulary for '" + task + "'");
            }
            return TaskVocabulary(task, read_lines(resolve(base, s), field), multi);
        }
        if (spec.is_array()) {
            return TaskVocabulary(task, spec.get<std::vector<std::string>>(), multi);
        }
    } catch (const ConfigError &) {
        throw;
    } catch (const std::exception &e) {
        throw ConfigError(field + ": " + e.what());
    }
    throw ConfigError(field + ": expected \"default\", a file path or a list of labels");
}

LossWeights parse_weights(const json &j, const std::string &path, LossWeights w) {
    Fields f(j, path);
    f.reject_unknown({"caption", "tasks", "default_task"});
    w.caption = f.get("caption", w.caption);
    w.default_task = f.get("default_task", w.default_task);
    if (f.has("tasks")) {
        const json &t = f.raw("tasks");
        if (t.is_number()) {
            w.default_task = t.get<double>();
            w.tasks.clear();
        } else {
            Fields tf(t, path + ".tasks");
            for (const auto &[k, v] : t.items()) {
                w.tasks[k] = tf.require<double>(k);
            }
        }
    }
    return w;
}

PhaseSpec parse_phase(const json &j, const std::string &path) {
    Fields f(j, path);
    f.reject_unknown({"kind", "dataset", "epochs", "max_steps", "batch_size", "learning_rate", "optimizer", "seed",
                      "weights"});
    PhaseSpec p;
    std::string kind = f.require<std::string>("kind");
    try {
        p.kind = phase_kind_from_string(kind);
    } catch (const ConfigError &e) {
        throw ConfigError(f.field("kind") + ": " + e.what());
    }
    // Weight defaults follow the schedule for the phase kind.
    for (const auto &d : default_schedule()) {
        if (d.kind == p.kind) {
            p.weights = d.weights;
        }
    }
    p.dataset_id = f.get<std::string>("dataset", "");
    p.epochs = f.get("epochs", p.epochs);
    p.max_steps = f.get("max_steps", p.max_steps);
    p.batch_size = f.get("batch_size", p.batch_size);
    p.learning_rate = f.get("learning_rate", p.learning_rate);
    p.seed = f.get<std::uint64_t>("seed", p.seed);
    std::string opt = f.get<std::string>("optimizer", "sgd");
    if (opt == "sgd") {
        p.optimizer = OptimizerKind::sgd;
    } else if (opt == "adam") {
        p.optimizer = OptimizerKind::adam;
    } else {
        throw ConfigError(f.field("optimizer") + ": expected 'sgd' or 'adam'");
    }
    if (f.has("weights")) {
        p.weights = parse_weights(f.raw("weights"), f.field("weights"), p.weights);
    }
    return p;
}

ChatConfig parse_chat(const json &j, const std::filesystem::path &base) {
    Fields f(j, "chat");
    f.reject_unknown({"endpoint", "auth_env", "model", "timeout_s", "audit_log", "max_attempts", "backoff_s"});
    ChatConfig c;
    c.endpoint = f.get<std::string>("endpoint", "");
    c.auth_env = f.get<std::string>("auth_env", c.auth_env);
    c.model = f.get<std::string>("model", c.model);
    c.timeout_s = f.get("timeout_s", c.timeout_s);
    std::string audit = f.get<std::string>("audit_log", "");
    c.audit_log = audit.empty() ? "" : resolve(base, audit).string();
    if (!(c.timeout_s > 0.0)) {
        throw ConfigError("chat.timeout_s: must be positive");
    }
    return c;
}

} // namespace

// ---------------------------------------------------------------------------

std::string interpolate_env(std::string_view text, const std::string &field) {
    std::string out;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '$' || i + 1 >= text.size()) {
            out.push_back(text[i]);
            continue;
        }
        if (text[i + 1] == '$') {
            out.push_back('$');
            ++i;
        } else if (text[i + 1] == '{') {
            auto close = text.find('}', i + 2);
            if (close == std::string_view::npos) {
                throw ConfigError(field + ": unterminated ${ in value");
            }
            std::string name(text.substr(i + 2, close - i - 2));
            const char *value = name.empty() ? nullptr : std::getenv(name.c_str());
            if (value == nullptr) {
                throw ConfigError(field + ": environment variable '" + name + "' is not set");
            }
            out += value;
            i = close;
        } else {
            out.push_back('$');
        }
    }
    return out;
}

json LmSettings::to_json() const {
    json j = {{"kind", kind}};
    if (kind == "toy") {
        j["dim"] = toy.dim;
        j["ffn"] = toy.ffn;
        j["seed"] = toy.seed;
        j["vocabulary"] = toy.vocabulary;
    } else {
        j["command"] = command;
    }
    return j;
}

LmSettings LmSettings::from_json(const json &j, const std::string &field) {
    Fields f(j, field);
    f.reject_unknown({"kind", "dim", "ffn", "seed", "vocabulary", "command"});
    LmSettings s;
    s.kind = f.get<std::string>("kind", "toy");
    if (s.kind == "toy") {
        s.toy.dim = f.get("dim", s.toy.dim);
        s.toy.ffn = f.get("ffn", s.toy.ffn);
        s.toy.seed = f.get<std::uint64_t>("seed", s.toy.seed);
        if (f.has("vocabulary")) {
            const json &v = f.raw("vocabulary");
            if (!v.is_array()) {
                throw ConfigError(f.field("vocabulary") + ": expected a list of words");
            }
            s.toy.vocabulary = v.get<std::vector<std::string>>();
        }
        if (s.toy.dim < 1 || s.toy.ffn < 1) {
            throw ConfigError(field + ": dim and ffn must be positive");
        }
        if (s.toy.dim % 2 != 0) {
            throw ConfigError(f.field("dim") + ": must be even for sinusoidal positions");
        }
    } else if (s.kind == "subprocess") {
        if (!f.has("command")) {
            throw ConfigError(f.field("command") + ": required for a subprocess language model");
        }
        const json &c = f.raw("command");
        if (!c.is_array() || c.empty()) {
            throw ConfigError(f.field("command") + ": expected a non-empty list of arguments");
        }
        s.command = c.get<std::vector<std::string>>();
    } else {
        throw ConfigError(f.field("kind") + ": expected 'toy' or 'subprocess'");
    }
    return s;
}

std::unique_ptr<LanguageModel> make_language_model(const LmSettings &settings) {
    if (settings.kind == "toy") {
        return std::make_unique<ToyLanguageModel>(settings.toy);
    }
    return std::make_unique<ipc::SubprocessLanguageModel>(settings.command);
}

ProjectorConfig RunConfig::resolved_projector(const LanguageModel &lm) const {
    ProjectorConfig p = projector;
    if (p.lm_dim != 0 && p.lm_dim != lm.dim()) {
        throw ConfigError("projector.lm_dim: " + std::to_string(p.lm_dim) + " does not match the language model width " +
                          std::to_string(lm.dim()));
    }
    p.lm_dim = lm.dim();
    p.layers = encoder.layers;
    p.input_dim = encoder.dim;
    p.validate();
    return p;
}

std::string RunConfig::digest(const ProjectorConfig &resolved) const {
    Fnv1a64 h;
    h.update(resolved.digest());
    h.update(encoder_json(encoder).dump());
    h.update(lm.to_json().dump());
    h.update(query);
    return h.hex();
}

json RunConfig::inference_json() const {
    json lm_json = lm.to_json();
    json j = {{"encoder", encoder_json(encoder)},
              {"lm", lm_json},
              {"query", query},
              {"chunk_seconds", chunk_seconds},
              {"caption_max_tokens", caption_max_tokens},
              {"projector_lm_dim", projector.lm_dim}};
    j["chat"] = {{"endpoint", chat.endpoint},
                 {"auth_env", chat.auth_env},
                 {"model", chat.model},
                 {"timeout_s", chat.timeout_s},
                 {"audit_log", chat.audit_log}};
    return j;
}

RunConfig inference_config_from_json(const json &j) {
    RunConfig c;
    Fields f(j, "checkpoint.extra");
    c.encoder = parse_encoder(f.require<json>("encoder"));
    c.lm = LmSettings::from_json(f.require<json>("lm"), "checkpoint.extra.lm");
    c.query = f.get<std::string>("query", c.query);
    c.chunk_seconds = f.get("chunk_seconds", c.chunk_seconds);
    c.caption_max_tokens = f.get("caption_max_tokens", c.caption_max_tokens);
    c.projector.lm_dim = f.get("projector_lm_dim", 0);
    if (f.has("chat")) {
        c.chat = parse_chat(f.raw("chat"), {});
    }
    return c;
}

RunConfig parse_run_config(const json &source, const std::filesystem::path &base_dir) {
    json j = interpolate_tree(source, "");
    Fields root(j, "");
    root.reject_unknown({"encoder", "projector", "lm", "vocabularies", "datasets", "phases", "query", "caption",
                         "chat", "output", "workers"});
    RunConfig c;
    c.base_dir = base_dir;

    c.encoder = root.has("encoder") ? parse_encoder(root.raw("encoder")) : EncoderConfig{};
    c.lm = root.has("lm") ? LmSettings::from_json(root.raw("lm")) : LmSettings{};
    c.workers = root.get<unsigned>("workers", 0u);

    // Vocabularies, keyed by task.
    std::map<std::string, TaskVocabulary> vocabs;
    if (root.has("vocabularies")) {
        const json &v = root.raw("vocabularies");
        Fields vf(v, "vocabularies");
        for (const auto &[task, spec] : v.items()) {
            vocabs.emplace(task, parse_vocabulary(task, spec, base_dir));
        }
    }

    // Projector and heads.
    ProjectorConfig &p = c.projector;
    p.lm_dim = 0;
    json pj = root.has("projector") ? root.raw("projector") : json::object();
    Fields pf(pj, "projector");
    pf.reject_unknown({"content_tokens", "token_budget", "hidden", "lm_dim", "seed", "heads"});
    p.content_tokens = pf.get("content_tokens", p.content_tokens);
    p.token_budget = pf.get("token_budget", p.token_budget);
    p.hidden = pf.get("hidden", p.hidden);
    p.lm_dim = pf.get("lm_dim", 0);
    p.seed = pf.get<std::uint64_t>("seed", p.seed);
    p.layers = c.encoder.layers;
    p.input_dim = c.encoder.dim;

    std::vector<std::pair<std::string, int>> head_specs;
    if (pf.has("heads")) {
        const json &hs = pf.raw("heads");
        if (!hs.is_array()) {
            throw ConfigError("projector.heads: expected a list");
        }
        for (std::size_t i = 0; i < hs.size(); ++i) {
            Fields hf(hs[i], "projector.heads[" + std::to_string(i) + "]");
            hf.reject_unknown({"name", "tokens"});
            head_specs.emplace_back(hf.require<std::string>("name"), hf.get("tokens", 5));
        }
    } else {
        for (const auto &name : default_head_order()) {
            head_specs.emplace_back(name, 5);
        }
    }
    std::vector<TaskVocabulary> ordered;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < head_specs.size(); ++i) {
        const auto &[name, tokens] = head_specs[i];
        if (!seen.insert(name).second) {
            throw ConfigError("projector.heads[" + std::to_string(i) + "].name: duplicate head '" + name + "'");
        }
        auto it = vocabs.find(name);
        if (it == vocabs.end()) {
            if (name == "key") {
                it = vocabs.emplace(name, default_key_vocabulary()).first;
            } else if (name == "vocals") {
                it = vocabs.emplace(name, default_vocals_vocabulary()).first;
            } else {
                throw ConfigError("vocabularies." + name + ": required for head '" + name + "'");
            }
        }
        ordered.push_back(it->second);
        HeadConfig head;
        head.name = name;
        head.classes = it->second.size();
        head.tokens = tokens;
        head.labels_digest = it->second.digest();
        p.heads.push_back(head);
    }
    for (const auto &[task, v] : vocabs) {
        if (!seen.count(task)) {
            throw ConfigError("vocabularies." + task + ": no head named '" + task + "'");
        }
    }
    c.vocabularies = VocabularySet(std::move(ordered));
    {
        ProjectorConfig check = p;
        if (check.lm_dim == 0) {
            check.lm_dim = c.lm.kind == "toy" ? c.lm.toy.dim : 1;
        } else if (c.lm.kind == "toy" && check.lm_dim != c.lm.toy.dim) {
            throw ConfigError("projector.lm_dim: " + std::to_string(check.lm_dim) +
                              " does not match lm.dim " + std::to_string(c.lm.toy.dim));
        }
        try {
            check.validate();
        } catch (const ConfigError &e) {
            throw ConfigError(std::string("projector: ") + e.what());
        }
    }

    // Datasets.
    if (root.has("datasets")) {
        const json &d = root.raw("datasets");
        Fields df(d, "datasets");
        for (const auto &[id, v] : d.items()) {
            std::filesystem::path manifest = resolve(base_dir, df.require<std::string>(id));
            if (!std::filesystem::is_regular_file(manifest)) {
                throw ConfigError("datasets." + id + ": manifest not found: " + manifest.string());
            }
            c.datasets[id] = manifest;
        }
    }

    // Phases.
    std::vector<std::string> head_names;
    for (const auto &h : p.heads) {
        head_names.push_back(h.name);
    }
    if (root.has("phases")) {
        const json &ph = root.raw("phases");
        if (!ph.is_array()) {
            throw ConfigError("phases: expected a list");
        }
        for (std::size_t i = 0; i < ph.size(); ++i) {
            c.phases.push_back(parse_phase(ph[i], "phases[" + std::to_string(i) + "]"));
        }
    } else {
        c.phases = default_schedule();
    }
    for (std::size_t i = 0; i < c.phases.size(); ++i) {
        PhaseSpec &ps = c.phases[i];
        const std::string field = "phases[" + std::to_string(i) + "]";
        if (ps.dataset_id.empty() && c.datasets.size() == 1) {
            ps.dataset_id = c.datasets.begin()->first;
        }
        if (!ps.dataset_id.empty() && !c.datasets.count(ps.dataset_id)) {
            throw ConfigError(field + ".dataset: unknown dataset '" + ps.dataset_id + "'");
        }
        try {
            ps.validate(head_names);
        } catch (const ConfigError &e) {
            throw ConfigError(field + ": " + e.what());
        }
    }

    // Inference and chat.
    c.query = root.get<std::string>("query", c.query);
    if (c.query.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw ConfigError("query: must not be blank");
    }
    if (root.has("caption")) {
        Fields cf(root.raw("caption"), "caption");
        cf.reject_unknown({"chunk_seconds", "max_tokens"});
        c.chunk_seconds = cf.get("chunk_seconds", c.chunk_seconds);
        c.caption_max_tokens = cf.get("max_tokens", c.caption_max_tokens);
        if (!(c.chunk_seconds > 0.0)) {
            throw ConfigError("caption.chunk_seconds: must be positive");
        }
        if (c.caption_max_tokens < 1) {
            throw ConfigError("caption.max_tokens: must be >= 1");
        }
    }
    if (root.has("chat")) {
        Fields chf(root.raw("chat"), "chat");
        c.chat = parse_chat(root.raw("chat"), base_dir);
        c.retry.max_attempts = chf.get("max_attempts", c.retry.max_attempts);
        c.retry.initial_delay_s = chf.get("backoff_s", c.retry.initial_delay_s);
        if (c.retry.max_attempts < 1) {
            throw ConfigError("chat.max_attempts: must be >= 1");
        }
    }
    std::string out_dir = "out";
    if (root.has("output")) {
        Fields of(root.raw("output"), "output");
        of.reject_unknown({"dir"});
        out_dir = of.get<std::string>("dir", out_dir);
    }
    c.output_dir = resolve(base_dir, out_dir);
    return c;
}

RunConfig load_run_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read config file " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error &e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    auto base = std::filesystem::absolute(path).parent_path();
    return parse_run_config(j, base);
}

} // namespace muscap
