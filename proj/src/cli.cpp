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

#include "muscap/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "muscap/chaining.hpp"
#include "muscap/config.hpp"
#include "muscap/error.hpp"
#include "muscap/judge.hpp"
#include "muscap/lm_ipc.hpp"
#include "muscap/metrics.hpp"
#include "muscap/training.hpp"

namespace muscap {

using nlohmann::json;

int exit_code_for(const std::exception &e) {
    if (dynamic_cast<const ConfigError *>(&e) || dynamic_cast<const ValidationError *>(&e) ||
        dynamic_cast<const ParseError *>(&e) || dynamic_cast<const InvalidInput *>(&e)) {
        return kExitUsage;
    }
    if (dynamic_cast<const ChainError *>(&e) || dynamic_cast<const TransportError *>(&e)) {
        return kExitExternal;
    }
    return kExitRuntime;
}

namespace {

// A trained model assembled from a checkpoint.
struct LoadedModel {
    RunConfig config;
    std::unique_ptr<AudioEncoder> encoder;
    std::unique_ptr<LanguageModel> lm;
    std::optional<Projector> projector;
    CaptionModel model;
};

std::unique_ptr<LoadedModel> load_model(const std::filesystem::path &checkpoint, const std::string &config_path) {
    json extra = read_checkpoint_extra(checkpoint);
    if (!extra.contains("run_digest") || !extra.contains("inference")) {
        throw ConfigError("checkpoint " + checkpoint.string() + " lacks run metadata");
    }
    const std::string stored = extra.at("run_digest").get<std::string>();

    auto m = std::make_unique<LoadedModel>();
    std::string expected_projector;
    if (!config_path.empty()) {
        m->config = load_run_config(config_path);
    } else {
        m->config = inference_config_from_json(extra.at("inference"));
    }
    m->lm = make_language_model(m->config.lm);
    m->encoder = make_encoder(m->config.encoder);
    if (!config_path.empty()) {
        ProjectorConfig resolved = m->config.resolved_projector(*m->lm);
        if (m->config.digest(resolved) != stored) {
            throw ConfigError("checkpoint " + checkpoint.string() + " was trained with a different configuration (digest " +
                              stored + ", config " + m->config.digest(resolved) + ")");
        }
        expected_projector = resolved.digest();
    }
    m->projector.emplace(load_checkpoint(checkpoint, expected_projector));
    const ProjectorConfig &pc = m->projector->config();
    if (m->config.digest(pc) != stored) {
        throw ConfigError("checkpoint " + checkpoint.string() + " metadata does not match its projector");
    }
    if (pc.lm_dim != m->lm->dim()) {
        throw ConfigError("checkpoint projector width " + std::to_string(pc.lm_dim) +
                          " does not match the language model width " + std::to_string(m->lm->dim()));
    }
    m->model.encoder = m->encoder.get();
    m->model.projector = &*m->projector;
    m->model.lm = m->lm.get();
    m->model.query = m->config.query;
    return m;
}

std::vector<std::string> read_texts(const std::filesystem::path &path, const std::string &what) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + what + " file " + path.string());
    }
    std::vector<std::string> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("text") || !j.at("text").is_string()) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected {\"text\": ...}");
        }
        out.push_back(j.at("text").get<std::string>());
    }
    return out;
}

int cmd_train(const std::string &config_path, bool quiet, std::ostream &out) {
    RunConfig cfg = load_run_config(config_path);
    auto lm = make_language_model(cfg.lm);
    auto encoder = make_encoder(cfg.encoder);
    ProjectorConfig pc = cfg.resolved_projector(*lm);
    Projector projector(pc);
    CaptionModel model{encoder.get(), &projector, lm.get(), cfg.query};

    json extra = {{"run_digest", cfg.digest(pc)}, {"inference", cfg.inference_json()}};
    std::filesystem::create_directories(cfg.output_dir);

    std::map<std::string, std::vector<TrainingExample>> cache;
    for (std::size_t i = 0; i < cfg.phases.size(); ++i) {
        const PhaseSpec &spec = cfg.phases[i];
        const std::string field = "phases[" + std::to_string(i) + "].dataset";
        if (spec.dataset_id.empty()) {
            throw ConfigError(field + ": no dataset configured");
        }
        auto it = cache.find(spec.dataset_id);
        if (it == cache.end()) {
            auto records = load_manifest(cfg.datasets.at(spec.dataset_id), cfg.vocabularies);
            it = cache.emplace(spec.dataset_id, prepare_examples(records, cfg.vocabularies, *encoder, *lm)).first;
        }
        const std::string tag = std::to_string(i + 1) + "_" + to_string(spec.kind);
        auto trace_path = cfg.output_dir / ("trace_" + tag + ".csv");
        std::ofstream trace(trace_path);
        if (!trace) {
            throw IoError("cannot write " + trace_path.string());
        }
        PhaseResult r = train_phase(spec, model, it->second, &trace);
        if (!trace) {
            throw IoError("failed writing " + trace_path.string());
        }
        if (r.encoder_hash_before != r.encoder_hash_after || r.lm_hash_before != r.lm_hash_after) {
            throw NumericalError("frozen module parameters changed during " + tag);
        }
        extra["phase"] = to_string(spec.kind);
        extra["phase_index"] = i + 1;
        save_checkpoint(cfg.output_dir / ("checkpoint_" + tag + ".json"), projector, extra);
        save_checkpoint(cfg.output_dir / "checkpoint.json", projector, extra);
        if (!quiet && !r.trace.steps.empty()) {
            out << to_string(spec.kind) << ": " << r.trace.steps.size() << " steps, total loss "
                << r.trace.steps.front().total << " -> " << r.trace.steps.back().total << '\n';
        }
    }
    if (!quiet) {
        out << "checkpoint: " << (cfg.output_dir / "checkpoint.json").string() << '\n';
    }
    return kExitOk;
}

int cmd_caption(const std::string &checkpoint, const std::string &audio, const std::string &config_path,
                int max_tokens, std::ostream &out) {
    auto m = load_model(checkpoint, config_path);
    AudioClip clip = read_wav(audio);
    out << m->model.caption(clip, max_tokens > 0 ? max_tokens : m->config.caption_max_tokens) << '\n';
    return kExitOk;
}

int cmd_chain(const std::string &checkpoint, const std::string &audio, const std::string &config_path,
              std::string song_name, bool dry_run, std::ostream &out) {
    auto m = load_model(checkpoint, config_path);
    std::unique_ptr<ChatClient> client;
    if (!dry_run) {
        if (m->config.chat.endpoint.empty()) {
            throw ConfigError("chat.endpoint: required unless --dry-run is given");
        }
        client = make_chat_client(m->config.chat);
    }
    AudioClip clip = read_wav(audio);
    if (song_name.empty()) {
        song_name = std::filesystem::path(audio).stem().string();
    }
    ModelCaptioner captioner(m->model, m->config.caption_max_tokens);
    auto chunks = caption_chunks(clip, captioner, m->config.chunk_seconds, m->config.workers);
    ChainPrompt prompt = build_prompt(song_name, std::move(chunks));
    if (dry_run) {
        out << prompt.rendered << '\n';
        return kExitOk;
    }
    std::optional<AuditLog> audit;
    if (!m->config.chat.audit_log.empty()) {
        audit.emplace(m->config.chat.audit_log);
    } else {
        audit.emplace();
    }
    out << chain(prompt, *client, m->config.retry, &*audit) << '\n';
    return kExitOk;
}

int cmd_eval(const std::string &predictions, const std::string &references, bool with_judge,
             const std::string &config_path, const std::string &output, std::ostream &out) {
    std::optional<RunConfig> cfg;
    std::unique_ptr<ChatClient> client;
    if (with_judge) {
        if (config_path.empty()) {
            throw ConfigError("--with-judge needs --config for the chat settings");
        }
        cfg = load_run_config(config_path);
        if (cfg->chat.endpoint.empty()) {
            throw ConfigError("chat.endpoint: required for --with-judge");
        }
        client = make_chat_client(cfg->chat);
    }
    auto preds = read_texts(predictions, "predictions");
    auto refs = read_texts(references, "references");
    if (preds.size() != refs.size()) {
        throw ValidationError(std::to_string(preds.size()) + " predictions but " + std::to_string(refs.size()) +
                              " references");
    }
    HashingEmbedder embedder;
    ScoreReport report = score_corpus(preds, refs, embedder);
    if (with_judge) {
        std::optional<AuditLog> audit;
        if (!cfg->chat.audit_log.empty()) {
            audit.emplace(cfg->chat.audit_log);
        } else {
            audit.emplace();
        }
        unsigned workers = cfg->workers == 0 ? 4 : cfg->workers;
        JudgeResults jr = judge_corpus(preds, refs, *client, cfg->retry, &*audit, workers);
        report.judged = true;
        report.feature_accuracy = jr.accuracy;
        report.judge_failures = jr.failures;
    }
    std::string text = report.to_json().dump(2);
    if (!output.empty()) {
        std::ofstream f(output);
        if (!(f << text << '\n')) {
            throw IoError("cannot write " + output);
        }
    }
    out << text << '\n';
    return kExitOk;
}

int cmd_inspect(const std::string &config_path, std::ostream &out) {
    RunConfig cfg = load_run_config(config_path);
    ProjectorConfig pc = cfg.projector;
    std::optional<std::string> digest;
    if (cfg.lm.kind == "toy") {
        ToyLanguageModel lm(cfg.lm.toy);
        pc = cfg.resolved_projector(lm);
        digest = cfg.digest(pc);
    }
    json j;
    j["projector"] = to_json(pc);
    j["projector"]["music_tokens"] = pc.music_tokens();
    j["encoder"] = cfg.inference_json()["encoder"];
    j["lm"] = cfg.lm.to_json();
    if (cfg.lm.kind == "toy") {
        j["lm"].erase("vocabulary");
        j["lm"]["vocabulary_size"] = cfg.lm.toy.vocabulary.size();
    }
    j["query"] = cfg.query;
    j["datasets"] = json::object();
    for (const auto &[id, p] : cfg.datasets) {
        j["datasets"][id] = p.string();
    }
    j["phases"] = json::array();
    for (const auto &p : cfg.phases) {
        j["phases"].push_back({{"kind", to_string(p.kind)},
                               {"dataset", p.dataset_id},
                               {"epochs", p.epochs},
                               {"batch_size", p.batch_size},
                               {"learning_rate", p.learning_rate},
                               {"lambda_caption", p.weights.caption}});
    }
    j["output_dir"] = cfg.output_dir.string();
    if (digest) {
        j["run_digest"] = *digest;
    }
    out << j.dump(2) << '\n';
    return kExitOk;
}

int cmd_lm_serve(const std::string &config_path, std::istream &in, std::ostream &out) {
    LmSettings settings;
    if (!config_path.empty()) {
        settings = load_run_config(config_path).lm;
    }
    if (settings.kind != "toy") {
        throw ConfigError("lm.kind: lm-serve only serves the built-in toy model");
    }
    ToyLanguageModel lm(settings.toy);
    ipc::serve(lm, in, out);
    return kExitOk;
}

} // namespace

int run_cli(const std::vector<std::string> &args, std::istream &in, std::ostream &out, std::ostream &err) {
    CLI::App app{"Music captioning with a frozen language model", "muscap"};
    app.require_subcommand(1);

    std::string config, checkpoint, audio, song_name, predictions, references, output, dir;
    bool quiet = false, dry_run = false, with_judge = false;
    int max_tokens = 0;

    auto *train = app.add_subcommand("train", "Run the configured training phases");
    train->add_option("--config", config, "Run config (JSON)")->required();
    train->add_flag("--quiet", quiet, "Suppress progress output");

    auto *caption = app.add_subcommand("caption", "Caption one audio file");
    caption->add_option("--checkpoint", checkpoint)->required();
    caption->add_option("--audio", audio)->required();
    caption->add_option("--config", config, "Check the checkpoint against this config");
    caption->add_option("--max-tokens", max_tokens);

    auto *chain_cmd = app.add_subcommand("chain", "Long-form caption from chunk captions");
    chain_cmd->add_option("--checkpoint", checkpoint)->required();
    chain_cmd->add_option("--audio", audio)->required();
    chain_cmd->add_option("--config", config, "Check the checkpoint against this config");
    chain_cmd->add_option("--song-name", song_name, "Defaults to the audio file stem");
    chain_cmd->add_flag("--dry-run", dry_run, "Print the prompt instead of calling the chat service");

    auto *eval = app.add_subcommand("eval", "Score predictions against references");
    eval->add_option("--predictions", predictions)->required();
    eval->add_option("--references", references)->required();
    eval->add_flag("--with-judge", with_judge, "Add judged music-feature accuracies");
    eval->add_option("--config", config, "Chat settings for the judge");
    eval->add_option("--output", output, "Also write the report here");

    auto *inspect = app.add_subcommand("inspect-config", "Validate a config and print the resolved layout");
    inspect->add_option("--config", config)->required();

    auto *serve = app.add_subcommand("lm-serve", "Serve the toy language model over stdin/stdout");
    serve->add_option("--config", config);

    auto *fixture = app.add_subcommand("make-fixture", "Write a small demo dataset and config");
    fixture->add_option("--dir", dir)->required();

    std::vector<std::string> argv_store{"muscap"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char *> argv;
    for (auto &a : argv_store) {
        argv.push_back(a.data());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError &e) {
        int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*train) return cmd_train(config, quiet, out);
        if (*caption) return cmd_caption(checkpoint, audio, config, max_tokens, out);
        if (*chain_cmd) return cmd_chain(checkpoint, audio, config, song_name, dry_run, out);
        if (*eval) return cmd_eval(predictions, references, with_judge, config, output, out);
        if (*inspect) return cmd_inspect(config, out);
        if (*serve) return cmd_lm_serve(config, in, out);
        if (*fixture) {
            write_fixture(dir);
            out << "fixture written to " << dir << '\n';
            return kExitOk;
        }
    } catch (const std::exception &e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
    return kExitUsage;
}

} // namespace muscap
