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

#include <doctest.h>

#include <cstdlib>

#include <json.hpp>

#include "muscap/cli.hpp"
#include "muscap/config.hpp"
#include "muscap/error.hpp"
#include "support.hpp"

using namespace muscap;
using namespace muscap::testing;
using nlohmann::json;

namespace {

struct Fixture {
    std::filesystem::path dir;
    json config;
    explicit Fixture(const std::string &name) : dir(scratch_dir(name)) {
        write_fixture(dir);
        config = json::parse(read_file(dir / "config.json"));
    }
    RunConfig parse() const { return parse_run_config(config, dir); }
};

std::string config_error(const Fixture &f) {
    try {
        f.parse();
    } catch (const ConfigError &e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST_CASE("fixture config parses with the expected layout") {
    Fixture f("config_ok");
    RunConfig c = load_run_config(f.dir / "config.json");
    CHECK(c.base_dir == std::filesystem::absolute(f.dir));
    CHECK(c.encoder.layers == 13);
    CHECK(c.encoder.dim == 768);
    CHECK(c.projector.content_tokens == 35);
    CHECK(c.projector.token_budget == 60);
    REQUIRE(c.projector.heads.size() == 5);
    CHECK(c.projector.heads[0].name == "key");
    CHECK(c.projector.heads[0].classes == 24);
    CHECK(c.projector.heads[1].classes == 7);
    CHECK(c.projector.heads[4].classes == 3);
    CHECK(c.projector.feature_tokens() == 25);
    CHECK(c.vocabularies.size() == 5);
    CHECK(c.phases.size() == 3);
    CHECK(c.phases[0].weights.caption == 0.0);
    CHECK(c.phases[0].weights.task("mood") == 0.2);
    CHECK(c.phases[1].weights.caption == 1.0);
    CHECK(c.phases[1].weights.task("mood") == 0.1);
    CHECK(c.phases[1].optimizer == OptimizerKind::adam);
    CHECK(c.phases[0].dataset_id == "toy");
    CHECK(c.datasets.at("toy") == f.dir / "manifest.jsonl");
    CHECK(c.output_dir == f.dir / "out");
    CHECK(c.chat.audit_log == (f.dir / "out" / "chat_audit.jsonl").string());
    CHECK(c.caption_max_tokens == 12);

    auto lm = make_language_model(c.lm);
    ProjectorConfig resolved = c.resolved_projector(*lm);
    CHECK(resolved.lm_dim == 16);
    CHECK(c.digest(resolved) == c.digest(resolved));
}

TEST_CASE("a budget that disagrees with the heads is rejected") {
    Fixture f("config_budget");
    f.config["projector"]["token_budget"] = 61;
    std::string msg = config_error(f);
    CHECK(msg.find("projector") != std::string::npos);
    CHECK(msg.find("61") != std::string::npos);
}

TEST_CASE("a missing manifest names the field") {
    Fixture f("config_manifest");
    f.config["datasets"]["toy"] = "nowhere.jsonl";
    CHECK(config_error(f).find("datasets.toy") != std::string::npos);
}

TEST_CASE("unknown and mistyped fields name the field") {
    Fixture f("config_fields");
    f.config["projector"]["tokens"] = 3;
    CHECK(config_error(f).find("projector.tokens") != std::string::npos);
    f = Fixture("config_fields");
    f.config["phases"][1]["epochs"] = "many";
    CHECK(config_error(f).find("phases[1].epochs") != std::string::npos);
    f = Fixture("config_fields");
    f.config["phases"][0]["kind"] = "pretrain";
    CHECK(config_error(f).find("phases[0].kind") != std::string::npos);
    f = Fixture("config_fields");
    f.config["vocabularies"].erase("mood");
    CHECK(config_error(f).find("vocabularies.mood") != std::string::npos);
    f = Fixture("config_fields");
    f.config["lm"]["dim"] = 15;
    CHECK_FALSE(config_error(f).empty());
    f = Fixture("config_fields");
    f.config["query"] = "  ";
    CHECK(config_error(f).find("query") != std::string::npos);
}

TEST_CASE("environment interpolation") {
    ::setenv("MUSCAP_TEST_HOST", "example.test", 1);
    ::unsetenv("MUSCAP_TEST_MISSING");
    CHECK(interpolate_env("https://${MUSCAP_TEST_HOST}/v1", "x") == "https://example.test/v1");
    CHECK(interpolate_env("cost $$5 and $x", "x") == "cost $5 and $x");
    CHECK_THROWS_AS(interpolate_env("${MUSCAP_TEST_MISSING}", "chat.endpoint"), ConfigError);
    CHECK_THROWS_AS(interpolate_env("${OPEN", "x"), ConfigError);
    try {
        interpolate_env("${MUSCAP_TEST_MISSING}", "chat.endpoint");
    } catch (const ConfigError &e) {
        CHECK(std::string(e.what()).find("chat.endpoint") != std::string::npos);
    }

    Fixture f("config_env");
    f.config["chat"]["endpoint"] = "https://${MUSCAP_TEST_HOST}/v1";
    CHECK(f.parse().chat.endpoint == "https://example.test/v1");
}

TEST_CASE("vocabulary forms") {
    Fixture f("config_vocab");
    f.config["vocabularies"]["mood"] = {"calm", "energetic", "sad", "happy", "dark"};
    f.config["vocabularies"]["genre"] = {{"file", "genre.txt"}, {"multi_label", false}};
    RunConfig c = f.parse();
    CHECK(c.vocabularies.find("mood")->size() == 5);
    CHECK(c.vocabularies.find("mood")->multi_label());
    CHECK_FALSE(c.vocabularies.find("genre")->multi_label());
    CHECK(c.projector.heads[2].classes == 5);
}

TEST_CASE("changing a vocabulary changes the digest") {
    Fixture a("config_digest_a");
    Fixture b("config_digest_b");
    b.config["vocabularies"]["mood"] = {"happy", "calm", "energetic", "sad"};
    RunConfig ca = a.parse(), cb = b.parse();
    ToyLanguageModel lm(ca.lm.toy);
    CHECK(ca.digest(ca.resolved_projector(lm)) != cb.digest(cb.resolved_projector(lm)));
    Fixture q("config_digest_q");
    q.config["query"] = "What is this?";
    RunConfig cq = q.parse();
    CHECK(ca.digest(ca.resolved_projector(lm)) != cq.digest(cq.resolved_projector(lm)));
}

TEST_CASE("inference settings round trip through checkpoint metadata") {
    Fixture f("config_inference");
    RunConfig c = f.parse();
    RunConfig back = inference_config_from_json(c.inference_json());
    CHECK(back.query == c.query);
    CHECK(back.caption_max_tokens == c.caption_max_tokens);
    CHECK(back.encoder.dim == c.encoder.dim);
    CHECK(back.lm.to_json() == c.lm.to_json());
    CHECK(back.chat.endpoint == c.chat.endpoint);
}

TEST_CASE("language model settings") {
    LmSettings toy = LmSettings::from_json({{"kind", "toy"}, {"dim", 8}, {"ffn", 12}, {"seed", 4}});
    CHECK(make_language_model(toy)->dim() == 8);
    CHECK_THROWS_AS(LmSettings::from_json({{"kind", "remote"}}), ConfigError);
    CHECK_THROWS_AS(LmSettings::from_json({{"kind", "subprocess"}}), ConfigError);
    LmSettings sub = LmSettings::from_json({{"kind", "subprocess"}, {"command", {MUSCAP_CLI_PATH, "lm-serve"}}});
    auto lm = make_language_model(sub);
    CHECK(lm->dim() == 16);
    CHECK(lm->parameter_hash() == ToyLanguageModel().parameter_hash());
}

TEST_CASE("missing config file") {
    CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), IoError);
    auto dir = scratch_dir("config_bad_json");
    write_file(dir / "c.json", "{ not json");
    CHECK_THROWS_AS(load_run_config(dir / "c.json"), ConfigError);
}
