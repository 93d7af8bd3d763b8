#include <doctest/doctest.h>

#include "kgmel/config.hpp"
#include "kgmel/util.hpp"
#include "support/tmpdir.hpp"

using namespace kgmel;
using nlohmann::json;

TEST_SUITE("config") {

TEST_CASE("defaults are complete and valid") {
    const Config cfg = Config::from_json(json::object());
    CHECK(cfg.entities_path == "data/entities.jsonl");
    CHECK(cfg.mentions_path == "data/mentions.jsonl");
    CHECK(cfg.out_dir == "out");
    CHECK(cfg.seed == 0);
    CHECK(cfg.stages == kPipelineStages);
    CHECK(cfg.hyper.beta == 0.5);
    CHECK(cfg.hyper.tau_att == 0.1);
    CHECK(cfg.hyper.tau_cl == 0.1);
    CHECK(cfg.hyper.lambda_mm == 0.1);
    CHECK(cfg.hyper.lambda_ee == 0.1);
    CHECK(cfg.hyper.p == 3);
    CHECK(cfg.hyper.topk == 16);
    CHECK(cfg.hyper.n == 15);
    CHECK(cfg.hyper.dprime == 512);
    CHECK(cfg.hyper.d == 512);
    CHECK(cfg.training.epochs == 50);
    CHECK(cfg.training.batch_size == 128);
    CHECK(cfg.eval_ks == std::vector<int>{1, 3, 5, 10});
    CHECK(cfg.triple_cap == 512);
    CHECK(cfg.parallelism == 1);
    CHECK(cfg.encoder.mode == "mock");
    CHECK(cfg.encoder.api_key_env == "KGMEL_ENCODER_KEY");
    CHECK(cfg.vlm.api_key_env == "KGMEL_VLM_KEY");
    CHECK(cfg.llm.api_key_env == "KGMEL_LLM_KEY");
    CHECK(cfg.encoder.is_mock());
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("round-trips through to_json and from_json") {
    json j = json::parse(R"({
        "paths": {"entities": "e.jsonl", "mentions": "m.jsonl", "out": "results"},
        "seed": 7,
        "stages": ["gen", "embed", "train"],
        "hyper": {"beta": 0.25, "p": 2, "dprime": 8, "d": 6},
        "training": {"lr": 0.01, "epochs": 3, "batch_size": 4},
        "eval": {"k": [5, 1]},
        "triple_cap": 64,
        "parallelism": 2,
        "clients": {"vlm": {"mode": "mock", "seed": 5}}
    })");
    const Config cfg = Config::from_json(j);
    CHECK(cfg.seed == 7);
    CHECK(cfg.hyper.beta == 0.25);
    CHECK(cfg.hyper.p == 2);
    CHECK(cfg.vlm.mock_seed == 5);

    const Config back = Config::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(back.hash() == cfg.hash());
}

TEST_CASE("unknown keys are rejected at every level") {
    auto bad = [](const char* text) {
        CHECK_THROWS_AS(Config::from_json(json::parse(text)), ConfigError);
    };
    bad(R"({"sneaky": 1})");
    bad(R"({"paths": {"entities": "e", "extra": "x"}})");
    bad(R"({"hyper": {"beta": 0.5, "gamma": 1.0}})");
    bad(R"({"training": {"lr": 0.1, "momentum": 0.9}})");
    bad(R"({"eval": {"k": [1], "metric": "mrr"}})");
    bad(R"({"clients": {"oracle": {}}})");
    bad(R"({"clients": {"vlm": {"mode": "mock", "retries": 1}}})");

    try {
        Config::from_json(json::parse(R"({"hyper": {"gamma": 1.0}})"));
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("gamma") != std::string::npos);
    }
}

TEST_CASE("the hash ignores key order and stage selection but tracks values") {
    const Config a = Config::from_json(json::parse(R"({"seed": 1, "hyper": {"beta": 0.5}})"));
    const Config b = Config::from_json(json::parse(R"({"hyper": {"beta": 0.5}, "seed": 1})"));
    CHECK(a.hash() == b.hash());

    const Config c = Config::from_json(json::parse(R"({"seed": 1, "hyper": {"beta": 0.75}})"));
    CHECK(a.hash() != c.hash());

    const Config d = Config::from_json(json::parse(R"({"seed": 1, "stages": ["train"], "hyper": {"beta": 0.5}})"));
    CHECK(a.hash() == d.hash()); // stage selection does not change artifact meaning

    const Config e = Config::from_json(json::parse(R"({"seed": 2, "hyper": {"beta": 0.5}})"));
    CHECK(a.hash() != e.hash());
}

TEST_CASE("normalization sorts cutoffs and reorders stages canonically") {
    const Config cfg =
        Config::from_json(json::parse(R"({"eval": {"k": [10, 1, 5, 1, 3]}, "stages": ["eval", "gen", "train"]})"));
    CHECK(cfg.eval_ks == std::vector<int>{1, 3, 5, 10});
    CHECK(cfg.stages == std::vector<std::string>{"gen", "train", "eval"});

    CHECK_THROWS_AS(Config::from_json(json::parse(R"({"stages": ["gen", "gen"]})")), ConfigError);
    CHECK_THROWS_AS(Config::from_json(json::parse(R"({"stages": ["transmogrify"]})")), ConfigError);
    CHECK_THROWS_AS(Config::from_json(json::parse(R"({"stages": []})")), ConfigError);
}

TEST_CASE("validation failures name the offending knob") {
    auto rejects = [](const char* text, const char* needle) {
        try {
            Config::from_json(json::parse(text));
            const std::string msg = std::string("expected ConfigError for ") + text;
            FAIL_CHECK(msg);
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };
    rejects(R"({"hyper": {"beta": 1.5}})", "beta");
    rejects(R"({"hyper": {"tau_att": 0.0}})", "tau_att");
    rejects(R"({"hyper": {"p": 0}})", "p must be");
    rejects(R"({"training": {"batch_size": 1}})", "batch_size");
    rejects(R"({"training": {"epochs": 0}})", "epochs");
    rejects(R"({"eval": {"k": [0]}})", "eval.k");
    rejects(R"({"eval": {"k": []}})", "eval.k");
    rejects(R"({"triple_cap": 0})", "triple_cap");
    rejects(R"({"parallelism": 0})", "parallelism");
    rejects(R"({"clients": {"encoder": {"mode": "carrier-pigeon"}}})", "mode");
    rejects(R"({"clients": {"llm": {"mode": "http"}}})", "endpoint");
    rejects(R"({"clients": {"vlm": {"temperature": -1.0}}})", "temperature");
    rejects(R"({"seed": -1})", "seed");
    rejects(R"({"hyper": {"beta": "half"}})", "beta");
}

TEST_CASE("load resolves relative paths against the config directory") {
    testing::ScopedTempDir tmp("config");
    std::filesystem::create_directories(tmp.file("nested"));
    const json j{{"paths", {{"entities", "data/e.jsonl"}, {"mentions", "/abs/m.jsonl"}, {"out", "run"}}},
                 {"clients", {{"vlm", {{"mode", "mock"}, {"script", "scripts/vlm.json"}}}}}};
    const auto cfg_path = tmp.file("nested/config.json");
    write_file(cfg_path, j.dump());

    const Config cfg = Config::load(cfg_path);
    CHECK(cfg.entities_path == tmp.file("nested") / "data/e.jsonl");
    CHECK(cfg.mentions_path == "/abs/m.jsonl"); // absolute paths pass through
    CHECK(cfg.out_dir == tmp.file("nested") / "run");
    CHECK(cfg.vlm.script == tmp.file("nested") / "scripts/vlm.json");

    write_file(cfg_path, "{broken");
    CHECK_THROWS_AS(Config::load(cfg_path), ConfigError);
    CHECK_THROWS_AS(Config::load(tmp.file("absent.json")), DataError);
}

TEST_CASE("the hash is invariant across equivalent load paths") {
    testing::ScopedTempDir tmp("confighash");
    // same logical config, different textual order and whitespace
    write_file(tmp.file("a.json"), R"({"seed": 3, "hyper": {"p": 2, "beta": 0.5}})");
    write_file(tmp.file("b.json"), R"({
        "hyper": {"beta": 0.5, "p": 2},
        "seed": 3
    })");
    CHECK(Config::load(tmp.file("a.json")).hash() == Config::load(tmp.file("b.json")).hash());
}

} // TEST_SUITE
