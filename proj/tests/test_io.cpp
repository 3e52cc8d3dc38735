#include <doctest.h>

#include "mftc/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

using namespace mftc;
using namespace mftc::io;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("content digest is stable and byte-sensitive") {
    CHECK(fnv1a_hex("") == "cbf29ce484222325");  // FNV-1a 64 offset basis
    CHECK(fnv1a_hex("abc") == fnv1a_hex("abc"));
    CHECK(fnv1a_hex("abc") != fnv1a_hex("abd"));
    CHECK(fnv1a_hex("abc") != fnv1a_hex("abc "));
}

TEST_CASE("default config parses and survives a round trip") {
    const std::string text = default_config_json();
    const CliConfig cfg = parse_config(text);
    CHECK(cfg.schema_version == 1);
    CHECK(cfg.bench.lq.a1 == 2.0);
    CHECK(cfg.bench.lq.steps == 15);
    CHECK(cfg.bench.data_samples == 1000);
    CHECK(cfg.bench.stability_trials == 1000);
    CHECK(cfg.bench.adversarial_count == 500);
    CHECK(cfg.attack.alpha == 250.0);
    REQUIRE(cfg.bench.scenarios.size() == 3);
    CHECK(cfg.bench.scenarios[0].delta == 20.0);
    CHECK(cfg.bench.scenarios[1].delta == 150.0);
    CHECK(cfg.bench.scenarios[2].delta == 180.0);
}

TEST_CASE("unknown keys are rejected by name") {
    try {
        parse_config(R"({"schema_version": 1, "turbo_mode": true})");
        FAIL("expected ContractViolation");
    } catch (const ContractViolation& e) {
        CHECK(std::string(e.what()).find("turbo_mode") != std::string::npos);
    }
}

TEST_CASE("nested unknown keys are rejected too") {
    CHECK_THROWS_AS(parse_config(R"({"schema_version": 1, "lq": {"a9": 1.0}})"),
                    ContractViolation);
}

TEST_CASE("out-of-range epsilon names the offending field") {
    const std::string bad = R"({
        "schema_version": 1,
        "scenarios": [{"label": "s", "r": 200.0, "epsilon": 1.5, "delta": 20.0}]
    })";
    try {
        parse_config(bad);
        FAIL("expected ContractViolation");
    } catch (const ContractViolation& e) {
        CHECK(std::string(e.what()).find("epsilon") != std::string::npos);
    }
}

TEST_CASE("wrong schema version is a contract violation") {
    CHECK_THROWS_AS(parse_config(R"({"schema_version": 2})"), ContractViolation);
}

TEST_CASE("manifest serializes its digest and outputs") {
    RunManifest m = make_manifest("generate", "{\"schema_version\": 1}", 7, "smoke");
    m.outputs = {"dataset.csv", "riccati.json"};
    const std::string json = m.to_json();
    CHECK(json.find("\"generate\"") != std::string::npos);
    CHECK(json.find(fnv1a_hex("{\"schema_version\": 1}")) != std::string::npos);
    CHECK(json.find("dataset.csv") != std::string::npos);
    CHECK(json.find("\"seed\"") != std::string::npos);
    CHECK_FALSE(m.module_versions.empty());
}

TEST_CASE("dataset csv round-trips records and provenance") {
    nn::Dataset records;
    std::vector<retrain::Provenance> tags;
    std::uint64_t s = 9;
    for (int i = 0; i < 7; ++i) {
        nn::Record rec;
        rec.input = Vec(3);
        rec.target = Vec(2);
        for (int c = 0; c < 3; ++c) {
            s = splitmix64(s);
            rec.input[c] = static_cast<double>(s) / 3e18 - 2.0;
        }
        for (int c = 0; c < 2; ++c) {
            s = splitmix64(s);
            rec.target[c] = static_cast<double>(s) / 3e18 - 2.0;
        }
        records.push_back(rec);
        tags.push_back(i % 3 == 0 ? retrain::Provenance::Adversarial
                                  : retrain::Provenance::Base);
    }

    const std::string path = temp_path("mftc_io_test_dataset.csv");
    write_dataset_csv(path, records, &tags);
    std::vector<retrain::Provenance> tags_back;
    const nn::Dataset back = read_dataset_csv(path, &tags_back);
    std::remove(path.c_str());

    REQUIRE(back.size() == records.size());
    CHECK(tags_back == tags);
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(back[i].input == records[i].input);  // %.17g is lossless for doubles
        CHECK(back[i].target == records[i].target);
    }
}

TEST_CASE("dataset csv works without a provenance column") {
    nn::Record rec;
    rec.input = Vec::Zero(3);
    rec.target = Vec::Zero(2);
    const std::string path = temp_path("mftc_io_test_plain.csv");
    write_dataset_csv(path, {rec}, nullptr);
    {
        std::ifstream is(path);
        std::string header;
        std::getline(is, header);
        CHECK(header == "record,x,mean_x,noise,u,mean_u");
    }
    const nn::Dataset back = read_dataset_csv(path, nullptr);
    std::remove(path.c_str());
    REQUIRE(back.size() == 1);
    CHECK(back[0].input == rec.input);
}
