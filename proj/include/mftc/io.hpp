#pragma once

// Config parsing (versioned JSON schema, unknown keys rejected), run
// manifests, and the tabular dataset format shared by the CLI commands.

#include "mftc/lq.hpp"

#include <map>
#include <string>

namespace mftc::io {

/// FNV-1a 64-bit content hash, hex encoded. Stable across platforms; changes
/// iff the config bytes change.
std::string fnv1a_hex(const std::string& bytes);

struct RunManifest {
    std::string command;
    std::string config_digest;
    std::uint64_t seed = 0;
    std::string scale;  // "smoke" or "full"
    std::vector<std::string> outputs;
    std::string timestamp;  // wall clock; excluded from reproducibility claims
    std::string revision;
    std::map<std::string, std::string> module_versions;

    std::string to_json() const;
    void write(const std::string& path) const;
};

RunManifest make_manifest(const std::string& command, const std::string& config_bytes,
                          std::uint64_t seed, const std::string& scale);

/// Everything a CLI command can need. `bench` carries the experiment
/// parameters; the path/architecture fields point commands at their inputs.
struct CliConfig {
    int schema_version = 1;
    lq::BenchmarkConfig bench;
    adv::AttackConfig attack;          // resolved attack section
    double adversarial_min_separation = 0.25;
    std::string architecture = "nn1";  // "nn1" or "nn2"
    std::string dataset_path;
    std::string controller_path;
};

/// Parses and validates a schema-version-1 config document. Unknown keys and
/// out-of-range values raise ContractViolation naming the offending field.
CliConfig parse_config(const std::string& json_text);

/// Default config (schema version 1) serialized as JSON, for --help hints and
/// round-trip tests.
std::string default_config_json();

// Dataset CSV: header record,x,mean_x,noise,u,mean_u[,provenance]; one row per
// record, %.17g values.
void write_dataset_csv(const std::string& path, const nn::Dataset& records,
                       const std::vector<retrain::Provenance>* provenance);
nn::Dataset read_dataset_csv(const std::string& path,
                             std::vector<retrain::Provenance>* provenance);

}  // namespace mftc::io
