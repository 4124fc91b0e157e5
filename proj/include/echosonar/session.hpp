#pragma once

#include <filesystem>

#include <json.hpp>

#include "echosonar/dataset.hpp"
#include "echosonar/model.hpp"

namespace echosonar {

// Batch-command implementations shared by the CLI binary and the tests.
// Every command consumes a validated JSON config (unknown keys rejected),
// writes its outputs under out_dir and drops a resolved-config copy that is
// sufficient to reproduce the run.

struct RunConfig {
    std::string command;
    nlohmann::json config;
    std::uint64_t seed = 1;
    std::filesystem::path out_dir;
};

// Throws ConfigError when `j` holds a key outside `allowed` (dotted context
// names the offending section in the message).
void reject_unknown_keys(const nlohmann::json& j,
                         const std::vector<std::string>& allowed,
                         const std::string& context);

ChirpSpec chirp_from_config(const nlohmann::json& j);

void cmd_simulate(const RunConfig& run);
void cmd_preprocess(const RunConfig& run);
void cmd_train(const RunConfig& run);
void cmd_eval(const RunConfig& run);
void cmd_activate(const RunConfig& run);

// Parses argv, dispatches, reports errors on stderr; returns the exit code.
int run_cli(const std::vector<std::string>& args);

}  // namespace echosonar
