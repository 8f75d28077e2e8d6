#pragma once
// Operator surface: gen-data, train, eval and predict driven by a flat
// dotted-key JSON config plus command-line overrides.

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "deci/corpus.hpp"
#include "deci/evaluation.hpp"
#include "deci/model.hpp"
#include "deci/training.hpp"

namespace deci {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kData = 2;
inline constexpr int kNumerical = 3;
}  // namespace exit_code

struct RunPaths {
    std::string data_dir = "data";
    std::string checkpoint = "deci.ckpt";
    std::string epoch_log;  // defaults to <checkpoint>.epochs.jsonl
    std::string report;     // stdout when empty
    std::string scores;     // optional score dump from eval
    std::string input;
    std::string output;     // stdout when empty
};

struct RunConfig {
    SyntheticConfig data;
    ModelConfig model;
    TrainConfig train;
    std::vector<std::size_t> ks = {5};
    InferenceMode mode = InferenceMode::Deci;
    std::string split = "test";
    RunPaths paths;

    // Flat {"section.key": value} object. Paths are left out when
    // include_paths is false so that reports do not depend on where a run
    // happened.
    nlohmann::ordered_json to_json(bool include_paths = true) const;
    // Applies every key present in `j`; unknown keys and type mismatches
    // throw ConfigError.
    void apply(const nlohmann::json& j);
    // Applies one key from its textual value (parsed as JSON when possible,
    // otherwise taken as a string).
    void set(const std::string& key, const std::string& value);
    void validate() const;
};

RunConfig load_run_config(const std::string& path);

// Entry point shared by the executable and the tests. Returns an exit_code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace deci
