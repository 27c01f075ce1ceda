#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "cace/continual_trainer.hpp"

namespace cace::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

class ConfigError : public Error {
public:
    using Error::Error;
};

struct RunConfig {
    SequenceConfig sequence;
    std::optional<std::string> out_dir;
};

// Parse and validate a JSON run configuration. Unknown keys, wrong types and
// out-of-range values raise ConfigError.
RunConfig parse_run_config(const std::string& json_text);

// JSON echo of a configuration in the same schema parse_run_config reads.
std::string config_json(const SequenceConfig& config, int indent = 2);

// Entry point used by the executable; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cace::cli
