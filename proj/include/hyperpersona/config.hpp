#pragma once

// Flat key=value configuration files. One assignment per line, '#' starts
// a comment, blank lines are ignored, whitespace around keys and values is
// trimmed. Unknown keys, repeated keys and unparsable values are errors that
// name the offending key.

#include "hyperpersona/synthgen.hpp"
#include "hyperpersona/training.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace hyperpersona {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(std::istream& in);
KeyValues read_key_values(const std::filesystem::path& path);

// "1,2,3", "1..10" or a mix such as "1..3,7".
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

// Keys not present keep their defaults; validate() runs on the result.
SynthConfig synth_config_from(const KeyValues& kv, SynthConfig base = {});
TrainConfig train_config_from(const KeyValues& kv, TrainConfig base = {});

KeyValues to_key_values(const SynthConfig& config);

}  // namespace hyperpersona
