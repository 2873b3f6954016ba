#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace spf::util {

// key=value lines; '#' starts a comment, blank lines ignored.
std::map<std::string, std::string> read_kv_file(const std::string& path);

std::uint64_t fnv1a_file(const std::string& path);

// SPF_VERBOSE environment variable, non-zero enables progress output.
bool verbose();

}  // namespace spf::util
