#include "spf/util.hpp"

#include <cstdlib>
#include <fstream>

#include "spf/tensor.hpp"

namespace spf::util {

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(f, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r')) line.pop_back();
    if (line.empty()) continue;
    const auto eq = line.find('=');
    check(eq != std::string::npos, "bad config line (expected key=value): " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open file: " + path);
  std::uint64_t h = 1469598103934665603ull;
  char c;
  while (f.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

bool verbose() {
  const char* v = std::getenv("SPF_VERBOSE");
  return v != nullptr && std::string(v) != "0";
}

}  // namespace spf::util
