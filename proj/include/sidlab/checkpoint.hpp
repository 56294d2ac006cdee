#pragma once

#include "sidlab/adam.hpp"
#include "sidlab/net.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace sidlab {

// On-disk layout:
//
//   SIDLAB-CHECKPOINT 1
//   { ...JSON header: kind, seed, step, config_hash, arrays[{name,rows,cols}], meta... }
//   END_HEADER
//   <raw little-endian float64 arrays, row-major, in header order>
struct Checkpoint {
    std::string kind;
    uint64_t seed = 0;
    long step = 0;
    std::string config_hash;
    nlohmann::json meta = nlohmann::json::object();

    std::vector<std::string> names;
    std::vector<Mat> arrays;

    void add(const std::string& name, const Mat& m);
    const Mat& get(const std::string& name) const;
    bool has(const std::string& name) const;

    void add_params(const std::string& prefix, const NetParams& p);
    NetParams params(const std::string& prefix) const;
    void add_adam(const std::string& prefix, const AdamState& s);
    AdamState adam(const std::string& prefix) const;
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
// Verifies the config hash when `expected_hash` is given (ConfigError on mismatch).
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_hash = std::nullopt);

}  // namespace sidlab
