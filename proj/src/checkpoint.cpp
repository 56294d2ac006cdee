#include "sidlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace sidlab {

namespace {

constexpr const char* kMagic = "SIDLAB-CHECKPOINT 1";
constexpr const char* kEnd = "END_HEADER";

uint64_t to_le(uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffULL) << (8 * (7 - i));
    return r;
}

}  // namespace

void Checkpoint::add(const std::string& name, const Mat& m) {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) {
            arrays[i] = m;
            return;
        }
    names.push_back(name);
    arrays.push_back(m);
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& n : names)
        if (n == name) return true;
    return false;
}

const Mat& Checkpoint::get(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return arrays[i];
    throw ConfigError("checkpoint: missing array '" + name + "'");
}

void Checkpoint::add_params(const std::string& prefix, const NetParams& p) {
    meta["nets"][prefix] = p.arch.to_json();
    for (size_t i = 0; i < p.tensors.size(); ++i) add(prefix + "/" + p.names[i], p.tensors[i]);
}

NetParams Checkpoint::params(const std::string& prefix) const {
    if (!meta.contains("nets") || !meta["nets"].contains(prefix))
        throw ConfigError("checkpoint: no network '" + prefix + "'");
    NetParams p = zero_net(ArchSpec::from_json(meta["nets"][prefix]));
    for (size_t i = 0; i < p.tensors.size(); ++i) {
        const Mat& m = get(prefix + "/" + p.names[i]);
        if (m.rows() != p.tensors[i].rows() || m.cols() != p.tensors[i].cols())
            throw ConfigError("checkpoint: shape mismatch for " + prefix + "/" + p.names[i]);
        p.tensors[i] = m;
    }
    return p;
}

void Checkpoint::add_adam(const std::string& prefix, const AdamState& s) {
    meta["adam"][prefix] = {{"lr", s.lr},
                            {"beta1", s.beta1},
                            {"beta2", s.beta2},
                            {"eps", s.eps_stab},
                            {"step_count", s.step_count},
                            {"tensors", s.first_moment.size()}};
    for (size_t i = 0; i < s.first_moment.size(); ++i) {
        add(prefix + "/m" + std::to_string(i), s.first_moment[i]);
        add(prefix + "/v" + std::to_string(i), s.second_moment[i]);
    }
}

AdamState Checkpoint::adam(const std::string& prefix) const {
    if (!meta.contains("adam") || !meta["adam"].contains(prefix))
        throw ConfigError("checkpoint: no optimizer state '" + prefix + "'");
    const auto& j = meta["adam"][prefix];
    AdamState s;
    s.lr = j.at("lr").get<double>();
    s.beta1 = j.at("beta1").get<double>();
    s.beta2 = j.at("beta2").get<double>();
    s.eps_stab = j.at("eps").get<double>();
    s.step_count = j.at("step_count").get<long>();
    const size_t n = j.at("tensors").get<size_t>();
    for (size_t i = 0; i < n; ++i) {
        s.first_moment.push_back(get(prefix + "/m" + std::to_string(i)));
        s.second_moment.push_back(get(prefix + "/v" + std::to_string(i)));
    }
    s.validate();
    return s;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    nlohmann::json h;
    h["kind"] = ck.kind;
    h["seed"] = ck.seed;
    h["step"] = ck.step;
    h["config_hash"] = ck.config_hash;
    h["meta"] = ck.meta;
    h["arrays"] = nlohmann::json::array();
    for (size_t i = 0; i < ck.names.size(); ++i)
        h["arrays"].push_back({{"name", ck.names[i]}, {"rows", ck.arrays[i].rows()}, {"cols", ck.arrays[i].cols()}});

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw ConfigError("checkpoint: cannot write " + tmp);
        os << kMagic << '\n' << h.dump(2) << '\n' << kEnd << '\n';
        for (const Mat& m : ck.arrays) {
            for (Eigen::Index k = 0; k < m.size(); ++k) {
                uint64_t bits = to_le(std::bit_cast<uint64_t>(m.data()[k]));
                os.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
            }
        }
        if (!os) throw ConfigError("checkpoint: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected_hash) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("checkpoint: cannot open " + path.string());
    std::string line;
    std::getline(is, line);
    if (line != kMagic) throw ConfigError("checkpoint: bad magic in " + path.string());
    std::string header;
    while (std::getline(is, line) && line != kEnd) header += line + '\n';
    if (line != kEnd) throw ConfigError("checkpoint: truncated header in " + path.string());
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("checkpoint: malformed header in " + path.string() + ": " + e.what());
    }
    Checkpoint ck;
    ck.kind = h.at("kind").get<std::string>();
    ck.seed = h.at("seed").get<uint64_t>();
    ck.step = h.at("step").get<long>();
    ck.config_hash = h.at("config_hash").get<std::string>();
    ck.meta = h.at("meta");
    if (expected_hash && *expected_hash != ck.config_hash)
        throw ConfigError("checkpoint: config hash mismatch for " + path.string() + " (file " + ck.config_hash +
                          ", expected " + *expected_hash + ")");
    for (const auto& a : h.at("arrays")) {
        Mat m(a.at("rows").get<Eigen::Index>(), a.at("cols").get<Eigen::Index>());
        for (Eigen::Index k = 0; k < m.size(); ++k) {
            uint64_t bits = 0;
            is.read(reinterpret_cast<char*>(&bits), sizeof(bits));
            m.data()[k] = std::bit_cast<double>(to_le(bits));
        }
        if (!is) throw ConfigError("checkpoint: truncated array data in " + path.string());
        ck.names.push_back(a.at("name").get<std::string>());
        ck.arrays.push_back(std::move(m));
    }
    return ck;
}

}  // namespace sidlab
