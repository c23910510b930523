#pragma once

#include <bit>
#include <cstring>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "covnat/io.hpp"
#include "covnat/params.hpp"

namespace covnat {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts are unsupported");

// Checkpoint = text manifest at `path` plus a raw little-endian float64
// payload at `path`.bin. The manifest echoes the model config and records
// name, shape and byte offset per parameter.
inline void save_checkpoint(const ParameterStore& store,
                            const std::map<std::string, std::string>& config_echo,
                            const std::string& path) {
    std::vector<std::string> manifest;
    manifest.push_back("covnat-checkpoint v1");
    for (const auto& [k, v] : config_echo) manifest.push_back("config " + k + " " + v);
    if (store.has("coverage.lambda")) {
        std::ostringstream os;
        os.precision(17);
        os << "lambda " << store.get("coverage.lambda").at(0);
        manifest.push_back(os.str());
    }
    const std::string payload_name = std::filesystem::path(path).filename().string() + ".bin";
    manifest.push_back("payload " + payload_name);

    std::string payload;
    for (const auto& p : store) {
        std::ostringstream os;
        os << "tensor " << p.name << " " << p.tensor.rank();
        for (Index d : p.tensor.shape()) os << " " << d;
        os << " " << payload.size();
        manifest.push_back(os.str());
        const auto& vals = p.tensor.values();
        const std::size_t bytes = vals.size() * sizeof(double);
        const std::size_t off = payload.size();
        payload.resize(off + bytes);
        std::memcpy(payload.data() + off, vals.data(), bytes);
    }
    atomic_write_bytes(path + ".bin", payload);
    atomic_write_lines(path, manifest);
}

inline std::map<std::string, std::string> read_checkpoint_config(const std::string& path) {
    std::map<std::string, std::string> config;
    for (const auto& line : read_lines(path)) {
        std::istringstream is(line);
        std::string tag;
        is >> tag;
        if (tag == "config") {
            std::string k, v;
            is >> k >> v;
            config[k] = v;
        }
    }
    if (config.empty()) throw DataError("checkpoint manifest has no config section: " + path);
    return config;
}

// Fills an already-constructed parameter store. Every manifest tensor must
// match a registered parameter in name and shape, and vice versa.
inline void load_checkpoint_into(ParameterStore& store, const std::string& path) {
    auto manifest = read_lines(path);
    if (manifest.empty() || manifest[0] != "covnat-checkpoint v1")
        throw DataError("not a covnat checkpoint: " + path);

    std::string payload_name;
    struct Entry {
        Shape shape;
        std::size_t offset = 0;
    };
    std::map<std::string, Entry> entries;
    for (const auto& line : manifest) {
        std::istringstream is(line);
        std::string tag;
        is >> tag;
        if (tag == "payload") {
            is >> payload_name;
        } else if (tag == "tensor") {
            std::string name;
            Index rank = 0;
            is >> name >> rank;
            Entry e;
            for (Index i = 0; i < rank; ++i) {
                Index d = 0;
                is >> d;
                e.shape.push_back(d);
            }
            is >> e.offset;
            if (!is) throw DataError("malformed tensor line in checkpoint: " + line);
            entries[name] = std::move(e);
        }
    }
    if (payload_name.empty()) throw DataError("checkpoint manifest missing payload line: " + path);

    const std::string payload_path =
        (std::filesystem::path(path).parent_path() / payload_name).string();
    std::ifstream in(payload_path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint payload: " + payload_path);
    std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (entries.size() != store.size())
        throw DataError("checkpoint has " + std::to_string(entries.size()) + " tensors, model expects " +
                        std::to_string(store.size()));
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto& p = store.at(i);
        auto it = entries.find(p.name);
        if (it == entries.end()) throw DataError("checkpoint missing parameter: " + p.name);
        if (it->second.shape != p.tensor.shape())
            throw DataError("checkpoint shape mismatch for " + p.name + ": file has " +
                            shape_str(it->second.shape) + ", model expects " +
                            shape_str(p.tensor.shape()));
        auto& vals = p.tensor.mutable_values();
        const std::size_t bytes = vals.size() * sizeof(double);
        if (it->second.offset + bytes > payload.size())
            throw DataError("checkpoint payload truncated at parameter " + p.name);
        std::memcpy(vals.data(), payload.data() + it->second.offset, bytes);
    }
}

}  // namespace covnat
