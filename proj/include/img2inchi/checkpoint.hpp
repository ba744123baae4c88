#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "img2inchi/errors.hpp"
#include "img2inchi/model.hpp"

namespace img2inchi {

// Checkpoint layout (all integers little-endian):
//   "ISCK" | u32 version | u64 config_len | config JSON (canonical, sorted
//   keys) | u32 tensor_count | per tensor: u16 name_len, name, u8 rank,
//   u32 dims[rank], f32 data (row-major).
// load(save(w)) is bit-identical: floats are written raw.
namespace checkpoint {

inline constexpr char kMagic[4] = {'I', 'S', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

namespace detail {

template <typename T>
void write_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
}

inline void write_f32(std::ostream& os, float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    write_le<std::uint32_t>(os, u);
}

inline float read_f32(std::istream& is) {
    std::uint32_t u = read_le<std::uint32_t>(is);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

}  // namespace detail

inline void save(const std::string& path, const ModelWeights<float>& w) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint " + path);
    f.write(kMagic, 4);
    detail::write_le<std::uint32_t>(f, kVersion);
    const std::string cfg = w.cfg.to_json().dump();
    detail::write_le<std::uint64_t>(f, cfg.size());
    f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    detail::write_le<std::uint32_t>(f, static_cast<std::uint32_t>(w.table.size()));
    for (const auto& [name, t] : w.table) {
        detail::write_le<std::uint16_t>(f, static_cast<std::uint16_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        f.put(static_cast<char>(t.rank()));
        for (int d : t.shape()) detail::write_le<std::uint32_t>(f, static_cast<std::uint32_t>(d));
        for (float v : t.data()) detail::write_f32(f, v);
    }
    if (!f) throw IoError("write to checkpoint " + path + " failed");
}

inline ModelWeights<float> load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("checkpoint " + path + " has a bad magic (not an ISCK file)");
    const std::uint32_t version = detail::read_le<std::uint32_t>(f);
    if (version != kVersion)
        throw IoError("checkpoint " + path + " has unsupported version " + std::to_string(version));
    const std::uint64_t cfg_len = detail::read_le<std::uint64_t>(f);
    std::string cfg_text(cfg_len, '\0');
    f.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
    ModelConfig cfg;
    try {
        cfg = ModelConfig::from_json(nlohmann::json::parse(cfg_text));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint " + path + " has a malformed config: " + e.what());
    }
    // Structure comes from the config; data is then filled by name.
    ModelWeights<float> w = ModelWeights<float>::init(cfg, 0);
    const std::uint32_t count = detail::read_le<std::uint32_t>(f);
    if (count != w.table.size())
        throw IoError("checkpoint " + path + " holds " + std::to_string(count) + " tensors, config implies " +
                      std::to_string(w.table.size()));
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = detail::read_le<std::uint16_t>(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        if (!seen.insert(name).second) throw IoError("checkpoint " + path + " repeats tensor " + name);
        const int rank = f.get();
        Shape shape(static_cast<std::size_t>(rank));
        for (int d = 0; d < rank; ++d) shape[static_cast<std::size_t>(d)] =
            static_cast<int>(detail::read_le<std::uint32_t>(f));
        Tensor<float>& t = w.param(name);
        if (t.shape() != shape)
            throw IoError("checkpoint " + path + " tensor " + name + " has shape " + shape_str(shape) +
                          ", expected " + shape_str(t.shape()));
        for (float& v : t.data()) v = detail::read_f32(f);
        if (!f) throw IoError("checkpoint " + path + " is truncated at tensor " + name);
    }
    return w;
}

}  // namespace checkpoint
}  // namespace img2inchi
