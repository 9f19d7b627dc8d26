#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "seqrec/encoders.hpp"
#include "seqrec/tensor.hpp"

namespace seqrec {

// Flat binary checkpoint: magic, parameter count, then per parameter the
// name, element type, shape, and raw little-endian values. Round-trips are
// bit-exact. Layout:
//   "SRCKPT01"  u32 count
//   per param: u32 name_len, name bytes, u8 dtype (0=f64, 1=f32),
//              u32 ndim, u64 dim..., value bytes (LE)
namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

template <typename S>
void put_value(std::ostream& os, S v) {
    static_assert(sizeof(S) == 4 || sizeof(S) == 8);
    if constexpr (sizeof(S) == 8) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_u64(os, bits);
    } else {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(os, bits);
    }
}

template <typename S>
S get_value(std::istream& is) {
    if constexpr (sizeof(S) == 8) {
        std::uint64_t bits = get_u64(is);
        S v;
        std::memcpy(&v, &bits, 8);
        return v;
    } else {
        std::uint32_t bits = get_u32(is);
        S v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
}

}  // namespace detail

inline constexpr char kCheckpointMagic[9] = "SRCKPT01";

template <typename S>
void save_checkpoint(const std::string& path, const ParamRegistry<S>& registry) {
    std::ofstream os(path, std::ios::binary);
    SEQREC_CHECK(os.good(), "io", "cannot write checkpoint '", path, "'");
    os.write(kCheckpointMagic, 8);
    detail::put_u32(os, static_cast<std::uint32_t>(registry.params.size()));
    for (const auto* p : registry.params) {
        detail::put_u32(os, static_cast<std::uint32_t>(p->name.size()));
        os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        os.put(sizeof(S) == 8 ? '\0' : '\1');
        detail::put_u32(os, static_cast<std::uint32_t>(p->value.shape.size()));
        for (auto d : p->value.shape) detail::put_u64(os, d);
        for (S v : p->value.data) detail::put_value<S>(os, v);
    }
    SEQREC_CHECK(os.good(), "io", "short write to checkpoint '", path, "'");
}

template <typename S>
std::map<std::string, Tensor<S>> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    SEQREC_CHECK(is.good(), "io", "cannot open checkpoint '", path, "'");
    char magic[8];
    is.read(magic, 8);
    SEQREC_CHECK(is.good() && std::memcmp(magic, kCheckpointMagic, 8) == 0, "format",
                 "'", path, "' is not a seqrec checkpoint");
    std::uint32_t count = detail::get_u32(is);
    std::map<std::string, Tensor<S>> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = detail::get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        int dtype = is.get();
        SEQREC_CHECK(dtype == (sizeof(S) == 8 ? 0 : 1), "format", "checkpoint '",
                     path, "': parameter '", name,
                     "' was saved with a different precision");
        std::uint32_t ndim = detail::get_u32(is);
        std::vector<std::size_t> shape(ndim);
        for (auto& d : shape) d = static_cast<std::size_t>(detail::get_u64(is));
        Tensor<S> t = Tensor<S>::zeros(shape);
        for (auto& v : t.data) v = detail::get_value<S>(is);
        SEQREC_CHECK(is.good(), "format", "checkpoint '", path,
                     "' truncated at parameter '", name, "'");
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

template <typename S>
void restore_params(ParamRegistry<S>& registry,
                    const std::map<std::string, Tensor<S>>& values,
                    const std::string& origin) {
    for (auto* p : registry.params) {
        auto it = values.find(p->name);
        SEQREC_CHECK(it != values.end(), "format", origin,
                     ": missing parameter '", p->name, "'");
        SEQREC_CHECK(it->second.shape == p->value.shape, "format", origin,
                     ": parameter '", p->name, "' has shape ",
                     it->second.shape_str(), ", expected ", p->value.shape_str());
        p->value = it->second;
    }
    SEQREC_CHECK(values.size() == registry.params.size(), "format", origin,
                 ": checkpoint has ", values.size(), " parameters, model has ",
                 registry.params.size());
}

}  // namespace seqrec
