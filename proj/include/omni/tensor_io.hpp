#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "omni/error.hpp"
#include "omni/tensor.hpp"

namespace omni {

// Tensor container format (little-endian):
//   magic "TNSR" | u32 rank | u32 dims[rank] | f32 data[prod(dims)]
// Shared by the vision and audio paths for feature dumps.

inline void write_tensor(std::ostream& os, const Tensor& t) {
    os.write("TNSR", 4);
    const std::uint32_t rank = static_cast<std::uint32_t>(t.shape.size());
    os.write(reinterpret_cast<const char*>(&rank), 4);
    for (int d : t.shape) {
        const std::uint32_t u = static_cast<std::uint32_t>(d);
        os.write(reinterpret_cast<const char*>(&u), 4);
    }
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

inline void write_tensor_file(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    write_tensor(os, t);
    if (!os) throw IoError("write failed for '" + path + "'");
}

inline Tensor read_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "TNSR", 4) != 0) {
        throw IoError("bad tensor file magic");
    }
    std::uint32_t rank = 0;
    is.read(reinterpret_cast<char*>(&rank), 4);
    if (!is || rank == 0 || rank > 8) throw IoError("bad tensor rank");
    std::vector<int> shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
        std::uint32_t d = 0;
        is.read(reinterpret_cast<char*>(&d), 4);
        if (!is || d == 0) throw IoError("bad tensor dimension");
        shape[i] = static_cast<int>(d);
    }
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!is) throw IoError("truncated tensor data");
    return t;
}

inline Tensor read_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    return read_tensor(is);
}

}  // namespace omni
