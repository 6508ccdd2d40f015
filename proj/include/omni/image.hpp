#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "omni/error.hpp"
#include "omni/tensor.hpp"
#include "omni/tensor_io.hpp"

namespace omni {

// RGB image with pixels in [0,1], stored HxWx3.
struct ImageInput {
    Tensor pixels;  // HxWx3

    int height() const { return pixels.shape[0]; }
    int width() const { return pixels.shape[1]; }

    static ImageInput from_pixels(Tensor t) {
        if (t.rank() != 3 || t.shape[2] != 3) {
            throw InputError("image tensor must be HxWx3, got " + Tensor::shape_str(t.shape));
        }
        return ImageInput{std::move(t)};
    }
};

namespace detail {

inline int ppm_next_int(std::istream& is) {
    // Skips whitespace and '#' comment lines, as the P6 header allows.
    int c = is.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = is.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = is.get();
    }
    if (c == EOF) throw IoError("truncated PPM header");
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = is.get();
    }
    if (!any) throw IoError("malformed PPM header");
    return value;
}

}  // namespace detail

// Binary PPM (P6, maxval 255) reader.
inline ImageInput read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    char p = 0, six = 0;
    is.get(p);
    is.get(six);
    if (p != 'P' || six != '6') throw IoError("'" + path + "' is not a P6 PPM");
    const int w = detail::ppm_next_int(is);
    const int h = detail::ppm_next_int(is);
    const int maxval = detail::ppm_next_int(is);
    if (maxval != 255) throw IoError("PPM maxval " + std::to_string(maxval) + " unsupported");
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw IoError("truncated PPM pixel data");
    Tensor t({h, w, 3});
    for (std::size_t i = 0; i < raw.size(); ++i) {
        t.data[i] = static_cast<float>(raw[i]) / 255.0f;
    }
    return ImageInput{std::move(t)};
}

inline void write_ppm(const std::string& path, const ImageInput& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "P6\n" << img.width() << " " << img.height() << "\n255\n";
    std::vector<unsigned char> raw(img.pixels.data.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        float v = img.pixels.data[i];
        v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        raw[i] = static_cast<unsigned char>(v * 255.0f + 0.5f);
    }
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

// Dispatch on extension: .ppm (P6) or the tensor container holding HxWx3.
inline ImageInput read_image(const std::string& path) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".ppm") {
        return read_ppm(path);
    }
    return ImageInput::from_pixels(read_tensor_file(path));
}

}  // namespace omni
