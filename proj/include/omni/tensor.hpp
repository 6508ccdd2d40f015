#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "omni/error.hpp"
#include "omni/rng.hpp"

namespace omni {

// Dense row-major float32 array. Value semantics throughout; every op below
// is a pure function and safe to call concurrently.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0f);
    }

    Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape)) {
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        }
    }

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(s));
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    static std::string shape_str(const std::vector<int>& s) {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
        os << "]";
        return os.str();
    }

    std::size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }

    float& at(int i) { return data[static_cast<std::size_t>(i)]; }
    float at(int i) const { return data[static_cast<std::size_t>(i)]; }
    float& at(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
    float at(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
    float& at(int i, int j, int k) {
        return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    float at(int i, int j, int k) const {
        return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (float v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    static Tensor full(std::vector<int> s, float value) {
        Tensor t(std::move(s));
        for (float& v : t.data) v = value;
        return t;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    // Seeded uniform init in [-bound, bound]; the stand-in encoders and toy
    // weights are all built from this.
    static Tensor random_uniform(std::vector<int> s, Rng& rng, float bound) {
        Tensor t(std::move(s));
        for (float& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
        return t;
    }
};

inline Tensor operator+(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw DimensionError("elementwise add of " + Tensor::shape_str(a.shape) + " and " +
                             Tensor::shape_str(b.shape));
    }
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw DimensionError("elementwise sub of " + Tensor::shape_str(a.shape) + " and " +
                             Tensor::shape_str(b.shape));
    }
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

inline Tensor operator*(const Tensor& a, float s) {
    Tensor out = a;
    for (float& v : out.data) v *= s;
    return out;
}

inline std::string shape_str(const std::vector<int>& s) { return Tensor::shape_str(s); }

inline Tensor transpose2d(const Tensor& x) {
    if (x.rank() != 2) throw DimensionError("transpose2d needs rank 2, got " + shape_str(x.shape));
    Tensor out({x.shape[1], x.shape[0]});
    for (int i = 0; i < x.shape[0]; ++i) {
        for (int j = 0; j < x.shape[1]; ++j) out.at(j, i) = x.at(i, j);
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul: [m x k] * [k x n] -> [m x n]

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
        throw DimensionError("matmul shape mismatch: " + Tensor::shape_str(a.shape) + " * " +
                             Tensor::shape_str(b.shape));
    }
    const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const float av = a.at(i, p);
            if (av == 0.0f) continue;
            for (int j = 0; j < n; ++j) out.at(i, j) += av * b.at(p, j);
        }
    }
    return out;
}

struct MatmulGrads {
    Tensor da;
    Tensor db;
};

// dA = dC * B^T, dB = A^T * dC
inline MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dout) {
    const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    if (dout.rank() != 2 || dout.shape[0] != m || dout.shape[1] != n) {
        throw DimensionError("matmul backward gradient shape " + Tensor::shape_str(dout.shape) +
                             " does not match output [" + std::to_string(m) + "x" +
                             std::to_string(n) + "]");
    }
    MatmulGrads g{Tensor({m, k}), Tensor({k, n})};
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            float acc = 0.0f;
            for (int j = 0; j < n; ++j) acc += dout.at(i, j) * b.at(p, j);
            g.da.at(i, p) = acc;
        }
    }
    for (int p = 0; p < k; ++p) {
        for (int j = 0; j < n; ++j) {
            float acc = 0.0f;
            for (int i = 0; i < m; ++i) acc += a.at(i, p) * dout.at(i, j);
            g.db.at(p, j) = acc;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// softmax along an axis, max-subtracted for stability

namespace detail {

// Iterates every 1-D lane along `axis`; f(base, stride, len).
template <typename F>
void for_each_lane(const std::vector<int>& shape, int axis, F&& f) {
    std::size_t stride = 1;
    for (std::size_t d = axis + 1; d < shape.size(); ++d) stride *= shape[d];
    const std::size_t len = shape[axis];
    std::size_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= shape[d];
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t s = 0; s < stride; ++s) {
            f(o * stride * len + s, stride, len);
        }
    }
}

}  // namespace detail

inline Tensor softmax(const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.rank()) {
        throw DimensionError("softmax axis " + std::to_string(axis) + " invalid for shape " +
                             Tensor::shape_str(x.shape));
    }
    Tensor out = x;
    detail::for_each_lane(x.shape, axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
        float mx = -std::numeric_limits<float>::infinity();
        for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, x.data[base + i * stride]);
        double sum = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double e = std::exp(static_cast<double>(x.data[base + i * stride]) - mx);
            out.data[base + i * stride] = static_cast<float>(e);
            sum += e;
        }
        for (std::size_t i = 0; i < len; ++i) {
            out.data[base + i * stride] = static_cast<float>(out.data[base + i * stride] / sum);
        }
    });
    return out;
}

// dx_i = y_i * (dy_i - sum_j y_j dy_j) along the softmax axis.
inline Tensor softmax_backward(const Tensor& y, const Tensor& dout, int axis) {
    if (!y.same_shape(dout)) {
        throw DimensionError("softmax backward shapes differ: " + Tensor::shape_str(y.shape) +
                             " vs " + Tensor::shape_str(dout.shape));
    }
    Tensor dx(y.shape);
    detail::for_each_lane(y.shape, axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
        double dot = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            dot += static_cast<double>(y.data[base + i * stride]) * dout.data[base + i * stride];
        }
        for (std::size_t i = 0; i < len; ++i) {
            const std::size_t idx = base + i * stride;
            dx.data[idx] = static_cast<float>(y.data[idx] * (dout.data[idx] - dot));
        }
    });
    return dx;
}

// ---------------------------------------------------------------------------
// 2x bilinear downsampling of an HxWxC grid. At an exact 2x reduction the
// half-pixel-center bilinear kernel degenerates to the mean of each 2x2
// window, which also preserves the global mean exactly.

inline Tensor bilinear_downsample2x(const Tensor& f) {
    if (f.rank() != 3) {
        throw DimensionError("bilinear_downsample2x expects HxWxC, got " +
                             Tensor::shape_str(f.shape));
    }
    const int h = f.shape[0], w = f.shape[1], c = f.shape[2];
    if (h % 2 != 0 || w % 2 != 0) {
        throw InputError("bilinear_downsample2x requires even spatial dims, got " +
                         std::to_string(h) + "x" + std::to_string(w));
    }
    Tensor out({h / 2, w / 2, c});
    for (int i = 0; i < h / 2; ++i) {
        for (int j = 0; j < w / 2; ++j) {
            for (int ch = 0; ch < c; ++ch) {
                const float s = f.at(2 * i, 2 * j, ch) + f.at(2 * i, 2 * j + 1, ch) +
                                f.at(2 * i + 1, 2 * j, ch) + f.at(2 * i + 1, 2 * j + 1, ch);
                out.at(i, j, ch) = 0.25f * s;
            }
        }
    }
    return out;
}

inline Tensor bilinear_downsample2x_backward(const Tensor& f, const Tensor& dout) {
    const int h = f.shape[0], w = f.shape[1], c = f.shape[2];
    if (dout.rank() != 3 || dout.shape[0] != h / 2 || dout.shape[1] != w / 2 ||
        dout.shape[2] != c) {
        throw DimensionError("bilinear_downsample2x backward gradient shape " +
                             Tensor::shape_str(dout.shape) + " does not match " +
                             Tensor::shape_str({h / 2, w / 2, c}));
    }
    Tensor dx({h, w, c});
    for (int i = 0; i < h / 2; ++i) {
        for (int j = 0; j < w / 2; ++j) {
            for (int ch = 0; ch < c; ++ch) {
                const float g = 0.25f * dout.at(i, j, ch);
                dx.at(2 * i, 2 * j, ch) = g;
                dx.at(2 * i, 2 * j + 1, ch) = g;
                dx.at(2 * i + 1, 2 * j, ch) = g;
                dx.at(2 * i + 1, 2 * j + 1, ch) = g;
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Activations (scalar, with derivatives; used by scorers, connectors and the
// toy decoder).

enum class Activation { identity, relu, gelu, tanh_act };

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::gelu: return "gelu";
        case Activation::tanh_act: return "tanh";
    }
    return "?";
}

inline Activation activation_from_name(const std::string& name) {
    if (name == "identity") return Activation::identity;
    if (name == "relu") return Activation::relu;
    if (name == "gelu") return Activation::gelu;
    if (name == "tanh") return Activation::tanh_act;
    throw ConfigError("unknown activation '" + name + "'");
}

inline float activate(Activation a, float x) {
    switch (a) {
        case Activation::identity: return x;
        case Activation::relu: return x > 0.0f ? x : 0.0f;
        case Activation::gelu: {
            // exact GELU: x * Phi(x)
            const double xd = x;
            return static_cast<float>(0.5 * xd * (1.0 + std::erf(xd * 0.7071067811865476)));
        }
        case Activation::tanh_act: return std::tanh(x);
    }
    return x;
}

inline float activate_grad(Activation a, float x) {
    switch (a) {
        case Activation::identity: return 1.0f;
        case Activation::relu: return x > 0.0f ? 1.0f : 0.0f;
        case Activation::gelu: {
            const double xd = x;
            const double phi = 0.5 * (1.0 + std::erf(xd * 0.7071067811865476));
            const double pdf = 0.3989422804014327 * std::exp(-0.5 * xd * xd);
            return static_cast<float>(phi + xd * pdf);
        }
        case Activation::tanh_act: {
            const float t = std::tanh(x);
            return 1.0f - t * t;
        }
    }
    return 1.0f;
}

}  // namespace omni
