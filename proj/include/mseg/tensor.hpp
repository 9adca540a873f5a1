#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mseg {

// Dense row-major N-dimensional array. Layout convention for network
// tensors is [batch, channel, spatial...]; the last axis varies fastest.
template <class T>
struct TensorT {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    TensorT() = default;

    explicit TensorT(std::vector<std::size_t> s, T fill = T(0))
        : shape(std::move(s)), data(count(shape), fill) {}

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t e : s) {
            if (e == 0) throw std::invalid_argument("tensor extent must be positive");
            n *= e;
        }
        return n;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    T* begin() { return data.data(); }
    T* end() { return data.data() + data.size(); }
    const T* begin() const { return data.data(); }
    const T* end() const { return data.data() + data.size(); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <class U>
    TensorT<U> cast() const {
        TensorT<U> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// Integer label volume, shape [Z, Y, X] (x fastest).
struct LabelVolume {
    std::vector<std::size_t> shape;
    std::vector<std::uint8_t> data;

    LabelVolume() = default;
    explicit LabelVolume(std::vector<std::size_t> s, std::uint8_t fill = 0)
        : shape(std::move(s)), data(TensorT<float>::count(shape), fill) {}

    std::size_t numel() const { return data.size(); }
    std::uint8_t& operator[](std::size_t i) { return data[i]; }
    const std::uint8_t& operator[](std::size_t i) const { return data[i]; }
};

}  // namespace mseg
