#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace podnn {

// Dense n-dimensional array, row-major, owning its buffer.
template <class S>
struct TensorT {
    std::vector<int> shape;
    std::vector<S> v;

    TensorT() = default;

    explicit TensorT(std::vector<int> shp) : shape(std::move(shp)), v(count(shape), S(0)) {}

    TensorT(std::vector<int> shp, std::vector<S> values) : shape(std::move(shp)), v(std::move(values)) {
        if (static_cast<int64_t>(v.size()) != count(shape)) {
            throw std::invalid_argument("tensor: value count " + std::to_string(v.size()) +
                                        " does not match shape " + shape_str());
        }
    }

    static TensorT zeros(std::vector<int> shp) { return TensorT(std::move(shp)); }

    static TensorT full(std::vector<int> shp, S value) {
        TensorT t(std::move(shp));
        std::fill(t.v.begin(), t.v.end(), value);
        return t;
    }

    static int64_t count(const std::vector<int>& shp) {
        int64_t n = 1;
        for (int d : shp) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    int64_t size() const { return static_cast<int64_t>(v.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }

    int dim(int i) const {
        if (i < 0 || i >= ndim()) throw std::invalid_argument("tensor: dim index out of range");
        return shape[i];
    }

    S* data() { return v.data(); }
    const S* data() const { return v.data(); }

    S& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
    const S& operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) os << 'x';
            os << shape[i];
        }
        os << ']';
        return os.str();
    }

    template <class U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }

    bool all_finite() const {
        for (S x : v) {
            if (!std::isfinite(static_cast<double>(x))) return false;
        }
        return true;
    }
};

using Tensor = TensorT<double>;
using TensorF = TensorT<float>;

template <class S>
inline void require_shape(const TensorT<S>& t, const std::vector<int>& expect, const char* what) {
    if (t.shape != expect) {
        TensorT<S> e(expect);
        throw std::invalid_argument(std::string(what) + ": expected shape " + e.shape_str() +
                                    ", got " + t.shape_str());
    }
}

} // namespace podnn
