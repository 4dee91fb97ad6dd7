// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace growmerge {

static_assert(std::endian::native == std::endian::little,
              "growmerge assumes a little-endian host");

// Violated operation contract: bad arguments, mismatched shapes, invalid config.
// Maps to CLI exit code 1.
class ContractError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Filesystem failure or corrupt container. Maps to CLI exit code 2.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { F32, F64 };

inline std::size_t dtype_size(DType dt) { return dt == DType::F32 ? 4 : 8; }

inline std::string_view dtype_name(DType dt) { return dt == DType::F32 ? "F32" : "F64"; }

inline DType dtype_from_name(std::string_view name) {
    if (name == "F32") return DType::F32;
    if (name == "F64") return DType::F64;
    throw IoError("unsupported dtype \"" + std::string(name) + "\" (supported: F32, F64)");
}

template <class F>
decltype(auto) dispatch_dtype(DType dt, F&& f) {
    if (dt == DType::F32) return f(float{});
    return f(double{});
}

// Dense row-major array of f32 or f64 scalars. Treated as an immutable value:
// every operation in this library builds a fresh Tensor instead of mutating.
class Tensor {
public:
    Tensor() = default;

    // Zero-filled tensor of the given shape.
    Tensor(DType dt, std::vector<std::size_t> shape)
        : dtype_(dt), shape_(std::move(shape)) {
        data_.assign(numel() * dtype_size(dtype_), std::byte{0});
    }

    template <class T>
    static Tensor of(std::vector<std::size_t> shape, const std::vector<T>& values) {
        static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
        Tensor t(std::is_same_v<T, float> ? DType::F32 : DType::F64, std::move(shape));
        if (values.size() != t.numel())
            throw ContractError("tensor data length " + std::to_string(values.size()) +
                                " does not match shape product " + std::to_string(t.numel()));
        std::memcpy(t.data_.data(), values.data(), values.size() * sizeof(T));
        return t;
    }

    // Builds a tensor of the requested dtype from double values (f32 narrows).
    static Tensor from_doubles(DType dt, std::vector<std::size_t> shape,
                               const std::vector<double>& values) {
        if (dt == DType::F64) return of(std::move(shape), values);
        std::vector<float> narrowed(values.begin(), values.end());
        return of(std::move(shape), narrowed);
    }

    static Tensor from_raw(DType dt, std::vector<std::size_t> shape,
                           std::vector<std::byte> bytes) {
        Tensor t;
        t.dtype_ = dt;
        t.shape_ = std::move(shape);
        if (bytes.size() != t.numel() * dtype_size(dt))
            throw ContractError("raw byte length does not match shape product");
        t.data_ = std::move(bytes);
        return t;
    }

    DType dtype() const { return dtype_; }
    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    std::size_t numel() const {
        std::size_t n = 1;
        for (std::size_t e : shape_) n *= e;
        return n;
    }

    std::size_t size_bytes() const { return data_.size(); }
    const std::vector<std::byte>& raw() const { return data_; }

    template <class T>
    std::span<const T> values() const {
        static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
        const DType want = std::is_same_v<T, float> ? DType::F32 : DType::F64;
        if (want != dtype_) throw ContractError("tensor dtype view mismatch");
        return {reinterpret_cast<const T*>(data_.data()), numel()};
    }

    // Flat-index read, widened to double regardless of storage dtype.
    double item(std::size_t flat) const {
        if (dtype_ == DType::F32) {
            float v;
            std::memcpy(&v, data_.data() + flat * 4, 4);
            return v;
        }
        double v;
        std::memcpy(&v, data_.data() + flat * 8, 8);
        return v;
    }

    std::vector<double> to_doubles() const {
        std::vector<double> out(numel());
        if (dtype_ == DType::F64) {
            std::memcpy(out.data(), data_.data(), data_.size());
        } else {
            auto v = values<float>();
            for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i];
        }
        return out;
    }

    Tensor astype(DType dt) const {
        if (dt == dtype_) return *this;
        return from_doubles(dt, shape_, to_doubles());
    }

    bool all_finite() const {
        for (std::size_t i = 0; i < numel(); ++i)
            if (!std::isfinite(item(i))) return false;
        return true;
    }

    bool same_layout(const Tensor& other) const {
        return dtype_ == other.dtype_ && shape_ == other.shape_;
    }

    bool operator==(const Tensor& other) const {
        return dtype_ == other.dtype_ && shape_ == other.shape_ && data_ == other.data_;
    }

private:
    DType dtype_ = DType::F32;
    std::vector<std::size_t> shape_;
    std::vector<std::byte> data_;
};

inline std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// NaN/Inf is an error state for library-produced tensors.
inline void require_finite(const Tensor& t, std::string_view context) {
    if (!t.all_finite())
        throw ContractError(std::string(context) + ": produced a non-finite scalar");
}

}  // namespace growmerge
