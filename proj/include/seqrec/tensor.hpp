#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "seqrec/common.hpp"

namespace seqrec {

// Dense row-major tensor. Rank 0 is a scalar (one element), rank 1 a vector,
// rank 2 a matrix; nothing in the toolkit needs more.
template <typename S>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<S> data;

    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape) {
        Tensor t;
        t.shape = std::move(shape);
        t.data.assign(numel_of(t.shape), S(0));
        return t;
    }

    static Tensor scalar(S v) {
        Tensor t;
        t.data.assign(1, v);
        return t;
    }

    static Tensor vector_of(std::vector<S> v) {
        Tensor t;
        t.shape = {v.size()};
        t.data = std::move(v);
        return t;
    }

    static Tensor matrix_of(std::size_t rows, std::size_t cols, std::vector<S> v) {
        SEQREC_CHECK(v.size() == rows * cols, "shape",
                     "matrix_of: ", v.size(), " values for ", rows, "x", cols);
        Tensor t;
        t.shape = {rows, cols};
        t.data = std::move(v);
        return t;
    }

    static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : t.data) v = static_cast<S>(rng.next_normal() * stddev);
        return t;
    }

    static std::size_t numel_of(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool is_scalar() const { return shape.empty(); }

    std::size_t rows() const {
        SEQREC_CHECK(rank() == 2, "shape", "rows(): tensor rank is ", rank());
        return shape[0];
    }
    std::size_t cols() const {
        SEQREC_CHECK(rank() == 2, "shape", "cols(): tensor rank is ", rank());
        return shape[1];
    }

    S& at(std::size_t i) { return data[i]; }
    S at(std::size_t i) const { return data[i]; }
    S& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    S at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    S* row_ptr(std::size_t r) { return data.data() + r * shape[1]; }
    const S* row_ptr(std::size_t r) const { return data.data() + r * shape[1]; }

    S scalar_value() const {
        SEQREC_CHECK(numel() == 1, "shape", "scalar_value(): numel is ", numel());
        return data[0];
    }

    void fill(S v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

template <typename S>
inline void accumulate(Tensor<S>& dst, const Tensor<S>& src) {
    SEQREC_CHECK(dst.data.size() == src.data.size(), "shape",
                 "accumulate: ", dst.shape_str(), " vs ", src.shape_str());
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace seqrec
