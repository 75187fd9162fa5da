#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace minibert {

// Dense row-major tensor of 64-bit floats.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
    }

    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int64_t> s, double v) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }

    static Tensor scalar(double v) {
        Tensor t({1});
        t.data[0] = v;
        return t;
    }

    static Tensor from(std::vector<int64_t> s, std::vector<double> d) {
        if (numel_of(s) != static_cast<int64_t>(d.size()))
            throw std::invalid_argument("tensor: data size does not match shape " + shape_str(s));
        Tensor t;
        t.shape = std::move(s);
        t.data = std::move(d);
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

    double& at(int64_t i) { return data[static_cast<size_t>(i)]; }
    double at(int64_t i) const { return data[static_cast<size_t>(i)]; }
    double& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double& at(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    double at(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(double v) {
        for (auto& x : data) x = v;
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) n *= d;
        return n;
    }

    static std::string shape_str(const std::vector<int64_t>& s) {
        std::ostringstream os;
        os << '[';
        for (size_t i = 0; i < s.size(); ++i) {
            if (i) os << ',';
            os << s[i];
        }
        os << ']';
        return os.str();
    }

    std::string shape_str() const { return shape_str(shape); }
};

}  // namespace minibert
