#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "vtcfed/errors.hpp"

namespace vtcfed {

// Latent vectors, prototypes and standard-deviation vectors all live in R^p.
using Vec = Eigen::VectorXd;

// Dense row-major N-d tensor of doubles. The library uses NCHW layout for
// image batches. Deliberately minimal: shape + flat storage + views; the
// heavy math happens through Eigen maps over `data`.
struct Tensor {
    std::vector<long> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<long> s) : shape(std::move(s)), data(static_cast<size_t>(count(shape)), 0.0) {}
    Tensor(std::vector<long> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<long>(data.size()) != count(shape))
            throw std::invalid_argument("tensor: data size does not match shape");
    }

    static long count(const std::vector<long>& s) {
        long n = 1;
        for (long d : s) n *= d;
        return n;
    }

    long numel() const { return static_cast<long>(data.size()); }
    long dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    // NCHW accessors.
    double& at(long n, long c, long h, long w) {
        return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    double at(long n, long c, long h, long w) const {
        return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    Tensor zeros_like() const { return Tensor(shape); }

    // Flat views.
    Eigen::Map<Eigen::VectorXd> vec() { return {data.data(), static_cast<Eigen::Index>(data.size())}; }
    Eigen::Map<const Eigen::VectorXd> vec() const { return {data.data(), static_cast<Eigen::Index>(data.size())}; }

    // One sample of a batch as a flat vector (NCHW, sample-major).
    Eigen::Map<const Eigen::VectorXd> sample(long n) const {
        const long per = numel() / shape[0];
        return {data.data() + n * per, static_cast<Eigen::Index>(per)};
    }
    Eigen::Map<Eigen::VectorXd> sample(long n) {
        const long per = numel() / shape[0];
        return {data.data() + n * per, static_cast<Eigen::Index>(per)};
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
        return s + ")";
    }
};

// Stacks per-sample flat vectors into a batch tensor with the given sample shape.
inline Tensor stack_samples(const std::vector<Vec>& rows, std::vector<long> sample_shape) {
    std::vector<long> shape;
    shape.push_back(static_cast<long>(rows.size()));
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    Tensor out(shape);
    const long per = Tensor::count(sample_shape);
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != per) throw std::invalid_argument("stack_samples: row length mismatch");
        out.sample(static_cast<long>(i)) = rows[i];
    }
    return out;
}

}  // namespace vtcfed
