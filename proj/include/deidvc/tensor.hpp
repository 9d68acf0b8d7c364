#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace deidvc::numcore {

// Thrown when two composed operations disagree on shape. The message names
// both offending operations so graph bugs are locatable without a debugger.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major float32 tensor. Plain value type; autodiff lives in Tape.
struct Tensor {
    std::vector<int> dims;
    std::vector<float> data;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(std::vector<int> d, std::vector<float> values, bool rg = false)
        : dims(std::move(d)), data(std::move(values)), requires_grad(rg) {
        if (static_cast<std::int64_t>(data.size()) != size_of(dims)) {
            throw ShapeError("Tensor: data length " + std::to_string(data.size()) +
                             " does not match dims " + dims_to_string(dims));
        }
    }

    static std::int64_t size_of(const std::vector<int>& d) {
        std::int64_t n = 1;
        for (int x : d) {
            if (x <= 0) throw ShapeError("Tensor: non-positive dimension in " + dims_to_string(d));
            n *= x;
        }
        return n;
    }

    static std::string dims_to_string(const std::vector<int>& d) {
        std::string s = "{";
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(d[i]);
        }
        return s + "}";
    }

    static Tensor zeros(std::vector<int> d, bool rg = false) {
        auto n = size_of(d);
        return Tensor(std::move(d), std::vector<float>(static_cast<std::size_t>(n), 0.0f), rg);
    }

    static Tensor full(std::vector<int> d, float v, bool rg = false) {
        auto n = size_of(d);
        return Tensor(std::move(d), std::vector<float>(static_cast<std::size_t>(n), v), rg);
    }

    static Tensor scalar(float v, bool rg = false) { return Tensor({1}, {v}, rg); }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    int rows() const { return dims.size() == 2 ? dims[0] : (dims.size() == 1 ? 1 : -1); }
    int cols() const { return dims.size() == 2 ? dims[1] : (dims.size() == 1 ? dims[0] : -1); }

    bool same_dims(const Tensor& o) const { return dims == o.dims; }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

}  // namespace deidvc::numcore
