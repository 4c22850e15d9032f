#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "fedadapt/errors.hpp"

namespace fedadapt {

// Dense row-major float32 array with an explicit shape. The engine keeps all
// activations, parameters and gradients in this one type.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> values;

    Tensor() = default;
    Tensor(std::vector<int> shape_in, float fill = 0.0f)
        : shape(std::move(shape_in)),
          values(checked_numel(shape), fill) {}
    Tensor(std::vector<int> shape_in, std::vector<float> values_in)
        : shape(std::move(shape_in)), values(std::move(values_in)) {
        if (values.size() != checked_numel(shape)) {
            throw InternalError("tensor value count does not match shape");
        }
    }

    std::size_t numel() const { return values.size(); }
    bool empty() const { return values.empty(); }

    int dim(std::size_t i) const { return shape.at(i); }

    // Indexing helpers for the common 2-D (H, W) and 3-D (C, H, W) layouts.
    float& at2(int r, int c) { return values[static_cast<std::size_t>(r) * shape[1] + c]; }
    float at2(int r, int c) const { return values[static_cast<std::size_t>(r) * shape[1] + c]; }
    float& at3(int ch, int r, int c) {
        return values[(static_cast<std::size_t>(ch) * shape[1] + r) * shape[2] + c];
    }
    float at3(int ch, int r, int c) const {
        return values[(static_cast<std::size_t>(ch) * shape[1] + r) * shape[2] + c];
    }

    static std::size_t checked_numel(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw InternalError("tensor dimensions must be positive");
            n *= static_cast<std::size_t>(d);
        }
        return shape.empty() ? 0 : n;
    }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

inline std::string shape_to_string(const std::vector<int>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    s += ")";
    return s;
}

}  // namespace fedadapt
