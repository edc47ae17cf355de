#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridshield {

// Thrown by ops whose input shapes are invalid; message names the op and the
// offending dimensions.
struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& what) : std::runtime_error(what) {}
};

// Dense n-dimensional float32 array, row-major, with an optional gradient
// slot of the same length.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;
    std::optional<std::vector<float>> grad;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0f) {}
    Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != data.size())
            throw shape_error("Tensor: shape product " + std::to_string(numel_of(shape)) +
                              " != data length " + std::to_string(data.size()));
    }

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw shape_error("Tensor: non-positive dim " + std::to_string(d));
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t numel() const { return data.size(); }
    int dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }

    std::vector<float>& ensure_grad() {
        if (!grad) grad.emplace(data.size(), 0.0f);
        return *grad;
    }
    void zero_grad() {
        if (grad) std::fill(grad->begin(), grad->end(), 0.0f);
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

std::string shape_str(const std::vector<int>& s);

// Deterministic stream-splitting for seeds: every generator in the project is
// keyed by a chain of (seed, id, id, ...) values through this mix.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(seed, a), b);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// He-style normal init used for all layer weights.
void fill_normal(Tensor& t, float stddev, std::uint64_t seed);

}  // namespace gridshield
