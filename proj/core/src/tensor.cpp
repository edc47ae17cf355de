#include "gridshield/tensor.hpp"

#include <sstream>

namespace gridshield {

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void fill_normal(Tensor& t, float stddev, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::normal_distribution<float> dist(0.0f, stddev);
    for (float& v : t.data) v = dist(rng);
}

}  // namespace gridshield
