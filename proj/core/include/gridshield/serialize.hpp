#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace gridshield {

// GSW1 weight container. Layout: magic "GSW1", then one record per tensor
// until EOF: u32 name length, name bytes, u8 dtype tag (0 = f32, 1 = q8),
// u32 rank, u32 dims[rank], payload. All integers and floats little-endian.
// q8 payload = f32 scale followed by one int8 per element (symmetric
// quantization, zero point 0). The serialized byte count is the model-size
// metric used throughout.

struct WeightRecord {
    std::string name;
    std::vector<int> dims;
    bool quantized = false;
    std::vector<float> f32;        // used when !quantized
    std::vector<std::int8_t> q8;   // used when quantized
    float scale = 1.0f;

    std::size_t numel() const {
        std::size_t n = 1;
        for (int d : dims) n *= static_cast<std::size_t>(d);
        return n;
    }
};

std::string serialize_gsw(const std::vector<WeightRecord>& records);
std::vector<WeightRecord> deserialize_gsw(const std::string& bytes);

void write_gsw_file(const std::string& path, const std::vector<WeightRecord>& records);
std::vector<WeightRecord> read_gsw_file(const std::string& path);

}  // namespace gridshield
