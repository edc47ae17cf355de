#include "gridshield/serialize.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace gridshield {

namespace {

constexpr char kMagic[4] = {'G', 'S', 'W', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

void put_f32(std::string& out, float v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    bool eof() const { return pos >= buf.size(); }
    void need(std::size_t n, const char* what) {
        if (pos + n > buf.size())
            throw std::runtime_error(std::string("GSW1: truncated ") + what);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    float f32(const char* what) {
        need(4, what);
        float v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
};

}  // namespace

std::string serialize_gsw(const std::vector<WeightRecord>& records) {
    std::string out;
    out.append(kMagic, 4);
    for (const WeightRecord& r : records) {
        put_u32(out, static_cast<std::uint32_t>(r.name.size()));
        out.append(r.name);
        out.push_back(r.quantized ? 1 : 0);
        put_u32(out, static_cast<std::uint32_t>(r.dims.size()));
        for (int d : r.dims) put_u32(out, static_cast<std::uint32_t>(d));
        if (r.quantized) {
            if (r.q8.size() != r.numel())
                throw std::runtime_error("GSW1: record " + r.name + " payload/dims mismatch");
            put_f32(out, r.scale);
            out.append(reinterpret_cast<const char*>(r.q8.data()), r.q8.size());
        } else {
            if (r.f32.size() != r.numel())
                throw std::runtime_error("GSW1: record " + r.name + " payload/dims mismatch");
            out.append(reinterpret_cast<const char*>(r.f32.data()), r.f32.size() * 4);
        }
    }
    return out;
}

std::vector<WeightRecord> deserialize_gsw(const std::string& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw std::runtime_error("GSW1: bad magic");
    Reader rd{bytes, 4};
    std::vector<WeightRecord> records;
    while (!rd.eof()) {
        WeightRecord r;
        const std::uint32_t name_len = rd.u32("name length");
        rd.need(name_len, "name");
        r.name.assign(bytes.data() + rd.pos, name_len);
        rd.pos += name_len;
        const std::uint8_t dtype = rd.u8("dtype");
        if (dtype > 1) throw std::runtime_error("GSW1: unknown dtype tag");
        r.quantized = dtype == 1;
        const std::uint32_t rank = rd.u32("rank");
        r.dims.resize(rank);
        for (std::uint32_t i = 0; i < rank; ++i) r.dims[i] = static_cast<int>(rd.u32("dim"));
        const std::size_t n = r.numel();
        if (r.quantized) {
            r.scale = rd.f32("scale");
            rd.need(n, "q8 payload");
            r.q8.resize(n);
            std::memcpy(r.q8.data(), bytes.data() + rd.pos, n);
            rd.pos += n;
        } else {
            rd.need(n * 4, "f32 payload");
            r.f32.resize(n);
            std::memcpy(r.f32.data(), bytes.data() + rd.pos, n * 4);
            rd.pos += n * 4;
        }
        records.push_back(std::move(r));
    }
    return records;
}

void write_gsw_file(const std::string& path, const std::vector<WeightRecord>& records) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("GSW1: cannot open for write: " + path);
    const std::string bytes = serialize_gsw(records);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("GSW1: write failed: " + path);
}

std::vector<WeightRecord> read_gsw_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("GSW1: cannot open for read: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_gsw(bytes);
}

}  // namespace gridshield
