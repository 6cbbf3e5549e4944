#include "mla/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "mla/errors.hpp"

namespace mla {

namespace {

constexpr char kMagic[4] = {'M', 'L', 'T', '1'};
constexpr uint32_t kMaxRank = 8;

void put_u32(std::ostream& out, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("MLT1: truncated header");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_u64(std::ostream& out, uint64_t v) {
    put_u32(out, static_cast<uint32_t>(v & 0xffffffffu));
    put_u32(out, static_cast<uint32_t>(v >> 32));
}

}  // namespace

void write_mlt1(std::ostream& out, const Tensor& t) {
    out.write(kMagic, 4);
    out.put(static_cast<char>(t.dtype() == Dtype::f32 ? 0 : 1));
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape()) put_u32(out, static_cast<uint32_t>(d));
    if (t.dtype() == Dtype::f32) {
        for (double v : t.data()) put_u32(out, std::bit_cast<uint32_t>(static_cast<float>(v)));
    } else {
        for (double v : t.data()) put_u64(out, std::bit_cast<uint64_t>(v));
    }
    if (!out) throw IoError("MLT1: write failed");
}

Tensor read_mlt1(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("MLT1: bad magic");
    const int dtype_code = in.get();
    if (dtype_code != 0 && dtype_code != 1)
        throw FormatError("MLT1: unknown dtype code " + std::to_string(dtype_code));
    const uint32_t rank = get_u32(in);
    if (rank == 0 || rank > kMaxRank)
        throw FormatError("MLT1: implausible rank " + std::to_string(rank));
    std::vector<int> shape(rank);
    size_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        const uint32_t d = get_u32(in);
        if (d == 0 || d > (1u << 28)) throw FormatError("MLT1: implausible dim " + std::to_string(d));
        shape[i] = static_cast<int>(d);
        n *= d;
    }
    std::vector<double> data(n);
    if (dtype_code == 0) {
        for (size_t i = 0; i < n; ++i) {
            unsigned char b[4];
            if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("MLT1: truncated payload");
            const uint32_t w = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                               (static_cast<uint32_t>(b[2]) << 16) |
                               (static_cast<uint32_t>(b[3]) << 24);
            data[i] = static_cast<double>(std::bit_cast<float>(w));
        }
        return Tensor::from_data(std::move(shape), std::move(data), Dtype::f32);
    }
    for (size_t i = 0; i < n; ++i) {
        unsigned char b[8];
        if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError("MLT1: truncated payload");
        uint64_t w = 0;
        for (int k = 7; k >= 0; --k) w = (w << 8) | b[k];
        data[i] = std::bit_cast<double>(w);
    }
    return Tensor::from_data(std::move(shape), std::move(data), Dtype::f64);
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path);
    write_mlt1(out, t);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for read: " + path);
    return read_mlt1(in);
}

}  // namespace mla
