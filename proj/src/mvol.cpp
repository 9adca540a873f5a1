#include "mseg/mvol.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "MVOL writer assumes a little-endian host");

namespace mseg {

namespace {

constexpr char kMagic[4] = {'M', 'V', 'O', 'L'};
constexpr std::size_t kHeaderSize = 4 + 2 + 2 + 4 * 4;
constexpr std::uint64_t kMaxElements = std::uint64_t(1) << 40;

struct Header {
    std::uint16_t dtype;
    std::uint32_t channels, x, y, z;
};

std::uint64_t element_count(const Header& h) {
    const std::uint64_t n = static_cast<std::uint64_t>(h.channels) * h.x * h.y * h.z;
    if (h.channels == 0 || h.x == 0 || h.y == 0 || h.z == 0 || n > kMaxElements)
        throw MvolExtentOverflow("mvol: implausible extents " + std::to_string(h.channels) + "x" +
                                 std::to_string(h.x) + "x" + std::to_string(h.y) + "x" +
                                 std::to_string(h.z));
    return n;
}

void write_file(const Header& h, const void* payload, std::size_t payload_bytes,
                const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("mvol: cannot open for writing: " + tmp);
        f.write(kMagic, 4);
        const std::uint16_t version = kMvolVersion;
        f.write(reinterpret_cast<const char*>(&version), 2);
        f.write(reinterpret_cast<const char*>(&h.dtype), 2);
        f.write(reinterpret_cast<const char*>(&h.channels), 4);
        f.write(reinterpret_cast<const char*>(&h.x), 4);
        f.write(reinterpret_cast<const char*>(&h.y), 4);
        f.write(reinterpret_cast<const char*>(&h.z), 4);
        f.write(static_cast<const char*>(payload), static_cast<std::streamsize>(payload_bytes));
        if (!f) throw std::runtime_error("mvol: write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Header read_header(std::ifstream& f, const std::string& path) {
    char magic[4];
    std::uint16_t version = 0;
    Header h{};
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&version), 2);
    f.read(reinterpret_cast<char*>(&h.dtype), 2);
    f.read(reinterpret_cast<char*>(&h.channels), 4);
    f.read(reinterpret_cast<char*>(&h.x), 4);
    f.read(reinterpret_cast<char*>(&h.y), 4);
    f.read(reinterpret_cast<char*>(&h.z), 4);
    if (!f) throw MvolTruncated("mvol: truncated header: " + path);
    if (std::memcmp(magic, kMagic, 4) != 0) throw MvolBadMagic("mvol: bad magic: " + path);
    if (version != kMvolVersion)
        throw std::runtime_error("mvol: unsupported version " + std::to_string(version));
    return h;
}

void read_payload(std::ifstream& f, void* dst, std::size_t bytes, const std::string& path) {
    f.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    if (static_cast<std::size_t>(f.gcount()) != bytes)
        throw MvolTruncated("mvol: truncated payload: " + path);
    // No trailing bytes allowed either.
    char extra;
    if (f.read(&extra, 1); f.gcount() != 0)
        throw std::runtime_error("mvol: trailing bytes after payload: " + path);
}

}  // namespace

void write_mvol(const Tensor& tensor, const std::string& path) {
    if (tensor.rank() != 4)
        throw std::invalid_argument("mvol: f32 tensor must be [C,Z,Y,X], got " +
                                    shape_str(tensor.shape));
    Header h{kMvolF32, static_cast<std::uint32_t>(tensor.shape[0]),
             static_cast<std::uint32_t>(tensor.shape[3]),
             static_cast<std::uint32_t>(tensor.shape[2]),
             static_cast<std::uint32_t>(tensor.shape[1])};
    element_count(h);
    write_file(h, tensor.data.data(), tensor.numel() * 4, path);
}

void write_mvol(const LabelVolume& labels, const std::string& path) {
    if (labels.shape.size() != 3)
        throw std::invalid_argument("mvol: label volume must be [Z,Y,X], got " +
                                    shape_str(labels.shape));
    Header h{kMvolU8, 1, static_cast<std::uint32_t>(labels.shape[2]),
             static_cast<std::uint32_t>(labels.shape[1]),
             static_cast<std::uint32_t>(labels.shape[0])};
    element_count(h);
    write_file(h, labels.data.data(), labels.numel(), path);
}

Tensor read_mvol_f32(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("mvol: cannot open: " + path);
    Header h = read_header(f, path);
    if (h.dtype != kMvolF32)
        throw std::runtime_error("mvol: expected f32 payload in " + path);
    const std::uint64_t n = element_count(h);
    Tensor t({h.channels, h.z, h.y, h.x});
    read_payload(f, t.data.data(), n * 4, path);
    return t;
}

LabelVolume read_mvol_u8(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("mvol: cannot open: " + path);
    Header h = read_header(f, path);
    if (h.dtype != kMvolU8)
        throw std::runtime_error("mvol: expected u8 payload in " + path);
    if (h.channels != 1)
        throw std::runtime_error("mvol: label volume must have one channel: " + path);
    const std::uint64_t n = element_count(h);
    LabelVolume v({h.z, h.y, h.x});
    read_payload(f, v.data.data(), n, path);
    return v;
}

std::uint16_t mvol_dtype(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("mvol: cannot open: " + path);
    return read_header(f, path).dtype;
}

}  // namespace mseg
