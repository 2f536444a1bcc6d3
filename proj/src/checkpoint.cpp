#include "fedlws/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace fedlws {

namespace {

constexpr std::array<char, 8> kMagic{'F', 'L', 'W', 'S', 'C', 'K', 'P', '1'};
// Guards against allocating absurd sizes when reading a corrupt file.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

void put_u64(std::ostream& out, std::uint64_t v) {
    std::array<char, 8> bytes{};
    for (std::size_t i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    out.write(bytes.data(), bytes.size());
}

std::uint64_t get_u64(std::istream& in) {
    std::array<unsigned char, 8> bytes{};
    if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
        throw FormatError("checkpoint: unexpected end of file");
    }
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < 8; ++i) v |= std::uint64_t{bytes[i]} << (8 * i);
    return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ModelParams& params) {
    out.write(kMagic.data(), kMagic.size());
    put_u64(out, params.layers.size());
    for (const auto& group : params.layers) {
        put_u64(out, group.name.size());
        out.write(group.name.data(), static_cast<std::streamsize>(group.name.size()));
        put_u64(out, group.tensors.size());
        for (const auto& t : group.tensors) {
            put_u64(out, t.rank());
            for (auto d : t.shape()) put_u64(out, d);
            for (Eigen::Index i = 0; i < t.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(t[i]));
        }
    }
    if (!out) throw FormatError("checkpoint: write failed");
}

ModelParams read_checkpoint(std::istream& in) {
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
        throw FormatError("checkpoint: bad magic");
    }
    ModelParams params;
    const std::uint64_t groups = get_u64(in);
    if (groups > kMaxElements) throw FormatError("checkpoint: implausible group count");
    for (std::uint64_t g = 0; g < groups; ++g) {
        LayerGroup group;
        const std::uint64_t name_len = get_u64(in);
        if (name_len > (1u << 20)) throw FormatError("checkpoint: implausible name length");
        group.name.resize(name_len);
        if (!in.read(group.name.data(), static_cast<std::streamsize>(name_len))) {
            throw FormatError("checkpoint: truncated layer name");
        }
        const std::uint64_t count = get_u64(in);
        if (count > 64) throw FormatError("checkpoint: implausible tensor count");
        for (std::uint64_t k = 0; k < count; ++k) {
            const std::uint64_t rank = get_u64(in);
            if (rank > 8) throw FormatError("checkpoint: implausible tensor rank");
            Shape shape(rank);
            std::uint64_t elements = 1;
            for (auto& d : shape) {
                d = get_u64(in);
                elements *= d;
                if (elements > kMaxElements) throw FormatError("checkpoint: implausible tensor size");
            }
            Tensor t(shape);
            for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = std::bit_cast<double>(get_u64(in));
            group.tensors.push_back(std::move(t));
        }
        params.layers.push_back(std::move(group));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
    return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("checkpoint: cannot open " + path.string() + " for writing");
    write_checkpoint(out, params);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint: cannot open " + path.string());
    return read_checkpoint(in);
}

}  // namespace fedlws
