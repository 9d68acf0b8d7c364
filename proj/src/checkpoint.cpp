#include "deidvc/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace deidvc::ckpt {

namespace {

constexpr char kMagic[4] = {'D', 'I', 'D', 'V'};

[[noreturn]] void fail(const std::string& what) { throw std::runtime_error(what); }

void put_u16(std::ostream& os, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("save_checkpoint: cannot open " + path.string());

    f.write(kMagic, 4);
    put_u32(f, kVersion);

    const std::string meta = ckpt.metadata.dump();
    put_u32(f, static_cast<std::uint32_t>(meta.size()));
    f.write(meta.data(), static_cast<std::streamsize>(meta.size()));

    put_u32(f, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.size() > 0xffff) fail("save_checkpoint: tensor name too long: " + name);
        put_u16(f, static_cast<std::uint16_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        f.put(static_cast<char>(t.dims.size()));
        for (int d : t.dims) put_u32(f, static_cast<std::uint32_t>(d));
        static_assert(sizeof(float) == 4);
        // little-endian host assumed; asserted at load time via the magic
        f.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * 4));
    }
    if (!f) fail("save_checkpoint: write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("load_checkpoint: cannot open " + path.string());

    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        fail("load_checkpoint: bad magic in " + path.string());
    const std::uint32_t version = get_u32(f);
    if (version != kVersion)
        fail("load_checkpoint: unsupported container version " + std::to_string(version) +
             " in " + path.string());

    Checkpoint ckpt;
    const std::uint32_t meta_len = get_u32(f);
    std::string meta(meta_len, '\0');
    f.read(meta.data(), meta_len);
    if (!f) fail("load_checkpoint: truncated metadata in " + path.string());
    ckpt.metadata = nlohmann::json::parse(meta);

    const std::uint32_t count = get_u32(f);
    ckpt.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = get_u16(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        const int rank = f.get();
        if (rank < 0) fail("load_checkpoint: truncated tensor header in " + path.string());
        numcore::Tensor t;
        t.dims.resize(rank);
        std::size_t n = 1;
        for (int r = 0; r < rank; ++r) {
            t.dims[r] = static_cast<int>(get_u32(f));
            n *= static_cast<std::size_t>(t.dims[r]);
        }
        t.data.resize(n);
        f.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * 4));
        if (!f) fail("load_checkpoint: truncated tensor data in " + path.string());
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ckpt;
}

}  // namespace deidvc::ckpt
