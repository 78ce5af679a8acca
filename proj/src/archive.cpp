#include "gcan/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "gcan/error.hpp"

namespace gcan {

namespace {

constexpr char kMagic[8] = {'G', 'C', 'A', 'N', 'A', 'R', 'C', '1'};

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

void put_string(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("archive: truncated file");
    return v;
}

std::string get_string(std::istream& is) {
    const std::uint32_t n = get_u32(is);
    if (n > (1u << 20)) throw IoError("archive: implausible string length");
    std::string s(n, '\0');
    if (!is.read(s.data(), n)) throw IoError("archive: truncated string");
    return s;
}

}  // namespace

const ArchiveArray* Archive::find(const std::string& name) const {
    auto it = std::find_if(arrays.begin(), arrays.end(), [&](const ArchiveArray& a) { return a.name == name; });
    return it == arrays.end() ? nullptr : &*it;
}

const std::string& Archive::meta_value(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw IoError("archive: missing metadata key '" + key + "'");
    return it->second;
}

void save_archive(const Archive& archive, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os.write(kMagic, sizeof kMagic);
    put_u32(os, static_cast<std::uint32_t>(archive.meta.size()));
    for (const auto& [k, v] : archive.meta) {
        put_string(os, k);
        put_string(os, v);
    }
    put_u32(os, static_cast<std::uint32_t>(archive.arrays.size()));
    for (const auto& a : archive.arrays) {
        put_string(os, a.name);
        put_u32(os, static_cast<std::uint32_t>(a.shape.size()));
        for (int d : a.shape) put_u32(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(a.values.data()),
                 static_cast<std::streamsize>(a.values.size() * sizeof(double)));
    }
    if (!os) throw IoError("write to '" + path.string() + "' failed");
}

Archive load_archive(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open archive '" + path.string() + "'");
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw IoError("'" + path.string() + "' is not a checkpoint archive");
    Archive archive;
    const std::uint32_t n_meta = get_u32(is);
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        std::string k = get_string(is);
        archive.meta[k] = get_string(is);
    }
    const std::uint32_t n_arrays = get_u32(is);
    for (std::uint32_t i = 0; i < n_arrays; ++i) {
        ArchiveArray a;
        a.name = get_string(is);
        const std::uint32_t rank = get_u32(is);
        if (rank > 8) throw IoError("archive: implausible rank for '" + a.name + "'");
        for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(static_cast<int>(get_u32(is)));
        a.values.resize(ad::numel(a.shape));
        if (!is.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * sizeof(double))))
            throw IoError("archive: truncated data for '" + a.name + "'");
        archive.arrays.push_back(std::move(a));
    }
    return archive;
}

void append_params(Archive& archive, const nn::ParamList& params, const std::string& prefix) {
    for (const auto& p : params) {
        auto v = p.tensor.values();
        archive.arrays.push_back({nn::join(prefix, p.name), p.tensor.shape(), std::vector<double>(v.begin(), v.end())});
    }
}

void restore_params(const Archive& archive, const nn::ParamList& params, const std::string& prefix) {
    for (const auto& p : params) {
        const std::string name = nn::join(prefix, p.name);
        const ArchiveArray* a = archive.find(name);
        if (!a) throw IoError("archive: missing parameter '" + name + "'");
        if (a->shape != p.tensor.shape())
            throw ShapeError("archive: parameter '" + name + "' has shape " + ad::shape_string(a->shape) +
                             ", model expects " + ad::shape_string(p.tensor.shape()));
        ad::Tensor t = p.tensor;
        std::copy(a->values.begin(), a->values.end(), t.mutable_values().begin());
    }
}

}  // namespace gcan
