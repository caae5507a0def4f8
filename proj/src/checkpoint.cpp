#include "parkcast/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace parkcast {

namespace {

constexpr std::uint32_t kMagic = 0x504B4331; // "PKC1"
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) {
    const std::uint64_t bits = get_u64(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

} // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const NamedTensor& nt : tensors) {
        if (nt.name == name) return &nt.tensor;
    }
    return nullptr;
}

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const nlohmann::json& meta) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    put_u32(os, kMagic);
    put_u32(os, kVersion);
    const std::string meta_str = meta.dump();
    put_u64(os, meta_str.size());
    os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    put_u64(os, tensors.size());
    for (const NamedTensor& nt : tensors) {
        put_u32(os, static_cast<std::uint32_t>(nt.name.size()));
        os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
        const Shape& shape = nt.tensor.shape();
        put_u32(os, static_cast<std::uint32_t>(shape.size()));
        for (std::size_t d : shape) put_u64(os, d);
        for (double v : nt.tensor.data()) put_f64(os, v);
    }
    if (!os) throw DataError("checkpoint write failed: " + path);
    os.close();

    nlohmann::json manifest;
    manifest["format"] = "parkcast-checkpoint";
    manifest["version"] = kVersion;
    manifest["meta"] = meta;
    nlohmann::json params = nlohmann::json::array();
    for (const NamedTensor& nt : tensors) {
        params.push_back({{"name", nt.name}, {"shape", nt.tensor.shape()},
                          {"count", nt.tensor.size()}});
    }
    manifest["params"] = params;
    std::ofstream ms(path + ".manifest.json");
    if (!ms) throw DataError("cannot open manifest for writing: " + path + ".manifest.json");
    ms << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    if (get_u32(is) != kMagic) throw DataError("not a checkpoint file: " + path);
    const std::uint32_t version = get_u32(is);
    if (version != kVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    const std::uint64_t meta_len = get_u64(is);
    std::string meta_str(meta_len, '\0');
    is.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
    ckpt.meta = nlohmann::json::parse(meta_str);
    const std::uint64_t n_tensors = get_u64(is);
    ckpt.tensors.reserve(n_tensors);
    for (std::uint64_t t = 0; t < n_tensors; ++t) {
        const std::uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const std::uint32_t ndim = get_u32(is);
        Shape shape(ndim);
        for (std::uint32_t d = 0; d < ndim; ++d) shape[d] = get_u64(is);
        std::vector<double> values(numel(shape));
        for (double& v : values) v = get_f64(is);
        if (!is) throw DataError("truncated checkpoint: " + path);
        ckpt.tensors.push_back({std::move(name), Tensor::from_data(std::move(shape), std::move(values))});
    }
    return ckpt;
}

} // namespace parkcast
