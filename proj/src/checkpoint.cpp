#include "deco/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

namespace deco {

namespace {

class Writer {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void raw(const std::string& s) { bytes.insert(bytes.end(), s.begin(), s.end()); }

    std::vector<std::uint8_t> bytes;
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string raw(std::size_t n) {
        need(n);
        std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

void encode_entry(Writer& w, const NamedTensor& e) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.raw(e.name);
    w.u32(static_cast<std::uint32_t>(e.tensor.ndim()));
    for (auto d : e.tensor.shape()) w.u64(d);
    for (double v : e.tensor.to_vector()) w.f64(v);
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e.tensor;
    return nullptr;
}

const Tensor& Checkpoint::get(const std::string& name) const {
    if (const Tensor* t = find(name)) return *t;
    throw DataError("checkpoint has no entry '" + name + "'");
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
    Writer w;
    w.raw(std::string(kCheckpointMagic, 4));
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(checkpoint.metadata.size()));
    w.raw(checkpoint.metadata);
    w.u32(static_cast<std::uint32_t>(checkpoint.entries.size()));
    for (const auto& e : checkpoint.entries) encode_entry(w, e);
    return std::move(w.bytes);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    if (r.raw(4) != std::string(kCheckpointMagic, 4)) throw DataError("not a checkpoint file (bad magic)");
    const auto version = r.u32();
    if (version != kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    ck.metadata = r.raw(r.u32());
    const auto count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor e;
        e.name = r.raw(r.u32());
        const auto ndim = r.u32();
        Shape shape(ndim);
        for (auto& d : shape) d = r.u64();
        std::vector<double> values(numel(shape));
        for (auto& v : values) v = r.f64();
        e.tensor = Tensor::from_vector(shape, values, DType::f64);
        ck.entries.push_back(std::move(e));
    }
    if (!r.done()) throw DataError("trailing bytes after checkpoint entries");
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    const auto bytes = encode_checkpoint(checkpoint);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("checkpoint not found: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_checkpoint(bytes);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string state_checksum(const std::vector<NamedTensor>& entries) {
    Writer w;
    for (const auto& e : entries) encode_entry(w, e);
    return sha256_hex(w.bytes.data(), w.bytes.size());
}

void assign_state(const std::vector<NamedTensor>& destination, const Checkpoint& source) {
    for (const auto& dst : destination) {
        const Tensor* src = source.find(dst.name);
        if (!src) throw DataError("checkpoint is missing '" + dst.name + "'");
        if (src->shape() != dst.tensor.shape())
            throw DataError("checkpoint entry '" + dst.name + "' has shape " + shape_str(src->shape()) +
                            ", model expects " + shape_str(dst.tensor.shape()));
        Tensor target = dst.tensor;
        const auto values = src->to_vector();
        for (std::size_t i = 0; i < values.size(); ++i) target.set(i, values[i]);
    }
}

std::string sha256_hex(const void* data, std::size_t size) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), data, size) != 1 || EVP_DigestFinal_ex(ctx.get(), digest, &length) != 1)
        throw std::runtime_error("sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < length; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 15]);
    }
    return out;
}

std::string sha256_hex(const std::string& text) { return sha256_hex(text.data(), text.size()); }

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return sha256_hex(bytes);
}

}  // namespace deco
