#include "satdet/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace satdet::nn {
namespace {

constexpr char kMagic[8] = {'S', 'A', 'T', 'D', 'E', 'T', 'N', 'N'};

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    template <typename U>
    void le(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
    void bytes(void* p, std::size_t n) {
        need(n);
        std::memcpy(p, in_.data() + pos_, n);
        pos_ += n;
    }
    template <typename U>
    U le() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
        pos_ += sizeof(U);
        return v;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) throw DataError("parameter container is truncated");
    }
    const std::vector<std::uint8_t>& in_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> encode_container(const std::vector<StoredTensor>& tensors) {
    Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.le<std::uint32_t>(kContainerVersion);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        std::size_t n = 1;
        for (auto d : t.shape) n *= d;
        w.le<std::uint8_t>(static_cast<std::uint8_t>(t.payload.index()));
        w.le<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
        w.bytes(t.name.data(), t.name.size());
        w.le<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
        std::visit(
            [&](const auto& data) {
                if (data.size() != n) {
                    throw ShapeError("tensor '" + t.name + "' payload does not match shape " + shape_string(t.shape));
                }
                using V = typename std::decay_t<decltype(data)>::value_type;
                for (V v : data) {
                    if constexpr (std::is_same_v<V, double>) {
                        w.le<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
                    } else {
                        w.le<std::make_unsigned_t<V>>(static_cast<std::make_unsigned_t<V>>(v));
                    }
                }
            },
            t.payload);
    }
    return w.take();
}

std::vector<StoredTensor> decode_container(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    char magic[8];
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw DataError("not a parameter container (bad magic)");
    }
    const auto version = r.le<std::uint32_t>();
    if (version != kContainerVersion) {
        throw DataError("unsupported parameter container version " + std::to_string(version));
    }
    const auto count = r.le<std::uint32_t>();
    std::vector<StoredTensor> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        StoredTensor t;
        const auto dtype = r.le<std::uint8_t>();
        const auto name_len = r.le<std::uint32_t>();
        t.name.resize(name_len);
        r.bytes(t.name.data(), name_len);
        const auto rank = r.le<std::uint32_t>();
        std::size_t n = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            t.shape.push_back(r.le<std::uint32_t>());
            n *= t.shape.back();
        }
        switch (dtype) {
        case 0: {
            std::vector<double> d(n);
            for (auto& v : d) v = std::bit_cast<double>(r.le<std::uint64_t>());
            t.payload = std::move(d);
            break;
        }
        case 1: {
            std::vector<std::int8_t> d(n);
            for (auto& v : d) v = static_cast<std::int8_t>(r.le<std::uint8_t>());
            t.payload = std::move(d);
            break;
        }
        case 2: {
            std::vector<std::int32_t> d(n);
            for (auto& v : d) v = static_cast<std::int32_t>(r.le<std::uint32_t>());
            t.payload = std::move(d);
            break;
        }
        default:
            throw DataError("tensor '" + t.name + "' has unknown dtype " + std::to_string(dtype));
        }
        out.push_back(std::move(t));
    }
    if (!r.done()) {
        throw DataError("parameter container has trailing bytes");
    }
    return out;
}

void write_container(const std::filesystem::path& path, const std::vector<StoredTensor>& tensors) {
    const auto bytes = encode_container(tensors);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

std::vector<StoredTensor> read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_container(bytes);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

} // namespace satdet::nn
