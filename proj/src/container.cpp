#include "dvn/container.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>

#include "dvn/errors.hpp"

namespace dvn {

namespace {

constexpr char kMagic[8] = {'D', 'V', 'N', 'C', 'K', 'P', 'T', '1'};

std::uint64_t fnv1a(const std::string& bytes, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(bytes[i]);
        h *= 0x100000001b3ull;
    }
    return h;
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    std::uint64_t u64() {
        need(8, "u64");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    std::string text(std::uint64_t n) {
        need(n, "string");
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }

    void need(std::uint64_t n, const char* what) const {
        if (n > bytes_.size() - pos_)
            throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
    }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

const Eigen::VectorXd& Container::block(const std::string& name) const {
    for (const auto& [n, v] : blocks)
        if (n == name) return v;
    throw FormatError("checkpoint has no block '" + name + "'", 0);
}

std::string encode_container(const Container& c) {
    std::string out(kMagic, sizeof kMagic);
    const std::string header = c.header.dump();
    put_u64(out, header.size());
    out += header;
    put_u64(out, c.blocks.size());
    for (const auto& [name, values] : c.blocks) {
        put_u64(out, name.size());
        out += name;
        put_u64(out, static_cast<std::uint64_t>(values.size()));
        for (Eigen::Index i = 0; i < values.size(); ++i)
            put_u64(out, std::bit_cast<std::uint64_t>(values[i]));
    }
    put_u64(out, fnv1a(out, out.size()));
    return out;
}

Container decode_container(const std::string& bytes) {
    Reader r(bytes);
    if (r.text(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
        throw FormatError("bad checkpoint magic", 0);
    Container c;
    const std::size_t header_at = r.pos();
    const auto header_len = r.u64();
    try {
        c.header = nlohmann::json::parse(r.text(header_len));
    } catch (const nlohmann::json::parse_error&) {
        throw FormatError("checkpoint header is not valid JSON", header_at);
    }
    const auto count = r.u64();
    for (std::uint64_t b = 0; b < count; ++b) {
        std::string name = r.text(r.u64());
        const auto n = r.u64();
        r.need(n > bytes.size() / 8 ? bytes.size() : n * 8, "parameter block");
        Eigen::VectorXd values(static_cast<Eigen::Index>(n));
        for (std::uint64_t i = 0; i < n; ++i) values[static_cast<Eigen::Index>(i)] =
            std::bit_cast<double>(r.u64());
        c.blocks.emplace_back(std::move(name), std::move(values));
    }
    const std::size_t checksum_at = r.pos();
    const auto stored = r.u64();
    if (stored != fnv1a(bytes, checksum_at)) throw FormatError("checkpoint checksum mismatch", checksum_at);
    if (r.pos() != bytes.size()) throw FormatError("trailing bytes after checkpoint", r.pos());
    return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArgumentError("cannot open " + path.string() + " for writing");
    const std::string bytes = encode_container(c);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ArgumentError("failed writing " + path.string());
}

Container read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArgumentError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_container(bytes);
}

}  // namespace dvn
