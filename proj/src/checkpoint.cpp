#include "geosteer/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace geosteer {

namespace {

constexpr char kMagic[] = "GEOSTEER1";
constexpr std::size_t kMagicLen = 9;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof bits);
    put_u64(out, bits);
}

class Reader {
public:
    Reader(const std::string& buf, const std::filesystem::path& path)
        : buf_(buf), path_(path) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64() {
        std::uint64_t bits = u64();
        double d;
        std::memcpy(&d, &bits, sizeof d);
        return d;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool at_end() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) {
        if (pos_ + n > buf_.size())
            throw std::runtime_error("checkpoint: truncated file " + path_.string());
    }

    const std::string& buf_;
    std::filesystem::path path_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
    std::string out;
    out.append(kMagic, kMagicLen);
    put_u32(out, static_cast<std::uint32_t>(arrays.size()));
    for (const NamedArray& a : arrays) {
        put_u32(out, static_cast<std::uint32_t>(a.name.size()));
        out.append(a.name);
        put_u32(out, static_cast<std::uint32_t>(a.tensor.shape.size()));
        for (std::size_t e : a.tensor.shape) put_u64(out, e);
    }
    for (const NamedArray& a : arrays)
        for (double v : a.tensor.data) put_f64(out, v);

    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("checkpoint: cannot open " + tmp.string());
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw std::runtime_error("checkpoint: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r(buf, path);
    if (r.bytes(kMagicLen) != std::string(kMagic, kMagicLen))
        throw std::runtime_error("checkpoint: bad magic in " + path.string());

    std::uint32_t count = r.u32();
    std::vector<NamedArray> arrays;
    arrays.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedArray a;
        a.name = r.bytes(r.u32());
        std::uint32_t rank = r.u32();
        std::vector<std::size_t> shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<std::size_t>(r.u64());
        a.tensor = Tensor(shape);
        arrays.push_back(std::move(a));
    }
    for (NamedArray& a : arrays)
        for (double& v : a.tensor.data) v = r.f64();
    if (!r.at_end())
        throw std::runtime_error("checkpoint: trailing bytes in " + path.string());
    return arrays;
}

const Tensor& find_array(const std::vector<NamedArray>& arrays, const std::string& name) {
    for (const NamedArray& a : arrays)
        if (a.name == name) return a.tensor;
    throw std::runtime_error("checkpoint: missing array '" + name + "'");
}

bool has_array(const std::vector<NamedArray>& arrays, const std::string& name) {
    for (const NamedArray& a : arrays)
        if (a.name == name) return true;
    return false;
}

}  // namespace geosteer
