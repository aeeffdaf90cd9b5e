#include "hsi/archive.hpp"

#include <bit>
#include <cstring>

#include "hsi/errors.hpp"
#include "hsi/io.hpp"

namespace hsi::archive {

namespace {

constexpr char kMagic[8] = {'H', 'S', 'I', 'A', 'R', 'C', 'H', '1'};

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

std::string key(const std::string& prefix, const std::string& what, std::size_t k) {
    return prefix + "/" + what + std::to_string(k);
}

}  // namespace

void Archive::put(std::string name, DenseTensor value) {
    if (contains(name)) throw std::invalid_argument("duplicate archive entry '" + name + "'");
    arrays.push_back({std::move(name), std::move(value)});
}

void Archive::put(std::string name, const Matrix& m) {
    DenseTensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) t[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
    put(std::move(name), std::move(t));
}

const DenseTensor& Archive::get(const std::string& name) const {
    for (const auto& e : arrays)
        if (e.name == name) return e.value;
    throw DataError("archive has no entry '" + name + "'");
}

Matrix Archive::get_matrix(const std::string& name) const {
    const DenseTensor& t = get(name);
    if (t.order() != 2) throw DataError("archive entry '" + name + "' is not a matrix");
    Matrix m(t.dim(0), t.dim(1));
    for (std::size_t i = 0; i < t.dim(0); ++i)
        for (std::size_t j = 0; j < t.dim(1); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t[i * t.dim(1) + j];
    return m;
}

bool Archive::contains(const std::string& name) const {
    for (const auto& e : arrays)
        if (e.name == name) return true;
    return false;
}

std::vector<unsigned char> serialize(const Archive& a) {
    nlohmann::json manifest{{"meta", a.meta}, {"arrays", nlohmann::json::array()}};
    std::size_t offset = 0;
    for (const auto& e : a.arrays) {
        manifest["arrays"].push_back({{"name", e.name}, {"shape", e.value.shape().dims()}, {"offset", offset}});
        offset += e.value.size();
    }
    const std::string text = manifest.dump();
    std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
    const std::uint64_t len = text.size();
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<unsigned char>(len >> (8 * b)));
    out.insert(out.end(), text.begin(), text.end());
    std::size_t pos = out.size();
    out.resize(pos + offset * sizeof(double));
    for (const auto& e : a.arrays) {
        if (e.value.size() != 0) std::memcpy(out.data() + pos, e.value.data().data(), e.value.size() * sizeof(double));
        pos += e.value.size() * sizeof(double);
    }
    return out;
}

Archive parse(const std::vector<unsigned char>& bytes, const std::string& origin) {
    auto fail = [&](const std::string& why) { return DataError(origin + ": " + why); };
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw fail("not an HSIARCH1 archive");
    std::uint64_t len = 0;
    for (int b = 0; b < 8; ++b) len |= static_cast<std::uint64_t>(bytes[8 + b]) << (8 * b);
    if (len > bytes.size() - 16) throw fail("truncated manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(len));
    } catch (const nlohmann::json::exception& e) {
        throw fail(std::string("bad manifest: ") + e.what());
    }
    const std::size_t start = 16 + len;
    const std::size_t payload = (bytes.size() - start) / sizeof(double);
    if ((bytes.size() - start) % sizeof(double) != 0) throw fail("payload is not a whole number of doubles");
    Archive a;
    try {
        a.meta = manifest.at("meta");
        std::size_t expected = 0;
        for (const auto& e : manifest.at("arrays")) {
            const Shape shape(e.at("shape").get<std::vector<std::size_t>>());
            const std::size_t offset = e.at("offset").get<std::size_t>();
            if (offset != expected || offset + shape.count() > payload) throw fail("array '" + e.at("name").get<std::string>() + "' lies outside the payload");
            std::vector<double> v(shape.count());
            if (!v.empty()) std::memcpy(v.data(), bytes.data() + start + offset * sizeof(double), v.size() * sizeof(double));
            a.put(e.at("name").get<std::string>(), DenseTensor(shape, std::move(v)));
            expected = offset + shape.count();
        }
        if (expected != payload) throw fail("payload has trailing data");
    } catch (const nlohmann::json::exception& e) {
        throw fail(std::string("bad manifest: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw fail(e.what());
    }
    return a;
}

void write(const std::filesystem::path& path, const Archive& a) { io::write_atomic(path, serialize(a)); }

Archive read(const std::filesystem::path& path) { return parse(io::read_bytes(path), path.string()); }

void put_state(Archive& a, const std::string& prefix, const sdtn::SdtnState& s) {
    nlohmann::json st{{"order", s.factors.factors.size()},
                      {"ranks", s.factors.ranks.entries()},
                      {"iter", s.iter}};
    nlohmann::json glr = nlohmann::json::array();
    for (const auto& p : s.glr) glr.push_back({{"mode", p.mode}, {"rank", p.rank}});
    st["glr"] = glr;
    a.meta["states"][prefix] = st;
    for (std::size_t k = 0; k < s.factors.factors.size(); ++k) a.put(key(prefix, "G", k), s.factors.factors[k]);
    for (std::size_t k = 0; k < s.glr.size(); ++k) {
        a.put(key(prefix, "U", k), s.glr[k].U);
        a.put(key(prefix, "V", k), s.glr[k].V);
    }
}

sdtn::SdtnState get_state(const Archive& a, const std::string& prefix) {
    sdtn::SdtnState s;
    try {
        const auto& st = a.meta.at("states").at(prefix);
        const std::size_t n = st.at("order").get<std::size_t>();
        s.factors.ranks = RankMatrix::from_entries(n, st.at("ranks").get<std::vector<std::size_t>>());
        s.iter = st.at("iter").get<std::size_t>();
        for (std::size_t k = 0; k < n; ++k) s.factors.factors.push_back(a.get(key(prefix, "G", k)));
        s.factors.validate();
        const auto& glr = st.at("glr");
        for (std::size_t k = 0; k < glr.size(); ++k)
            s.glr.push_back({glr[k].at("mode").get<std::size_t>(), glr[k].at("rank").get<std::size_t>(),
                             a.get_matrix(key(prefix, "U", k)), a.get_matrix(key(prefix, "V", k))});
    } catch (const nlohmann::json::exception& e) {
        throw DataError("archive state '" + prefix + "': " + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError("archive state '" + prefix + "': " + e.what());
    }
    return s;
}

std::string fnv1a64_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    return out;
}

}  // namespace hsi::archive
