#include "hsi/npy.hpp"

#include <bit>
#include <cstring>
#include <iterator>
#include <numeric>
#include <regex>

#include "hsi/errors.hpp"
#include "hsi/io.hpp"

static_assert(std::endian::native == std::endian::little, "NPY I/O assumes a little-endian host");

namespace hsi::npy {

namespace {

constexpr unsigned char kMagic[] = {0x93, 'N', 'U', 'M', 'P', 'Y'};

std::size_t descr_size(const std::string& d) {
    if (d.size() < 3) return 0;
    return static_cast<std::size_t>(std::stoul(d.substr(2)));
}

template <typename T>
std::vector<double> widen(const Array& a) {
    std::vector<double> out(a.count());
    for (std::size_t i = 0; i < out.size(); ++i) {
        T v;
        std::memcpy(&v, a.bytes.data() + i * sizeof(T), sizeof(T));
        out[i] = static_cast<double>(v);
    }
    return out;
}

template <typename T, typename Src>
Array pack(std::string descr, std::vector<std::size_t> shape, const std::vector<Src>& values) {
    Array a{std::move(descr), std::move(shape), {}};
    a.bytes.resize(values.size() * sizeof(T));
    for (std::size_t i = 0; i < values.size(); ++i) {
        const T v = static_cast<T>(values[i]);
        std::memcpy(a.bytes.data() + i * sizeof(T), &v, sizeof(T));
    }
    return a;
}

}  // namespace

std::size_t Array::count() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t Array::item_size() const { return descr_size(descr); }

Array parse(const std::vector<unsigned char>& file, const std::string& origin) {
    auto fail = [&](const std::string& why) { return DataError(origin + ": " + why); };
    if (file.size() < 10 || !std::equal(std::begin(kMagic), std::end(kMagic), file.begin()))
        throw fail("not an NPY file (bad magic)");
    const unsigned major = file[6];
    std::size_t header_len = 0, start = 0;
    if (major == 1) {
        header_len = file[8] | (static_cast<std::size_t>(file[9]) << 8);
        start = 10;
    } else if (major == 2 && file.size() >= 12) {
        header_len = file[8] | (static_cast<std::size_t>(file[9]) << 8) | (static_cast<std::size_t>(file[10]) << 16) |
                     (static_cast<std::size_t>(file[11]) << 24);
        start = 12;
    } else {
        throw fail("unsupported NPY version " + std::to_string(major));
    }
    if (file.size() < start + header_len) throw fail("truncated header");
    const std::string header(file.begin() + static_cast<long>(start),
                             file.begin() + static_cast<long>(start + header_len));

    std::smatch m;
    Array a;
    if (!std::regex_search(header, m, std::regex(R"('descr'\s*:\s*'([^']*)')"))) throw fail("header lacks 'descr'");
    a.descr = m[1];
    if (!std::regex_search(header, m, std::regex(R"('fortran_order'\s*:\s*(True|False))")))
        throw fail("header lacks 'fortran_order'");
    if (m[1] == "True") throw fail("fortran-ordered arrays are not supported");
    if (!std::regex_search(header, m, std::regex(R"('shape'\s*:\s*\(([^)]*)\))"))) throw fail("header lacks 'shape'");
    const std::string dims = m[1];
    static const std::regex digits(R"(\d+)");
    for (std::sregex_iterator it(dims.begin(), dims.end(), digits), end; it != end; ++it)
        a.shape.push_back(static_cast<std::size_t>(std::stoull(it->str())));

    static const std::regex known(R"([<|](f4|f8|u1|u2|u4|i4|i8))");
    if (!std::regex_match(a.descr, known)) throw fail("unsupported dtype '" + a.descr + "'");
    if (a.descr[0] == '|' && a.item_size() != 1) throw fail("unsupported dtype '" + a.descr + "'");
    const std::size_t payload = a.count() * a.item_size();
    if (file.size() - start - header_len != payload)
        throw fail("payload is " + std::to_string(file.size() - start - header_len) + " bytes, header implies " +
                   std::to_string(payload));
    a.bytes.assign(file.begin() + static_cast<long>(start + header_len), file.end());
    return a;
}

Array read(const std::filesystem::path& path) { return parse(io::read_bytes(path), path.string()); }

std::vector<unsigned char> serialize(const Array& a) {
    std::string shape;
    for (std::size_t i = 0; i < a.shape.size(); ++i) shape += (i ? ", " : "") + std::to_string(a.shape[i]);
    if (a.shape.size() == 1) shape += ',';  // Python 1-tuple
    std::string header = "{'descr': '" + a.descr + "', 'fortran_order': False, 'shape': (" + shape + "), }";
    const std::size_t unpadded = 10 + header.size() + 1;
    header.append((64 - unpadded % 64) % 64, ' ');
    header += '\n';
    std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
    out.push_back(1);
    out.push_back(0);
    out.push_back(static_cast<unsigned char>(header.size() & 0xff));
    out.push_back(static_cast<unsigned char>(header.size() >> 8));
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), a.bytes.begin(), a.bytes.end());
    return out;
}

std::vector<double> as_doubles(const Array& a, const std::string& origin) {
    const std::string t = a.descr.substr(1);
    if (t == "f4") return widen<float>(a);
    if (t == "f8") return widen<double>(a);
    if (t == "u1") return widen<std::uint8_t>(a);
    if (t == "u2") return widen<std::uint16_t>(a);
    if (t == "u4") return widen<std::uint32_t>(a);
    if (t == "i4") return widen<std::int32_t>(a);
    if (t == "i8") return widen<std::int64_t>(a);
    throw DataError(origin + ": unsupported dtype '" + a.descr + "'");
}

Array from_doubles(std::vector<std::size_t> shape, const std::vector<double>& values) {
    return pack<double>("<f8", std::move(shape), values);
}

Array from_floats(std::vector<std::size_t> shape, const std::vector<double>& values) {
    return pack<float>("<f4", std::move(shape), values);
}

Array from_u16(std::vector<std::size_t> shape, const std::vector<std::uint16_t>& values) {
    return pack<std::uint16_t>("<u2", std::move(shape), values);
}

}  // namespace hsi::npy
