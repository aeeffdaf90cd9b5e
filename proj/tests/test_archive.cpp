#include <cstring>
#include <random>

#include "doctest.h"
#include "hsi/archive.hpp"
#include "hsi/errors.hpp"
#include "oracles.hpp"

using namespace hsi::archive;
using hsi::DenseTensor;
using hsi::Shape;

TEST_CASE("FNV-1a 64 reference vectors") {
    CHECK(fnv1a64_hex("") == "cbf29ce484222325");
    CHECK(fnv1a64_hex("a") == "af63dc4c8601ec8c");
    CHECK(fnv1a64_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("archive layout and round trip") {
    std::mt19937_64 rng(1);
    Archive a;
    a.meta = {{"kind", "test"}, {"n", 3}};
    a.put("x", oracle::random_tensor(Shape{2, 3}, rng));
    a.put("scalar", DenseTensor(Shape{1}, 7.25));
    hsi::Matrix m(2, 2);
    m << 1, 2, 3, 4;
    a.put("m", m);
    const auto bytes = serialize(a);

    REQUIRE(bytes.size() > 16);
    CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "HSIARCH1");
    std::uint64_t len = 0;
    for (int b = 0; b < 8; ++b) len |= static_cast<std::uint64_t>(bytes[8 + b]) << (8 * b);
    CHECK(bytes.size() == 16 + len + (6 + 1 + 4) * 8);
    const auto manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(len));
    CHECK(manifest["arrays"][1]["offset"] == 6);
    CHECK(manifest["arrays"][2]["shape"] == nlohmann::json::array({2, 2}));
    // Payload is little-endian f64 in manifest order.
    double first = 0.0;
    std::memcpy(&first, bytes.data() + 16 + len, 8);
    CHECK(first == a.get("x")[0]);

    const Archive b = parse(bytes, "mem");
    CHECK(b.meta == a.meta);
    CHECK(b.get("x") == a.get("x"));
    CHECK(b.get("scalar")[0] == 7.25);
    CHECK(b.get_matrix("m") == m);
    CHECK(serialize(b) == bytes);
    CHECK_THROWS_AS((void)b.get("nope"), hsi::DataError);
    CHECK_THROWS_AS((void)b.get_matrix("x.missing"), hsi::DataError);
    CHECK_THROWS_AS(a.put("x", DenseTensor(Shape{1})), std::invalid_argument);
}

TEST_CASE("malformed archives are data errors") {
    Archive a;
    a.put("x", DenseTensor(Shape{3}, 1.0));
    const auto good = serialize(a);
    auto bad = good;
    bad[0] = 'X';
    CHECK_THROWS_AS((void)parse(bad, "m"), hsi::DataError);
    bad = good;
    bad.pop_back();
    CHECK_THROWS_AS((void)parse(bad, "m"), hsi::DataError);
    bad = good;
    bad.insert(bad.end(), 8, 0);
    CHECK_THROWS_AS((void)parse(bad, "m"), hsi::DataError);
    bad = good;
    bad[16] = '!';
    CHECK_THROWS_AS((void)parse(bad, "m"), hsi::DataError);
    CHECK_THROWS_AS((void)parse({}, "m"), hsi::DataError);
    CHECK_THROWS_WITH_AS((void)read("/nonexistent/a.hsiarch"), doctest::Contains("/nonexistent/a.hsiarch"), hsi::DataError);
}

TEST_CASE("decomposition state round trip") {
    std::mt19937_64 rng(2);
    const Shape shape{3, 4, 5};
    const auto ranks = hsi::RankMatrix::uniform(3, 2);
    auto s = hsi::sdtn::init_state(shape, ranks, hsi::sdtn::clamp_glr_ranks(shape, ranks, 1), 9);
    for (auto& f : s.factors.factors) f = oracle::random_tensor(f.shape(), rng);
    s.iter = 17;
    Archive a;
    put_state(a, "s0", s);
    const Archive b = parse(serialize(a), "mem");
    const auto t = get_state(b, "s0");
    CHECK(t.iter == 17);
    CHECK(t.factors.ranks == s.factors.ranks);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(t.factors.factors[k] == s.factors.factors[k]);
        CHECK(t.glr[k].U == s.glr[k].U);
        CHECK(t.glr[k].V == s.glr[k].V);
        CHECK(t.glr[k].rank == s.glr[k].rank);
        CHECK(t.glr[k].mode == s.glr[k].mode);
    }
    CHECK_THROWS_AS((void)get_state(b, "s1"), hsi::DataError);
}

TEST_CASE("archive files are written whole") {
    const auto dir = std::filesystem::temp_directory_path() / "hsi_archive_test";
    std::filesystem::create_directories(dir);
    Archive a;
    a.put("x", DenseTensor(Shape{2}, 3.0));
    write(dir / "a.hsiarch", a);
    CHECK(read(dir / "a.hsiarch").get("x") == a.get("x"));
    for (const auto& e : std::filesystem::directory_iterator(dir)) CHECK(e.path().filename() == "a.hsiarch");
    std::filesystem::remove_all(dir);
}
