#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "hsi/data.hpp"
#include "hsi/errors.hpp"
#include "hsi/io.hpp"
#include "hsi/npy.hpp"
#include "oracles.hpp"

using namespace hsi;
using namespace hsi::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "hsi_test_data";
    fs::create_directories(dir);
    return dir / name;
}

HsiScene small_scene(std::size_t rows, std::size_t cols, std::size_t bands, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    HsiScene s;
    s.cube = oracle::random_tensor(Shape{rows, cols, bands}, rng, 0.0, 50.0);
    s.labels = LabelImage(rows, cols);
    s.classes = 3;
    for (std::size_t i = 0; i < s.labels.data.size(); ++i) s.labels.data[i] = static_cast<std::uint16_t>(i % 4);
    return s;
}

void write_raw(const fs::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
}

}  // namespace

TEST_CASE("npy: header layout and round trip") {
    const auto a = npy::from_doubles({2, 3}, {1, 2, 3, 4, 5, 6});
    const auto bytes = npy::serialize(a);
    CHECK(bytes[0] == 0x93);
    CHECK(std::string(bytes.begin() + 1, bytes.begin() + 6) == "NUMPY");
    const std::size_t header_len = bytes[8] | (bytes[9] << 8);
    CHECK((10 + header_len) % 64 == 0);
    const std::string header(bytes.begin() + 10, bytes.begin() + 10 + static_cast<long>(header_len));
    CHECK(header.find("'shape': (2, 3)") != std::string::npos);
    CHECK(header.back() == '\n');
    const auto back = npy::parse(bytes, "mem");
    CHECK(back.descr == "<f8");
    CHECK(back.shape == std::vector<std::size_t>{2, 3});
    CHECK(npy::as_doubles(back, "mem") == std::vector<double>{1, 2, 3, 4, 5, 6});

    const auto one = npy::serialize(npy::from_u16({3}, {7, 8, 9}));
    const std::string h1(one.begin() + 10, one.end() - 6);
    CHECK(h1.find("'shape': (3,)") != std::string::npos);
}

TEST_CASE("npy: rejects malformed input") {
    auto bytes = npy::serialize(npy::from_doubles({2}, {1, 2}));
    auto fortran = bytes;
    const std::string key = "False";
    auto it = std::search(fortran.begin(), fortran.end(), key.begin(), key.end());
    std::copy_n(std::string("True ").begin(), 5, it);
    CHECK_THROWS_WITH_AS((void)npy::parse(fortran, "f.npy"), doctest::Contains("fortran"), DataError);

    auto big = bytes;
    const std::string d = "'<f8'";
    it = std::search(big.begin(), big.end(), d.begin(), d.end());
    *(it + 1) = '>';
    CHECK_THROWS_AS((void)npy::parse(big, "b.npy"), DataError);

    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS((void)npy::parse(truncated, "t.npy"), DataError);
    CHECK_THROWS_AS((void)npy::parse({1, 2, 3}, "x.npy"), DataError);
    CHECK_THROWS_WITH_AS((void)npy::read(scratch("does_not_exist.npy")), doctest::Contains("does_not_exist.npy"), DataError);
}

TEST_CASE("npy: float32 cubes widen exactly") {
    const auto a = npy::from_floats({2}, {0.5, -1.25});
    CHECK(a.descr == "<f4");
    CHECK(npy::as_doubles(npy::parse(npy::serialize(a), "m"), "m") == std::vector<double>{0.5, -1.25});
}

TEST_CASE("scene: save/load round trip is bitwise") {
    auto s = small_scene(8, 8, 4, 1);
    save_scene(s, scratch("cube.npy"), scratch("labels.npy"));
    const auto back = load_scene(scratch("cube.npy"), scratch("labels.npy"), 3);
    CHECK(back.cube == s.cube);
    CHECK(back.labels == s.labels);
    CHECK(back.classes == 3);
    CHECK(back.labeled_count() == 48);
    CHECK(load_scene(scratch("cube.npy"), scratch("labels.npy")).classes == 3);
}

TEST_CASE("scene: validation errors") {
    auto s = small_scene(4, 4, 2, 2);
    save_scene(s, scratch("c2.npy"), scratch("l2.npy"));
    CHECK_THROWS_WITH_AS((void)load_scene(scratch("c2.npy"), scratch("l2.npy"), 2), doctest::Contains("exceeds"),
                         DataError);
    CHECK_THROWS_WITH_AS((void)load_scene(scratch("c2.npy"), scratch("l2.npy"), 4), doctest::Contains("class 4"),
                         DataError);
    write_raw(scratch("l3.npy"), npy::serialize(npy::from_u16({4, 3}, std::vector<std::uint16_t>(12, 1))));
    CHECK_THROWS_AS((void)load_scene(scratch("c2.npy"), scratch("l3.npy")), DataError);
    write_raw(scratch("l4.npy"), npy::serialize(npy::from_doubles({4, 4}, std::vector<double>(16, 1.0))));
    CHECK_THROWS_AS((void)load_scene(scratch("c2.npy"), scratch("l4.npy")), DataError);
    CHECK_THROWS_WITH_AS((void)load_scene(scratch("missing_cube.npy"), scratch("l2.npy")),
                         doctest::Contains("missing_cube.npy"), DataError);
}

TEST_CASE("normalize: min-max arithmetic, range and idempotence") {
    HsiScene s;
    s.cube = DenseTensor(Shape{1, 3, 1}, {10.0, 15.0, 20.0});
    s.labels = LabelImage(1, 3, 1);
    s.classes = 1;
    CHECK(normalize(s, Normalization::MinMax).cube[1] == 0.5);

    const auto r = small_scene(6, 7, 5, 3);
    const auto once = normalize(r, Normalization::MinMax);
    for (std::size_t b = 0; b < 5; ++b) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t p = 0; p < 42; ++p) {
            lo = std::min(lo, once.cube[p * 5 + b]);
            hi = std::max(hi, once.cube[p * 5 + b]);
        }
        CHECK(lo == 0.0);
        CHECK(hi == 1.0);
    }
    CHECK(normalize(once, Normalization::MinMax).cube == once.cube);
}

TEST_CASE("normalize: standardization and constant bands") {
    const auto r = small_scene(5, 5, 3, 4);
    const auto z = normalize(r, Normalization::Standardize);
    for (std::size_t b = 0; b < 3; ++b) {
        double m = 0.0, v = 0.0;
        for (std::size_t p = 0; p < 25; ++p) m += z.cube[p * 3 + b];
        for (std::size_t p = 0; p < 25; ++p) v += z.cube[p * 3 + b] * z.cube[p * 3 + b];
        CHECK(std::abs(m / 25) < 1e-12);
        CHECK(v / 25 == doctest::Approx(1.0).epsilon(1e-12));
    }
    auto flat = r;
    for (std::size_t p = 0; p < 25; ++p) flat.cube[p * 3 + 2] = 7.0;
    CHECK_THROWS_WITH_AS((void)normalize(flat, Normalization::Standardize), doctest::Contains("band 2"), DataError);
    CHECK(parse_normalization("minmax") == Normalization::MinMax);
    CHECK_THROWS_AS((void)parse_normalization("zscore"), ConfigError);
}

TEST_CASE("extract_patch: center, P=1 and mirror reflection") {
    // 4x4 ramp, one band, value = 10*row + col
    DenseTensor cube(Shape{4, 4, 1});
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) cube.at({r, c, 0}) = 10.0 * r + c;
    const auto p = extract_patch(cube, 0, 0, 3);
    // rows -1,0,1 -> 1,0,1 and cols -1,0,1 -> 1,0,1
    const std::vector<double> expect{11, 10, 11, 1, 0, 1, 11, 10, 11};
    CHECK(p.values() == expect);
    const auto q = extract_patch(cube, 3, 3, 3);
    CHECK(q.values() == std::vector<double>{22, 23, 22, 32, 33, 32, 22, 23, 22});

    std::mt19937_64 rng(5);
    const auto big = oracle::random_tensor(Shape{7, 6, 3}, rng);
    for (std::size_t r = 0; r < 7; ++r)
        for (std::size_t c = 0; c < 6; ++c) {
            const auto one = extract_patch(big, r, c, 1);
            CHECK(one.shape() == Shape{1, 1, 3});
            const auto nine = extract_patch(big, r, c, 9);
            for (std::size_t b = 0; b < 3; ++b) {
                CHECK(one[b] == big.at({r, c, b}));
                CHECK(nine.at({4, 4, b}) == big.at({r, c, b}));
            }
        }
    CHECK_THROWS_AS((void)extract_patch(big, 0, 0, 4), std::invalid_argument);
    CHECK_THROWS_AS((void)extract_patch(big, 7, 0, 3), std::out_of_range);
    CHECK(reflect(-1, 4) == 1);
    CHECK(reflect(4, 4) == 2);
    CHECK(reflect(-7, 4) == 1);
    CHECK(reflect(5, 1) == 0);
}

TEST_CASE("extract_patch: translation consistency away from borders") {
    std::mt19937_64 rng(6);
    const auto cube = oracle::random_tensor(Shape{12, 12, 2}, rng);
    // embed the scene at an offset inside a larger one
    DenseTensor wide(Shape{16, 17, 2});
    for (std::size_t r = 0; r < 12; ++r)
        for (std::size_t c = 0; c < 12; ++c)
            for (std::size_t b = 0; b < 2; ++b) wide.at({r + 3, c + 4, b}) = cube.at({r, c, b});
    for (std::size_t r = 2; r < 10; ++r)
        for (std::size_t c = 2; c < 10; ++c) CHECK(extract_patch(wide, r + 3, c + 4, 5) == extract_patch(cube, r, c, 5));
}

TEST_CASE("make_split: sizes, disjointness, coverage, determinism") {
    auto s = make_synthetic_scene({20, 15, 4, 3, 0.01, 7});
    s.labels.at(0, 0) = 0;  // one unlabeled pixel
    for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
        const auto sp = make_split(s, 10, seed);
        CHECK(sp.train.size() == 30);
        CHECK(sp.test.size() == s.labeled_count() - 30);
        std::set<Pixel> tr(sp.train.begin(), sp.train.end()), te(sp.test.begin(), sp.test.end());
        CHECK(tr.size() == 30);
        for (const auto& p : tr) CHECK(te.count(p) == 0);
        CHECK(tr.size() + te.size() == s.labeled_count());
        CHECK(te.count(Pixel{0, 0}) == 0);
        std::vector<std::size_t> per(4, 0);
        for (const auto& p : sp.train) ++per[s.labels.at(p.row, p.col)];
        CHECK(per == std::vector<std::size_t>{0, 10, 10, 10});
        const auto again = make_split(s, 10, seed);
        CHECK(again.train == sp.train);
        CHECK(again.test == sp.test);
    }
    CHECK(make_split(s, 10, 1).train != make_split(s, 10, 2).train);
}

TEST_CASE("make_split: whole class and too-small class") {
    HsiScene s;
    s.cube = DenseTensor(Shape{2, 3, 1});
    s.labels = LabelImage(2, 3);
    s.labels.data = {1, 1, 2, 2, 2, 0};
    s.classes = 2;
    const auto sp = make_split(s, 2, 3);
    std::size_t test_class1 = 0;
    for (const auto& p : sp.test) test_class1 += s.labels.at(p.row, p.col) == 1;
    CHECK(test_class1 == 0);
    CHECK(sp.test.size() == 1);
    CHECK_THROWS_WITH_AS((void)make_split(s, 3, 0), doctest::Contains("class 1"), DataError);
}

TEST_CASE("uniform_below stays in range and covers it") {
    std::mt19937_64 rng(11);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) ++hits[uniform_below(rng, 7)];
    for (int h : hits) CHECK(h > 800);
}

TEST_CASE("synthetic scene: layout and class spectra") {
    const auto s = make_synthetic_scene({32, 32, 16, 3, 0.0, 1});
    s.validate();
    CHECK(s.labels.at(0, 0) == 1);
    CHECK(s.labels.at(31, 31) == 3);
    CHECK(s.cube.at({0, 0, 5}) == s.cube.at({31, 0, 5}));
    CHECK(s.cube.at({0, 0, 5}) != s.cube.at({0, 31, 5}));
    const auto a = make_synthetic_scene({8, 8, 4, 2, 0.01, 9});
    const auto b = make_synthetic_scene({8, 8, 4, 2, 0.01, 9});
    CHECK(a.cube == b.cube);
}

TEST_CASE("atomic writes leave no temporaries behind") {
    const auto p = scratch("atomic.txt");
    io::write_atomic(p, std::string_view("first"));
    io::write_atomic(p, std::string_view("second"));
    CHECK(io::read_text(p) == "second");
    for (const auto& e : fs::directory_iterator(p.parent_path()))
        CHECK(e.path().filename().string().find(".tmp.") == std::string::npos);
}
