#include <doctest.h>

#include <fstream>

#include "cmems/datamodel.hpp"
#include "cmems/npy.hpp"
#include "helpers.hpp"

using namespace cmems;
namespace fs = std::filesystem;

namespace {

// Byte streams produced by numpy.save.
const std::vector<unsigned char> kF8 = {147,78,85,77,80,89,1,0,118,0,123,39,100,101,115,99,114,39,58,32,39,60,102,56,39,44,32,39,102,111,114,116,114,97,110,95,111,114,100,101,114,39,58,32,70,97,108,115,101,44,32,39,115,104,97,112,101,39,58,32,40,50,44,32,51,41,44,32,125,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,10,0,0,0,0,0,0,224,63,0,0,0,0,0,0,244,191,0,0,0,0,0,0,8,64,252,169,241,210,77,98,80,63,0,0,0,0,0,0,0,64,0,0,0,0,0,0,30,64};
const std::vector<unsigned char> kU1 = {147,78,85,77,80,89,1,0,118,0,123,39,100,101,115,99,114,39,58,32,39,124,117,49,39,44,32,39,102,111,114,116,114,97,110,95,111,114,100,101,114,39,58,32,70,97,108,115,101,44,32,39,115,104,97,112,101,39,58,32,40,50,44,32,50,41,44,32,125,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,10,0,1,2,3};
const std::vector<unsigned char> kI8 = {147,78,85,77,80,89,1,0,118,0,123,39,100,101,115,99,114,39,58,32,39,60,105,56,39,44,32,39,102,111,114,116,114,97,110,95,111,114,100,101,114,39,58,32,70,97,108,115,101,44,32,39,115,104,97,112,101,39,58,32,40,51,44,41,44,32,125,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,10,1,0,0,0,0,0,0,0,254,255,255,255,255,255,255,255,3,0,0,0,0,0,0,0};
const std::vector<unsigned char> kFortran = {147,78,85,77,80,89,1,0,118,0,123,39,100,101,115,99,114,39,58,32,39,60,102,52,39,44,32,39,102,111,114,116,114,97,110,95,111,114,100,101,114,39,58,32,84,114,117,101,44,32,39,115,104,97,112,101,39,58,32,40,50,44,32,50,41,44,32,125,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,32,10,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0};

fs::path write_bytes(const fs::path& dir, const std::string& name, const std::vector<unsigned char>& b) {
    const fs::path p = dir / name;
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    return p;
}

std::vector<float> ramp(int n) {
    std::vector<float> v(n);
    for (int i = 0; i < n; ++i) v[i] = static_cast<float>(i) / n;
    return v;
}

}  // namespace

TEST_CASE("Image validates size and values") {
    CHECK_NOTHROW(Image(16, 32, 0.5f));
    CHECK_THROWS_AS(Image(8, 16, 0.5f), ValidationError);
    CHECK_THROWS_AS(Image(24, 16, 0.5f), ValidationError);
    CHECK_THROWS_AS(Image(16, 16, std::vector<float>(10)), ValidationError);
    std::vector<float> px(256, 0.f);
    px[3] = std::nanf("");
    CHECK_THROWS_AS(Image(16, 16, px), ValidationError);
}

TEST_CASE("LabelMask validates class range and counts classes") {
    CHECK_THROWS_AS(LabelMask(2, 2, 3, {0, 1, 3, 0}), ValidationError);
    CHECK_THROWS_AS(LabelMask(2, 2, 3, {0, -1, 2, 0}), ValidationError);
    const LabelMask m(2, 2, 3, {0, 1, 2, 2});
    CHECK(m.count(2) == 2);
    CHECK(m.count(0) == 1);
}

TEST_CASE("exemplar must contain every foreground class") {
    const Image img(16, 16, 0.f);
    std::vector<std::int32_t> c(256, 0);
    c[0] = 1;
    CHECK_THROWS_AS(validate_exemplar(img, LabelMask(16, 16, 3, c)), ValidationError);
    c[1] = 2;
    CHECK_NOTHROW(validate_exemplar(img, LabelMask(16, 16, 3, c)));
}

TEST_CASE("npy reader decodes numpy-written files") {
    const auto dir = testutil::temp_dir("npy_oracle");
    auto a = npy::read(write_bytes(dir, "f8.npy", kF8));
    CHECK(a.shape == std::vector<std::size_t>{2, 3});
    CHECK(a.values == std::vector<double>{0.5, -1.25, 3.0, 0.001, 2.0, 7.5});
    a = npy::read(write_bytes(dir, "u1.npy", kU1));
    CHECK(a.values == std::vector<double>{0, 1, 2, 3});
    a = npy::read(write_bytes(dir, "i8.npy", kI8));
    CHECK(a.values == std::vector<double>{1, -2, 3});
    CHECK_THROWS_AS(npy::read(write_bytes(dir, "f.npy", kFortran)), IngestionError);
    CHECK_THROWS_AS(npy::read(dir / "missing.npy"), IngestionError);
    CHECK_THROWS_AS(npy::read(write_bytes(dir, "junk.npy", {1, 2, 3, 4})), IngestionError);
}

TEST_CASE("npy writer round-trips and pads the header to 64 bytes") {
    const auto dir = testutil::temp_dir("npy_rt");
    const std::vector<float> v{0.25f, -3.5f, 1e-7f, 42.f, 0.f, 1.f};
    npy::write(dir / "a.npy", v, {2, 3});
    const auto a = npy::read(dir / "a.npy");
    CHECK(a.dtype == "<f4");
    CHECK(a.shape == std::vector<std::size_t>{2, 3});
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(a.values[i] == double(v[i]));
    std::ifstream f(dir / "a.npy", std::ios::binary);
    std::vector<unsigned char> head(10);
    f.read(reinterpret_cast<char*>(head.data()), 10);
    const std::size_t hlen = head[8] | (head[9] << 8);
    CHECK((10 + hlen) % 64 == 0);
    const std::vector<std::int32_t> iv{3, 1, 4, 1};
    npy::write(dir / "b.npy", iv, {4});
    CHECK(npy::read(dir / "b.npy").values == std::vector<double>{3, 1, 4, 1});
}

TEST_CASE("min-max normalization") {
    const auto v = minmax_normalize({2.0, 4.0, 3.0});
    CHECK(v == std::vector<float>{0.f, 1.f, 0.5f});
    CHECK(minmax_normalize({5.0, 5.0}) == std::vector<float>{0.f, 0.f});
}

TEST_CASE("resizing: identity at equal size, constants preserved, nearest labels stay in range") {
    const auto src = ramp(16 * 16);
    CHECK(resize_bilinear(src, 16, 16, 16, 16) == src);
    const std::vector<float> c(64, 0.3f);
    for (float x : resize_bilinear(c, 8, 8, 32, 48)) CHECK(x == doctest::Approx(0.3f));
    std::vector<std::int32_t> lab(16);
    for (int i = 0; i < 16; ++i) lab[i] = i % 3;
    const auto up = resize_nearest(lab, 4, 4, 8, 8);
    CHECK(up.size() == 64);
    CHECK(up[0] == lab[0]);
    CHECK(up[63] == lab[15]);
    // 2x nearest upsampling replicates each pixel into a 2x2 block
    CHECK(up[1] == lab[0]);
    CHECK(up[8] == lab[0]);
    CHECK(up[2] == lab[1]);
}

TEST_CASE("one-hot and to_tensor layouts") {
    const LabelMask m(16, 16, 3, std::vector<std::int32_t>(256, 2));
    const Tensor t = one_hot(m);
    CHECK(t.shape() == Shape4{1, 3, 16, 16});
    CHECK(t.at(0, 2, 5, 5) == 1);
    CHECK(t.at(0, 0, 5, 5) == 0);
    const Tensor x = to_tensor({Image(16, 16, 0.25f), Image(16, 16, 0.75f)});
    CHECK(x.shape() == Shape4{2, 1, 16, 16});
    CHECK(x.at(1, 0, 3, 3) == 0.75f);
    CHECK_THROWS_AS(to_tensor({Image(16, 16, 0.f), Image(32, 16, 0.f)}), ShapeError);
}

TEST_CASE("manifest loading resolves paths, resizes and validates") {
    const auto dir = testutil::temp_dir("manifest");
    std::vector<float> img(20 * 20);
    for (int i = 0; i < 400; ++i) img[i] = static_cast<float>(i % 20);
    std::vector<std::int32_t> lab(400, 0);
    for (int i = 0; i < 40; ++i) lab[i] = 1;
    for (int i = 360; i < 400; ++i) lab[i] = 2;
    npy::write(dir / "ex.npy", img, {20, 20});
    npy::write(dir / "ex_lab.npy", lab, {20, 20});
    npy::write(dir / "u0.npy", img, {20, 20});
    DatasetManifest m;
    m.exemplar = "ex.npy";
    m.exemplar_label = "ex_lab.npy";
    m.unlabeled = {"u0.npy"};
    m.num_classes = 3;
    m.test_volumes = {{"v0", {"u0.npy", "u0.npy"}, {"ex_lab.npy", "ex_lab.npy"}}};
    m.height = 32;
    m.width = 32;
    write_manifest(dir / "manifest.json", m);

    const DatasetManifest back = read_manifest(dir / "manifest.json");
    CHECK(back.exemplar == "ex.npy");
    CHECK(back.test_volumes.size() == 1);

    const LoadedData d = load_dataset(dir / "manifest.json");
    CHECK(d.exemplar.image.height() == 32);
    CHECK(d.exemplar.mask.num_classes() == 3);
    CHECK(d.test_volumes[0].slices.size() == 2);
    CHECK(d.class_names.size() == 3);
    float lo = 1, hi = 0;
    for (float v : d.exemplar.image.pixels()) lo = std::min(lo, v), hi = std::max(hi, v);
    CHECK(lo == 0.f);
    CHECK(hi == 1.f);

    LoadOptions o;
    o.height = 48;
    o.width = 16;
    CHECK(load_dataset(dir / "manifest.json", o).exemplar.image.width() == 16);

    // Mismatched image/label shapes are rejected before resizing.
    npy::write(dir / "small_lab.npy", std::vector<std::int32_t>(100, 0), {10, 10});
    m.exemplar_label = "small_lab.npy";
    write_manifest(dir / "bad.json", m);
    CHECK_THROWS_AS(load_dataset(dir / "bad.json"), ValidationError);
    CHECK_THROWS_AS(load_dataset(dir / "nope.json"), IngestionError);
}

TEST_CASE("dense targets mark every pixel valid") {
    const LabelMask a(16, 16, 2), b(16, 16, 2, std::vector<std::int32_t>(256, 1));
    const PseudoLabel t = dense_target({a, b});
    CHECK(t.n == 2);
    CHECK(t.valid_count() == 512);
    CHECK(t.classes[256] == 1);
}
