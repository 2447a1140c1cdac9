#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "guide/idx.hpp"
#include "guide/synth.hpp"
#include "guide/train.hpp"
#include "test_helpers.hpp"

using namespace guide;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() / ("guide_test_" + std::to_string(::getpid()) + "_" +
                                                         std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

void write_be32(std::ofstream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

void write_idx_pair(const std::string& img_path, const std::string& lab_path,
                    const std::vector<std::vector<unsigned char>>& images, const std::vector<unsigned char>& labels,
                    uint32_t h, uint32_t w) {
    std::ofstream img(img_path, std::ios::binary);
    write_be32(img, 0x00000803);
    write_be32(img, static_cast<uint32_t>(images.size()));
    write_be32(img, h);
    write_be32(img, w);
    for (const auto& im : images) img.write(reinterpret_cast<const char*>(im.data()), im.size());
    std::ofstream lab(lab_path, std::ios::binary);
    write_be32(lab, 0x00000801);
    write_be32(lab, static_cast<uint32_t>(labels.size()));
    lab.write(reinterpret_cast<const char*>(labels.data()), labels.size());
}

}  // namespace

TEST_CASE("idx loader: zero image, 255 boundary, scaling") {
    TempDir tmp;
    std::vector<std::vector<unsigned char>> images = {std::vector<unsigned char>(28 * 28, 0)};
    images[0][5] = 255;
    write_idx_pair(tmp.file("img"), tmp.file("lab"), images, {7}, 28, 28);
    const Dataset ds = load_idx(tmp.file("img"), tmp.file("lab"));
    CHECK(ds.count() == 1);
    CHECK(ds.images.shape() == std::vector<size_t>{1, 28, 28, 1});
    CHECK(ds.images[0] == 0.0);
    CHECK(ds.images[5] == 1.0);  // byte 255 -> exactly 1.0
    CHECK(ds.labels[0] == 7);
}

TEST_CASE("idx loader rejects bad magic, truncation and count mismatch") {
    TempDir tmp;
    std::vector<std::vector<unsigned char>> images = {std::vector<unsigned char>(4, 0)};
    write_idx_pair(tmp.file("img"), tmp.file("lab"), images, {1}, 2, 2);

    // Bad magic
    {
        std::ofstream bad(tmp.file("badmagic"), std::ios::binary);
        write_be32(bad, 0xdeadbeef);
        for (int i = 0; i < 3; ++i) write_be32(bad, 1);
        bad.put(0);
    }
    CHECK_THROWS_AS(load_idx(tmp.file("badmagic"), tmp.file("lab")), DataError);

    // Count mismatch
    write_idx_pair(tmp.file("img2"), tmp.file("lab2"), images, {1, 2}, 2, 2);
    CHECK_THROWS_AS(load_idx(tmp.file("img2"), tmp.file("lab2")), DataError);

    // Truncated payload
    {
        std::ofstream trunc(tmp.file("trunc"), std::ios::binary);
        write_be32(trunc, 0x00000803);
        write_be32(trunc, 1);
        write_be32(trunc, 2);
        write_be32(trunc, 2);
        trunc.put(0);  // 1 of 4 pixel bytes
    }
    CHECK_THROWS_AS(load_idx(tmp.file("trunc"), tmp.file("lab")), DataError);
}

TEST_CASE("gzip-compressed idx files load identically") {
    TempDir tmp;
    std::vector<std::vector<unsigned char>> images(3, std::vector<unsigned char>(16));
    for (size_t i = 0; i < 3; ++i) {
        for (size_t j = 0; j < 16; ++j) images[i][j] = static_cast<unsigned char>(i * 16 + j);
    }
    write_idx_pair(tmp.file("img"), tmp.file("lab"), images, {0, 1, 2}, 4, 4);
    REQUIRE(std::system(("gzip -k " + tmp.file("img") + " " + tmp.file("lab")).c_str()) == 0);
    const Dataset plain = load_idx(tmp.file("img"), tmp.file("lab"));
    const Dataset zipped = load_idx(tmp.file("img.gz"), tmp.file("lab.gz"));
    CHECK(plain.images.vec() == zipped.images.vec());
    CHECK(plain.labels == zipped.labels);
}

TEST_CASE("stratified split: proportions, disjointness, determinism") {
    BlobSpec spec;
    spec.noise = 0.1;
    Dataset ds = synth_blobs(5, 100, 2, 12, spec);  // 100 per class, balanced

    SplitSpec sp;
    sp.train_count = 160;
    sp.val_count = 20;
    sp.test_count = 20;
    sp.seed = 9;
    const auto parts = split(ds, sp);
    CHECK(parts.train.count() == 160);
    CHECK(parts.val.count() == 20);
    CHECK(parts.test.count() == 20);
    // 50/50 class balance preserved exactly in each split
    for (const Dataset* d : {&parts.train, &parts.val, &parts.test}) {
        size_t c0 = 0;
        for (int y : d->labels) c0 += y == 0 ? 1 : 0;
        CHECK(c0 * 2 == d->count());
    }
    const auto parts2 = split(ds, sp);
    CHECK(parts2.train.images.vec() == parts.train.images.vec());

    // fractions path: 1000 samples, 10 classes, 0.8/0.1/0.1
    Dataset big = synth_blobs(6, 100, 10, 12, spec);
    SplitSpec frac;
    frac.train_frac = 0.8;
    frac.val_frac = 0.1;
    frac.test_frac = 0.1;
    frac.seed = 1;
    const auto fparts = split(big, frac);
    CHECK(fparts.train.count() == 800);
    CHECK(fparts.val.count() == 100);
    CHECK(fparts.test.count() == 100);

    // class smaller than partition demand
    Dataset tiny = synth_blobs(7, 1, 2, 12, spec);
    SplitSpec greedy;
    greedy.train_count = 1;
    greedy.val_count = 1;
    greedy.test_count = 1;
    CHECK_THROWS_AS(split(tiny, greedy), DataError);
}

TEST_CASE("synthetic blobs: determinism, identity at zero noise, separability") {
    BlobSpec spec;  // zero noise, zero jitter by default
    Dataset a = synth_blobs(11, 5, 2, 12, spec);
    Dataset b = synth_blobs(11, 5, 2, 12, spec);
    CHECK(a.images.vec() == b.images.vec());

    // zero noise -> within-class images identical
    const size_t per = a.images.size() / a.count();
    for (size_t i = 2; i < a.count(); i += 2) {
        for (size_t j = 0; j < per; ++j) {
            CHECK(a.images[i * per + j] == a.images[0 * per + j]);
        }
    }

    // far blob centers -> a small trained model separates perfectly
    BlobSpec noisy = spec;
    noisy.noise = 0.03;
    Dataset train = synth_blobs(12, 30, 2, 12, noisy);
    Model net = guide::testing::mini_conv_net(8, 2);
    train_base(net, train, 12, 5e-3, 16, 3);
    CHECK(accuracy(net, train) == doctest::Approx(1.0));
}

TEST_CASE("dataset cache round-trips bit-identically") {
    TempDir tmp;
    BlobSpec spec;
    spec.noise = 0.2;
    Dataset ds = synth_blobs(13, 6, 3, 10, spec);
    dataset_save(ds, tmp.file("cache.bin"));
    const Dataset back = dataset_load(tmp.file("cache.bin"));
    CHECK(back.images.vec() == ds.images.vec());
    CHECK(back.images.shape() == ds.images.shape());
    CHECK(back.labels == ds.labels);
    CHECK(back.name == ds.name);
}
