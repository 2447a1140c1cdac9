#include "guide/idx.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <vector>

namespace guide {

namespace {

std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

std::vector<unsigned char> gunzip(const std::vector<unsigned char>& in) {
    z_stream zs;
    std::memset(&zs, 0, sizeof(zs));
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw DataError("zlib init failed");
    std::vector<unsigned char> out;
    out.reserve(in.size() * 4);
    unsigned char buf[1 << 16];
    zs.next_in = const_cast<unsigned char*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    int ret = Z_OK;
    do {
        zs.next_out = buf;
        zs.avail_out = sizeof(buf);
        ret = inflate(&zs, Z_NO_FLUSH);
        if (ret != Z_OK && ret != Z_STREAM_END) {
            inflateEnd(&zs);
            throw DataError("gzip payload is corrupt");
        }
        out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
    } while (ret != Z_STREAM_END);
    inflateEnd(&zs);
    return out;
}

std::vector<unsigned char> read_maybe_gzip(const std::string& path) {
    auto bytes = read_file_bytes(path);
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return gunzip(bytes);
    return bytes;
}

uint32_t be32(const unsigned char* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path, const std::string& name) {
    const auto img = read_maybe_gzip(images_path);
    const auto lab = read_maybe_gzip(labels_path);
    if (img.size() < 16) throw DataError("IDX image file too short: " + images_path);
    if (lab.size() < 8) throw DataError("IDX label file too short: " + labels_path);
    if (be32(img.data()) != 0x00000803u) throw DataError("bad IDX image magic in " + images_path);
    if (be32(lab.data()) != 0x00000801u) throw DataError("bad IDX label magic in " + labels_path);

    const size_t n_img = be32(img.data() + 4);
    const size_t h = be32(img.data() + 8);
    const size_t w = be32(img.data() + 12);
    const size_t n_lab = be32(lab.data() + 4);
    if (n_img != n_lab) {
        throw DataError("IDX image/label counts disagree: " + std::to_string(n_img) + " vs " + std::to_string(n_lab));
    }
    if (img.size() != 16 + n_img * h * w) throw DataError("IDX image payload truncated: " + images_path);
    if (lab.size() != 8 + n_lab) throw DataError("IDX label payload truncated: " + labels_path);

    Dataset ds;
    ds.name = name;
    ds.images = Tensor({n_img, h, w, size_t{1}});
    const unsigned char* px = img.data() + 16;
    for (size_t i = 0; i < n_img * h * w; ++i) ds.images[i] = static_cast<double>(px[i]) / 255.0;
    ds.labels.reserve(n_lab);
    const unsigned char* ly = lab.data() + 8;
    for (size_t i = 0; i < n_lab; ++i) ds.labels.push_back(static_cast<int>(ly[i]));
    ds.validate();
    return ds;
}

}  // namespace guide
