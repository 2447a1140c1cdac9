#include "guide/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "guide/dataset.hpp"

namespace guide {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

void write_u8(std::ostream& out, uint8_t v) { out.write(reinterpret_cast<const char*>(&v), 1); }
void write_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
void write_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), 8); }

void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_tag(std::ostream& out, const char (&tag)[9]) { out.write(tag, 8); }

void write_tensor(std::ostream& out, const Tensor& t) {
    write_u32(out, static_cast<uint32_t>(t.rank()));
    for (size_t d : t.shape()) write_u32(out, static_cast<uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

uint8_t read_u8(std::istream& in) {
    uint8_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 1);
    if (!in) throw DataError("truncated stream (u8)");
    return v;
}

uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw DataError("truncated stream (u32)");
    return v;
}

uint64_t read_u64(std::istream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw DataError("truncated stream (u64)");
    return v;
}

double read_f64(std::istream& in) {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw DataError("truncated stream (f64)");
    return v;
}

std::string read_string(std::istream& in) {
    const uint32_t n = read_u32(in);
    if (n > (1u << 20)) throw DataError("unreasonable string length in stream");
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw DataError("truncated stream (string)");
    return s;
}

void expect_tag(std::istream& in, const char (&tag)[9]) {
    char got[8];
    in.read(got, 8);
    if (!in || std::memcmp(got, tag, 8) != 0) {
        throw DataError(std::string("bad magic, expected ") + tag);
    }
}

Tensor read_tensor(std::istream& in) {
    const uint32_t rank = read_u32(in);
    if (rank > 8) throw DataError("unreasonable tensor rank in stream");
    std::vector<size_t> shape(rank);
    for (auto& d : shape) d = read_u32(in);
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw DataError("truncated tensor payload");
    return t;
}

void save_model(const Model& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    write_tag(out, "GUIDENN1");
    write_u32(out, static_cast<uint32_t>(model.input_shape.size()));
    for (size_t d : model.input_shape) write_u32(out, static_cast<uint32_t>(d));
    write_u32(out, static_cast<uint32_t>(model.num_classes));
    write_u8(out, model.frozen ? 1 : 0);
    write_u32(out, static_cast<uint32_t>(model.layers.size()));
    for (const Layer& l : model.layers) {
        write_u8(out, static_cast<uint8_t>(l.kind));
        write_u32(out, static_cast<uint32_t>(l.kernel));
        write_u32(out, static_cast<uint32_t>(l.stride));
        write_u32(out, static_cast<uint32_t>(l.pad));
        const uint32_t n_params = layer_kind_has_params(l.kind) ? 2 : 0;
        write_u32(out, n_params);
        if (n_params) {
            write_tensor(out, l.weight);
            write_tensor(out, l.bias);
        }
    }
    write_u64(out, model.param_checksum());
    if (!out) throw DataError("write failed: " + path);
}

Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    expect_tag(in, "GUIDENN1");
    Model m;
    const uint32_t in_rank = read_u32(in);
    if (in_rank > 4) throw DataError("model file: unreasonable input rank");
    m.input_shape.resize(in_rank);
    for (auto& d : m.input_shape) d = read_u32(in);
    m.num_classes = read_u32(in);
    const bool frozen = read_u8(in) != 0;
    const uint32_t n_layers = read_u32(in);
    if (n_layers == 0 || n_layers > 1024) throw DataError("model file: unreasonable layer count");
    m.layers.resize(n_layers);
    for (auto& l : m.layers) {
        const uint8_t kind = read_u8(in);
        if (kind > static_cast<uint8_t>(LayerKind::Softmax)) {
            throw DataError("model file: unknown layer kind tag " + std::to_string(kind));
        }
        l.kind = static_cast<LayerKind>(kind);
        l.kernel = read_u32(in);
        l.stride = read_u32(in);
        l.pad = read_u32(in);
        const uint32_t n_params = read_u32(in);
        if (n_params != (layer_kind_has_params(l.kind) ? 2u : 0u)) {
            throw DataError("model file: parameter count mismatch for " + std::string(layer_kind_name(l.kind)));
        }
        if (n_params) {
            l.weight = read_tensor(in);
            l.bias = read_tensor(in);
        }
    }
    const uint64_t recorded = read_u64(in);
    m.finalize();
    m.frozen = frozen;
    if (m.param_checksum() != recorded) throw DataError("model file: parameter checksum mismatch");
    return m;
}

}  // namespace guide
