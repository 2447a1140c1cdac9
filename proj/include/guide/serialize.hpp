#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "guide/layers.hpp"
#include "guide/tensor.hpp"

namespace guide {

// Little-endian binary framing shared by every artifact this project writes.
// Tensor frame: u32 rank, rank x u32 dims, then f64 payload.
void write_u8(std::ostream& out, uint8_t v);
void write_u32(std::ostream& out, uint32_t v);
void write_u64(std::ostream& out, uint64_t v);
void write_f64(std::ostream& out, double v);
void write_string(std::ostream& out, const std::string& s);
void write_tag(std::ostream& out, const char (&tag)[9]);
void write_tensor(std::ostream& out, const Tensor& t);

uint8_t read_u8(std::istream& in);
uint32_t read_u32(std::istream& in);
uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);
std::string read_string(std::istream& in);
void expect_tag(std::istream& in, const char (&tag)[9]);
Tensor read_tensor(std::istream& in);

// Model file: magic "GUIDENN1", input shape, class count, frozen flag, layer
// count, then per layer a kind tag (1 byte), hyper u32s and the parameter
// tensors. Unknown magic or kind tags are rejected.
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace guide
