#include "guide/hash.hpp"

#include <cstdio>
#include <stdexcept>

namespace guide {

uint64_t fnv1a(const void* data, size_t n) {
    Fnv1a h;
    h.update(data, n);
    return h.digest();
}

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

uint64_t parse_hash_hex(const std::string& s) {
    if (s.size() != 16) throw std::runtime_error("bad checksum string: " + s);
    return std::stoull(s, nullptr, 16);
}

}  // namespace guide
