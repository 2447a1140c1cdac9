#pragma once

#include <cstdint>
#include <cstddef>
#include <string>

namespace guide {

// FNV-1a, used for config hashes and artifact checksums. Not cryptographic;
// it only has to detect accidental mismatches between pipeline stages.
class Fnv1a {
public:
    void update(const void* data, size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001b3ULL;
        }
    }
    void update(const std::string& s) { update(s.data(), s.size()); }
    uint64_t digest() const { return hash_; }

private:
    uint64_t hash_ = 0xcbf29ce484222325ULL;
};

uint64_t fnv1a(const void* data, size_t n);
std::string hash_hex(uint64_t h);
uint64_t parse_hash_hex(const std::string& s);

}  // namespace guide
