#pragma once

#include <cstdint>
#include <string>

namespace bunit {

// Self-contained SHA-256, used for content-addressed stage caching and the
// run manifest. Verified against the FIPS 180-2 test vectors in the unit
// tests.
class Sha256 {
public:
    Sha256();
    void update(const void* data, size_t len);
    void update(const std::string& s) { update(s.data(), s.size()); }
    // Finalizes and returns the lowercase hex digest. The object must not be
    // reused afterwards.
    std::string hex_digest();

private:
    void process_block(const uint8_t* block);

    uint32_t h_[8];
    uint8_t buffer_[64];
    size_t buffer_len_ = 0;
    uint64_t total_len_ = 0;
};

std::string sha256_hex(const std::string& data);
std::string sha256_file(const std::string& path);

} // namespace bunit
