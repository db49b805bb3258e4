#include "cotcap/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <stdexcept>

namespace cotcap {

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (!EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr)) {
        throw std::runtime_error("sha256: EVP_Digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

std::string short_digest(std::string_view data, std::size_t n) {
    std::string full = sha256_hex(data);
    return full.substr(0, n);
}

}  // namespace cotcap
