#include "kp/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>

#include "kp/errors.hpp"
#include "kp/text.hpp"

namespace kp {

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int md_len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &md_len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(md_len * 2);
  for (unsigned int i = 0; i < md_len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

std::string sha256_file_hex(const std::string& path) {
  return sha256_hex(read_file(path));
}

}  // namespace kp
