#pragma once

// Git-style content hashes: sha1("blob <size>\0" + bytes), hex encoded.

#include <openssl/sha.h>

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "noisyseg/core/error.hpp"
#include "noisyseg/core/stf.hpp"

namespace noisyseg::bench {

inline std::string sha1_hex(std::string_view bytes) {
    unsigned char digest[SHA_DIGEST_LENGTH];
    SHA1(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * SHA_DIGEST_LENGTH);
    for (unsigned char b : digest) {
        out.push_back(hex[b >> 4]);
        out.push_back(hex[b & 0xf]);
    }
    return out;
}

inline std::string git_blob_hash(std::string_view bytes) {
    std::string framed = "blob " + std::to_string(bytes.size());
    framed.push_back('\0');
    framed.append(bytes);
    return sha1_hex(framed);
}

/// Hash of every regular file under `dir`: the blob hash of the listing "<blob hash> <relative path>\n",
/// sorted by path.
inline std::string hash_directory(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir))
        throw IoError("not a directory: " + dir.string());
    std::vector<std::string> paths;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file())
            paths.push_back(fs::relative(entry.path(), dir).generic_string());
    std::sort(paths.begin(), paths.end());
    std::string listing;
    for (const auto& p : paths) {
        const auto bytes = stf::read_bytes(dir / p);
        listing += git_blob_hash(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
        listing += ' ';
        listing += p;
        listing += '\n';
    }
    return git_blob_hash(listing);
}

} // namespace noisyseg::bench
