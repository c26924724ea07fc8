#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ddgae/graph_data.hpp"

namespace ddgae::fetch {

std::string sha256_hex(std::string_view bytes);

struct ZipEntry {
    std::string name;
    std::string data;
};

/// Reads stored and deflated members of a (non-zip64) archive, checking
/// each CRC. Throws CorruptDataset on malformed input.
std::vector<ZipEntry> read_zip(std::string_view archive);

/// GET with redirects followed. Throws IngestError on transport failure or
/// a non-200 status.
std::string http_get(const std::string& url);

std::string default_url(data::DatasetName name);

struct FetchOptions {
    std::string url;              // empty -> default_url
    std::string expected_sha256;  // empty -> trust on first use
    bool force = false;           // ignore the cache and download again
    std::function<void(const std::string&)> log;
};

struct FetchResult {
    std::filesystem::path raw_dir;
    std::string sha256;  // of the archive; empty when raw files were placed by hand
    bool cache_hit = false;
};

/// Ensures `<cache_root>/<NAME>/raw` holds the TUDataset text files.
/// The archive digest is recorded next to it on first download and every
/// later archive must match it (and `expected_sha256` when given), else
/// ChecksumError. A populated cache is served without network access.
FetchResult fetch_dataset(data::DatasetName name, const std::filesystem::path& cache_root,
                          const FetchOptions& options = {});

}  // namespace ddgae::fetch
