#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "ddgae/fetch.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "ddgae/errors.hpp"

namespace ddgae::fetch {

namespace fs = std::filesystem;

namespace {

std::uint32_t u32(std::string_view s, std::size_t at) {
    if (at + 4 > s.size()) throw CorruptDataset("zip: truncated record");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[at + static_cast<std::size_t>(i)]);
    return v;
}

std::uint16_t u16(std::string_view s, std::size_t at) {
    if (at + 2 > s.size()) throw CorruptDataset("zip: truncated record");
    return static_cast<std::uint16_t>(static_cast<unsigned char>(s[at]) |
                                      (static_cast<unsigned char>(s[at + 1]) << 8));
}

std::string inflate_raw(std::string_view in, std::size_t expected) {
    std::string out(expected, '\0');
    z_stream zs{};
    if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw CorruptDataset("zip: cannot initialise inflate");
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = reinterpret_cast<Bytef*>(out.data());
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = inflate(&zs, Z_FINISH);
    const auto produced = zs.total_out;
    inflateEnd(&zs);
    if (rc != Z_STREAM_END || produced != expected) throw CorruptDataset("zip: deflate stream is damaged");
    return out;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IngestError("cannot read " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_file(const fs::path& p, std::string_view bytes) {
    fs::create_directories(p.parent_path());
    auto tmp = p;
    tmp += ".part";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IngestError("cannot write " + tmp.string());
    }
    fs::rename(tmp, p);
}

bool raw_files_present(const fs::path& dir, std::string_view prefix) {
    for (const char* suffix : {"_A.txt", "_graph_indicator.txt", "_graph_labels.txt"})
        if (!fs::exists(dir / (std::string(prefix) + suffix))) return false;
    return true;
}

std::string trimmed(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ')) s.pop_back();
    return s;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

std::vector<ZipEntry> read_zip(std::string_view z) {
    if (z.size() < 22) throw CorruptDataset("zip: too short");
    std::size_t eocd = std::string_view::npos;
    const std::size_t floor = z.size() > 22 + 65535 ? z.size() - 22 - 65535 : 0;
    for (std::size_t at = z.size() - 22 + 1; at-- > floor;) {
        if (u32(z, at) == 0x06054b50U) {
            eocd = at;
            break;
        }
    }
    if (eocd == std::string_view::npos) throw CorruptDataset("zip: no end-of-central-directory record");
    const std::size_t count = u16(z, eocd + 10);
    std::size_t at = u32(z, eocd + 16);

    std::vector<ZipEntry> out;
    for (std::size_t k = 0; k < count; ++k) {
        if (u32(z, at) != 0x02014b50U) throw CorruptDataset("zip: bad central directory entry");
        const auto method = u16(z, at + 10);
        const auto crc = u32(z, at + 16);
        const auto csize = u32(z, at + 20);
        const auto usize = u32(z, at + 24);
        const auto nlen = u16(z, at + 28);
        const auto elen = u16(z, at + 30);
        const auto clen = u16(z, at + 32);
        const auto local = u32(z, at + 42);
        if (csize == 0xffffffffU || usize == 0xffffffffU || local == 0xffffffffU)
            throw CorruptDataset("zip: zip64 archives are not supported");
        if (at + 46 + nlen > z.size()) throw CorruptDataset("zip: truncated file name");
        ZipEntry e;
        e.name = std::string(z.substr(at + 46, nlen));
        at += 46 + nlen + elen + clen;

        if (u32(z, local) != 0x04034b50U) throw CorruptDataset("zip: bad local header for " + e.name);
        const std::size_t data = local + 30 + u16(z, local + 26) + u16(z, local + 28);
        if (data + csize > z.size()) throw CorruptDataset("zip: truncated data for " + e.name);
        const auto payload = z.substr(data, csize);
        if (!e.name.empty() && e.name.back() == '/') continue;  // directory
        if (method == 0) e.data = std::string(payload);
        else if (method == 8) e.data = inflate_raw(payload, usize);
        else throw CorruptDataset("zip: unsupported compression method " + std::to_string(method));
        if (e.data.size() != usize) throw CorruptDataset("zip: size mismatch for " + e.name);
        const auto actual = crc32(0L, reinterpret_cast<const Bytef*>(e.data.data()), static_cast<uInt>(e.data.size()));
        if (actual != crc) throw CorruptDataset("zip: CRC mismatch for " + e.name);
        out.push_back(std::move(e));
    }
    return out;
}

std::string http_get(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw IngestError("not a URL: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    const std::string origin = url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
    httplib::Client client(origin);
    client.set_follow_location(true);
    client.set_connection_timeout(20);
    client.set_read_timeout(120);
    auto res = client.Get(path);
    if (!res) throw IngestError("download of " + url + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw IngestError("download of " + url + " returned HTTP " + std::to_string(res->status));
    return res->body;
}

std::string default_url(data::DatasetName name) {
    return "https://www.chrsmrrs.com/graphkerneldatasets/" + std::string(data::to_string(name)) + ".zip";
}

FetchResult fetch_dataset(data::DatasetName name, const fs::path& cache_root, const FetchOptions& options) {
    const std::string prefix(data::to_string(name));
    const fs::path home = cache_root / prefix;
    const fs::path raw = data::raw_dir(cache_root, name);
    const fs::path archive = home / (prefix + ".zip");
    const fs::path record = home / (prefix + ".zip.sha256");
    auto log = [&](const std::string& m) {
        if (options.log) options.log(m);
    };
    const std::string recorded = fs::exists(record) ? trimmed(read_file(record)) : std::string();

    if (!options.force && raw_files_present(raw, prefix)) {
        if (!options.expected_sha256.empty() && !recorded.empty() && recorded != options.expected_sha256)
            throw ChecksumError("cached " + prefix + " archive has sha256 " + recorded + ", expected " +
                                options.expected_sha256);
        log("cache hit: " + raw.string());
        return {raw, recorded, true};
    }

    std::string bytes;
    if (!options.force && fs::exists(archive)) {
        bytes = read_file(archive);
        log("using cached archive " + archive.string());
    } else {
        const std::string url = options.url.empty() ? default_url(name) : options.url;
        log("downloading " + url);
        bytes = http_get(url);
    }

    const std::string digest = sha256_hex(bytes);
    if (!options.expected_sha256.empty() && digest != options.expected_sha256)
        throw ChecksumError(prefix + " archive sha256 " + digest + " does not match expected " +
                            options.expected_sha256);
    if (!recorded.empty() && digest != recorded)
        throw ChecksumError(prefix + " archive sha256 " + digest + " differs from the digest recorded on first fetch (" +
                            recorded + "); delete " + record.string() + " to accept the new archive");

    const auto entries = read_zip(bytes);
    const fs::path staging = home / "raw.staging";
    fs::remove_all(staging);
    std::size_t written = 0;
    for (const auto& e : entries) {
        const std::string base = fs::path(e.name).filename().string();
        if (base.rfind(prefix + "_", 0) != 0 || fs::path(base).extension() != ".txt") continue;
        write_file(staging / base, e.data);
        ++written;
    }
    if (!raw_files_present(staging, prefix)) {
        fs::remove_all(staging);
        throw CorruptDataset(prefix + " archive does not contain the TUDataset text files");
    }
    fs::remove_all(raw);
    fs::rename(staging, raw);
    write_file(archive, bytes);
    write_file(record, digest + "\n");
    log("extracted " + std::to_string(written) + " files to " + raw.string() + " (sha256 " + digest + ")");
    return {raw, digest, false};
}

}  // namespace ddgae::fetch
