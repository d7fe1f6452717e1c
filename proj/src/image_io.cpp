#include "fire2/image_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace fire2::io {

namespace {

void write_exact(std::ofstream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(is),
                                      std::istreambuf_iterator<char>());
}

}  // namespace

// ---------------------------------------------------------------------------
// NPY

void write_npy(const std::string& path, const Tensor& t) {
    std::string shape = "(";
    for (size_t i = 0; i < t.shape.size(); ++i) {
        shape += std::to_string(t.shape[i]);
        if (i + 1 < t.shape.size()) shape += ", ";
    }
    if (t.shape.size() == 1) shape += ",";  // numpy 1-tuple spelling
    shape += ")";
    std::string header =
        "{'descr': '<f8', 'fortran_order': False, 'shape': " + shape + ", }";
    // pad so magic(6)+ver(2)+len(2)+header is a multiple of 64, ending in \n
    size_t total = 10 + header.size() + 1;
    size_t pad = (64 - total % 64) % 64;
    header.append(pad, ' ');
    header.push_back('\n');

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    write_exact(os, "\x93NUMPY", 6);
    const unsigned char ver[2] = {1, 0};
    write_exact(os, ver, 2);
    const uint16_t hlen = static_cast<uint16_t>(header.size());
    write_exact(os, &hlen, 2);
    write_exact(os, header.data(), header.size());
    write_exact(os, t.data.data(), t.data.size() * sizeof(double));
    if (!os) throw std::runtime_error("short write to " + path);
}

Tensor read_npy(const std::string& path) {
    auto bytes = read_file(path);
    if (bytes.size() < 10 || std::memcmp(bytes.data(), "\x93NUMPY", 6) != 0)
        throw std::runtime_error("not an NPY file: " + path);
    uint16_t hlen;
    std::memcpy(&hlen, bytes.data() + 8, 2);
    std::string header(bytes.begin() + 10, bytes.begin() + 10 + hlen);
    if (header.find("'<f8'") == std::string::npos)
        throw std::runtime_error("unsupported NPY dtype in " + path);
    auto sp = header.find("'shape':");
    auto lp = header.find('(', sp);
    auto rp = header.find(')', lp);
    std::vector<int> shape;
    std::string inner = header.substr(lp + 1, rp - lp - 1);
    size_t pos = 0;
    while (pos < inner.size()) {
        size_t comma = inner.find(',', pos);
        std::string tok = inner.substr(pos, comma == std::string::npos ? std::string::npos
                                                                       : comma - pos);
        size_t digits = tok.find_first_of("0123456789");
        if (digits != std::string::npos) shape.push_back(std::stoi(tok.substr(digits)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    Tensor t(shape);
    const size_t need = t.data.size() * sizeof(double);
    if (bytes.size() < 10 + hlen + need) throw std::runtime_error("truncated NPY: " + path);
    std::memcpy(t.data.data(), bytes.data() + 10 + hlen, need);
    return t;
}

// ---------------------------------------------------------------------------
// PNG

uint32_t crc32(const unsigned char* data, size_t len, uint32_t seed) {
    static uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (uint32_t n = 0; n < 256; ++n) {
            uint32_t c = n;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            table[n] = c;
        }
        init = true;
    }
    uint32_t c = seed ^ 0xffffffffu;
    for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

namespace {

uint32_t adler32(const unsigned char* data, size_t len) {
    uint32_t a = 1, b = 0;
    for (size_t i = 0; i < len; ++i) {
        a = (a + data[i]) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

void put_u32be(std::vector<unsigned char>& v, uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
}

uint32_t get_u32be(const unsigned char* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

void write_chunk(std::ofstream& os, const char type[4], const std::vector<unsigned char>& data) {
    std::vector<unsigned char> buf;
    put_u32be(buf, static_cast<uint32_t>(data.size()));
    buf.insert(buf.end(), type, type + 4);
    buf.insert(buf.end(), data.begin(), data.end());
    uint32_t crc = crc32(buf.data() + 4, buf.size() - 4);
    put_u32be(buf, crc);
    write_exact(os, buf.data(), buf.size());
}

}  // namespace

void write_png_rgb8(const std::string& path, const Tensor& hwc) {
    if (hwc.rank() != 3 || hwc.dim(2) != 3)
        throw std::invalid_argument("write_png_rgb8: expected HxWx3");
    const int H = hwc.dim(0), W = hwc.dim(1);

    // raw scanlines: filter byte 0 + RGB
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<size_t>(H) * (1 + 3 * W));
    for (int h = 0; h < H; ++h) {
        raw.push_back(0);
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < 3; ++c) {
                double v = hwc.data[(static_cast<size_t>(h) * W + w) * 3 + c];
                v = std::min(1.0, std::max(0.0, v));
                raw.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
            }
    }

    // zlib stream with stored deflate blocks
    std::vector<unsigned char> z;
    z.push_back(0x78);
    z.push_back(0x01);
    size_t off = 0;
    while (off < raw.size()) {
        size_t n = std::min<size_t>(65535, raw.size() - off);
        bool final = off + n == raw.size();
        z.push_back(final ? 1 : 0);
        z.push_back(static_cast<unsigned char>(n & 0xff));
        z.push_back(static_cast<unsigned char>(n >> 8));
        z.push_back(static_cast<unsigned char>(~n & 0xff));
        z.push_back(static_cast<unsigned char>((~n >> 8) & 0xff));
        z.insert(z.end(), raw.begin() + static_cast<long>(off), raw.begin() + static_cast<long>(off + n));
        off += n;
    }
    put_u32be(z, adler32(raw.data(), raw.size()));

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    write_exact(os, sig, 8);
    std::vector<unsigned char> ihdr;
    put_u32be(ihdr, static_cast<uint32_t>(W));
    put_u32be(ihdr, static_cast<uint32_t>(H));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // truecolor
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // interlace
    write_chunk(os, "IHDR", ihdr);
    write_chunk(os, "IDAT", z);
    write_chunk(os, "IEND", {});
}

Tensor read_png_rgb8(const std::string& path) {
    auto bytes = read_file(path);
    const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw std::runtime_error("not a PNG: " + path);
    size_t pos = 8;
    int W = 0, H = 0;
    std::vector<unsigned char> idat;
    while (pos + 8 <= bytes.size()) {
        uint32_t len = get_u32be(&bytes[pos]);
        std::string type(bytes.begin() + static_cast<long>(pos) + 4,
                         bytes.begin() + static_cast<long>(pos) + 8);
        const unsigned char* data = &bytes[pos + 8];
        if (type == "IHDR") {
            W = static_cast<int>(get_u32be(data));
            H = static_cast<int>(get_u32be(data + 4));
            if (data[8] != 8 || data[9] != 2)
                throw std::runtime_error("read_png_rgb8: only 8-bit truecolor supported");
        } else if (type == "IDAT") {
            idat.insert(idat.end(), data, data + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (W <= 0 || H <= 0 || idat.size() < 2) throw std::runtime_error("malformed PNG: " + path);

    // inflate: stored blocks only (what write_png_rgb8 emits)
    std::vector<unsigned char> raw;
    size_t p = 2;  // skip zlib header
    for (;;) {
        if (p >= idat.size()) throw std::runtime_error("truncated PNG data: " + path);
        unsigned char hdr = idat[p++];
        if ((hdr & 0x06) != 0)
            throw std::runtime_error("read_png_rgb8: compressed blocks unsupported");
        uint16_t n = static_cast<uint16_t>(idat[p] | (idat[p + 1] << 8));
        p += 4;  // LEN + NLEN
        raw.insert(raw.end(), idat.begin() + static_cast<long>(p),
                   idat.begin() + static_cast<long>(p + n));
        p += n;
        if (hdr & 1) break;
    }

    const size_t stride = 1 + static_cast<size_t>(W) * 3;
    if (raw.size() != stride * static_cast<size_t>(H))
        throw std::runtime_error("PNG scanline size mismatch: " + path);
    Tensor t({H, W, 3});
    for (int h = 0; h < H; ++h) {
        if (raw[static_cast<size_t>(h) * stride] != 0)
            throw std::runtime_error("read_png_rgb8: unexpected filter type");
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < 3; ++c)
                t.data[(static_cast<size_t>(h) * W + w) * 3 + c] =
                    raw[static_cast<size_t>(h) * stride + 1 + static_cast<size_t>(w) * 3 + c] /
                    255.0;
    }
    return t;
}

}  // namespace fire2::io
