#include "dealkit/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dealkit {

namespace {

[[noreturn]] void io_fail(const std::filesystem::path& path, const std::string& what) {
    throw std::ios_base::failure(path.string() + ": " + what);
}

void put_f32_le(std::ostream& os, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    const char b[4] = {static_cast<char>(bits & 0xFF),
                       static_cast<char>((bits >> 8) & 0xFF),
                       static_cast<char>((bits >> 16) & 0xFF),
                       static_cast<char>((bits >> 24) & 0xFF)};
    os.write(b, 4);
}

float get_f32_le(const unsigned char* p) {
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                               (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) |
                               (static_cast<std::uint32_t>(p[3]) << 24);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

// PNM-style token: skips whitespace, no comment handling inside PFM headers
std::string next_token(std::istream& is) {
    std::string tok;
    is >> tok;
    return tok;
}

}  // namespace

void write_pfm(const std::filesystem::path& path, const Tensor& t) {
    if (t.shape.size() != 3 || (t.shape[0] != 1 && t.shape[0] != 3))
        throw std::invalid_argument("write_pfm: expected 1xHxW or 3xHxW");
    for (double v : t.values())
        if (!std::isfinite(v)) throw std::invalid_argument("write_pfm: non-finite value");

    const int c = t.shape[0], h = t.shape[1], w = t.shape[2];
    std::ofstream os(path, std::ios::binary);
    if (!os) io_fail(path, "cannot open for writing");
    os << (c == 1 ? "Pf" : "PF") << "\n" << w << " " << h << "\n" << "-1.0" << "\n";
    // bottom-to-top rows, channel-interleaved pixels
    for (int i = h - 1; i >= 0; --i)
        for (int j = 0; j < w; ++j)
            for (int ch = 0; ch < c; ++ch)
                put_f32_le(os, static_cast<float>(t.at(ch, i, j)));
    if (!os) io_fail(path, "write failed");
}

Tensor read_pfm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) io_fail(path, "cannot open");
    const std::string magic = next_token(is);
    if (magic != "Pf" && magic != "PF")
        io_fail(path, "not a PFM file (magic '" + magic + "')");
    const int c = magic == "Pf" ? 1 : 3;
    int w = 0, h = 0;
    double scale = 0.0;
    if (!(is >> w >> h >> scale)) io_fail(path, "malformed PFM header");
    if (w < 1 || h < 1) io_fail(path, "bad PFM dimensions");
    if (scale >= 0.0) io_fail(path, "big-endian PFM not supported (scale >= 0)");
    is.get();  // single whitespace byte after the scale line

    const std::size_t n = static_cast<std::size_t>(c) * h * w;
    std::vector<unsigned char> raw(n * 4);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(is.gcount()) != raw.size())
        io_fail(path, "truncated PFM raster");

    std::vector<double> data(n);
    std::size_t idx = 0;
    for (int i = h - 1; i >= 0; --i)
        for (int j = 0; j < w; ++j)
            for (int ch = 0; ch < c; ++ch) {
                data[(static_cast<std::size_t>(ch) * h + i) * w + j] =
                    static_cast<double>(get_f32_le(raw.data() + idx * 4));
                ++idx;
            }
    return tensor_from(std::move(data), {c, h, w});
}

void write_ppm(const std::filesystem::path& path, const Tensor& rgb) {
    if (rgb.shape.size() != 3 || rgb.shape[0] != 3)
        throw std::invalid_argument("write_ppm: expected 3xHxW");
    const int h = rgb.shape[1], w = rgb.shape[2];
    std::ofstream os(path, std::ios::binary);
    if (!os) io_fail(path, "cannot open for writing");
    os << "P6\n" << w << " " << h << "\n255\n";
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(rgb.at(ch, i, j), 0.0, 1.0);
                os.put(static_cast<char>(std::lround(v * 255.0)));
            }
    if (!os) io_fail(path, "write failed");
}

namespace {

// shared P5/P6 header parsing with '#' comments
void read_pnm_header(std::istream& is, const std::filesystem::path& path,
                     const std::string& want_magic, int& w, int& h) {
    std::string magic;
    is >> magic;
    if (magic != want_magic)
        io_fail(path, "expected " + want_magic + ", got '" + magic + "'");
    auto next_int = [&](int& out) {
        for (;;) {
            is >> std::ws;
            if (is.peek() == '#') {
                std::string line;
                std::getline(is, line);
                continue;
            }
            if (!(is >> out)) io_fail(path, "malformed header");
            return;
        }
    };
    int maxval = 0;
    next_int(w);
    next_int(h);
    next_int(maxval);
    if (w < 1 || h < 1) io_fail(path, "bad dimensions");
    if (maxval != 255) io_fail(path, "unsupported maxval (want 255)");
    is.get();
}

}  // namespace

Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) io_fail(path, "cannot open");
    int w = 0, h = 0;
    read_pnm_header(is, path, "P6", w, h);
    std::vector<unsigned char> raw(static_cast<std::size_t>(h) * w * 3);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(is.gcount()) != raw.size())
        io_fail(path, "truncated raster");
    std::vector<double> data(raw.size());
    std::size_t idx = 0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int ch = 0; ch < 3; ++ch) {
                data[(static_cast<std::size_t>(ch) * h + i) * w + j] =
                    raw[idx++] / 255.0;
            }
    return tensor_from(std::move(data), {3, h, w});
}

void write_pgm(const std::filesystem::path& path, const std::vector<int>& mask,
               int h, int w) {
    if (static_cast<std::size_t>(h) * w != mask.size())
        throw std::invalid_argument("write_pgm: mask size mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) io_fail(path, "cannot open for writing");
    os << "P5\n" << w << " " << h << "\n255\n";
    for (int v : mask) {
        if (v < 0 || v > 255) throw std::invalid_argument("write_pgm: value outside 0..255");
        os.put(static_cast<char>(v));
    }
    if (!os) io_fail(path, "write failed");
}

std::pair<std::vector<int>, std::pair<int, int>> read_pgm(
    const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) io_fail(path, "cannot open");
    int w = 0, h = 0;
    read_pnm_header(is, path, "P5", w, h);
    std::vector<unsigned char> raw(static_cast<std::size_t>(h) * w);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(is.gcount()) != raw.size())
        io_fail(path, "truncated raster");
    std::vector<int> mask(raw.begin(), raw.end());
    return {std::move(mask), {h, w}};
}

void write_labels(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, std::vector<int>>>& labels) {
    if (!labels.empty()) {
        const std::size_t k = labels.front().second.size();
        for (const auto& [id, vec] : labels)
            if (vec.size() != k)
                throw std::invalid_argument("write_labels: non-uniform label length");
    }
    std::ofstream os(path);
    if (!os) io_fail(path, "cannot open for writing");
    for (const auto& [id, vec] : labels) {
        os << id << " ";
        bool first = true;
        for (std::size_t c = 0; c < vec.size(); ++c)
            if (vec[c]) {
                if (!first) os << ",";
                os << c;
                first = false;
            }
        os << "\n";
    }
    if (!os) io_fail(path, "write failed");
}

std::vector<std::pair<std::string, std::vector<int>>> read_labels(
    const std::filesystem::path& path, int num_classes) {
    std::ifstream is(path);
    if (!is) io_fail(path, "cannot open");
    std::vector<std::pair<std::string, std::vector<int>>> out;
    std::set<std::string> seen;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id, rest;
        ls >> id;
        if (id.empty()) continue;
        if (!seen.insert(id).second) io_fail(path, "duplicate sample id '" + id + "'");
        std::vector<int> vec(num_classes, 0);
        ls >> rest;
        if (!rest.empty()) {
            std::istringstream rs(rest);
            std::string tok;
            while (std::getline(rs, tok, ',')) {
                const int c = std::stoi(tok);
                if (c < 0 || c >= num_classes)
                    io_fail(path, "class index " + tok + " out of range");
                vec[c] = 1;
            }
        }
        out.emplace_back(std::move(id), std::move(vec));
    }
    return out;
}

}  // namespace dealkit
