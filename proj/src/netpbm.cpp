#include "vapl/netpbm.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "vapl/errors.hpp"

namespace vapl::netpbm {

namespace {

class HeaderReader {
public:
    HeaderReader(std::string_view bytes, const std::string& source) : bytes_(bytes), source_(source) {}

    [[noreturn]] void fail(const std::string& what) const {
        throw DataError(source_ + ": " + what + " at byte offset " + std::to_string(pos_));
    }

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            const char c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                return;
            }
        }
    }

    std::size_t number(const char* field) {
        skip_space_and_comments();
        if (pos_ >= bytes_.size()) fail(std::string("truncated header, missing ") + field);
        if (!std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) fail(std::string("expected ") + field);
        std::size_t v = 0;
        while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
            if (v > 1'000'000) fail(std::string(field) + " too large");
            ++pos_;
        }
        return v;
    }

    std::size_t pos() const { return pos_; }
    void advance(std::size_t n) { pos_ += n; }

private:
    std::string_view bytes_;
    const std::string& source_;
    std::size_t pos_ = 0;
};

}  // namespace

Raster parse(std::string_view bytes, const std::string& source) {
    HeaderReader in(bytes, source);
    if (bytes.size() < 2) in.fail("truncated header, missing magic");
    Raster r;
    if (bytes.substr(0, 2) == "P5") {
        r.channels = 1;
    } else if (bytes.substr(0, 2) == "P6") {
        r.channels = 3;
    } else {
        in.fail("unsupported magic (need binary P5 or P6)");
    }
    in.advance(2);
    r.width = in.number("width");
    r.height = in.number("height");
    const std::size_t maxval = in.number("maxval");
    if (r.width == 0 || r.height == 0) in.fail("zero image dimension");
    if (maxval == 0 || maxval > 65535) in.fail("maxval out of range");
    r.maxval = static_cast<std::uint16_t>(maxval);
    if (in.pos() >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[in.pos()])))
        in.fail("truncated header, missing whitespace before raster");
    in.advance(1);
    const std::size_t bps = maxval > 255 ? 2 : 1;
    const std::size_t count = r.width * r.height * r.channels;
    if (bytes.size() - in.pos() < count * bps)
        in.fail("truncated raster, expected " + std::to_string(count * bps) + " bytes, found " +
                std::to_string(bytes.size() - in.pos()));
    r.samples.resize(count);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + in.pos();
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint16_t v = bps == 2 ? static_cast<std::uint16_t>((p[2 * i] << 8) | p[2 * i + 1]) : p[i];
        if (v > maxval) {
            in.advance(i * bps);
            in.fail("sample exceeds maxval");
        }
        r.samples[i] = v;
    }
    return r;
}

std::string encode(const Raster& r) {
    if (r.channels != 1 && r.channels != 3) throw DataError("netpbm: channels must be 1 or 3");
    if (r.samples.size() != r.width * r.height * r.channels) throw DataError("netpbm: sample count mismatch");
    std::ostringstream os;
    os << (r.channels == 1 ? "P5" : "P6") << "\n" << r.width << " " << r.height << "\n" << r.maxval << "\n";
    std::string out = os.str();
    const bool wide = r.maxval > 255;
    out.reserve(out.size() + r.samples.size() * (wide ? 2 : 1));
    for (std::uint16_t v : r.samples) {
        if (wide) out.push_back(static_cast<char>(v >> 8));
        out.push_back(static_cast<char>(v & 0xff));
    }
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(path.string() + ": cannot open");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(path.string() + ": cannot open for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError(path.string() + ": write failed");
}

Raster read(const std::filesystem::path& path) { return parse(read_file(path), path.string()); }

void write(const std::filesystem::path& path, const Raster& raster) { write_file(path, encode(raster)); }

Tensor to_tensor(const Raster& r) {
    Tensor t({r.channels, r.height, r.width});
    const std::size_t hw = r.width * r.height;
    for (std::size_t i = 0; i < hw; ++i)
        for (std::size_t c = 0; c < r.channels; ++c)
            t[c * hw + i] = static_cast<double>(r.samples[i * r.channels + c]) / r.maxval;
    return t;
}

Raster from_tensor(const Tensor& image) {
    if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
        throw ShapeError("image tensor must be [1|3,H,W], got " + shape_str(image.shape()));
    Raster r;
    r.channels = image.dim(0);
    r.height = image.dim(1);
    r.width = image.dim(2);
    r.maxval = 255;
    const std::size_t hw = r.width * r.height;
    r.samples.resize(hw * r.channels);
    for (std::size_t i = 0; i < hw; ++i)
        for (std::size_t c = 0; c < r.channels; ++c) {
            const double v = image[c * hw + i];
            if (!(v >= 0.0 && v <= 1.0)) throw DataError("image value outside [0,1]");
            r.samples[i * r.channels + c] = static_cast<std::uint16_t>(std::lround(v * 255.0));
        }
    return r;
}

}  // namespace vapl::netpbm
