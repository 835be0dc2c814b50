#include "satdet/imageio.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>

#include "satdet/error.hpp"

namespace satdet {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) {
        throw DataError("cannot open '" + path.string() + "'");
    }
    return f;
}

bool has_extension(const std::filesystem::path& path, const char* ext) {
    std::string e = path.extension().string();
    for (auto& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return e == ext;
}

void png_fail(png_structp png, png_const_charp msg) {
    auto* slot = static_cast<std::string*>(png_get_error_ptr(png));
    if (slot) *slot = msg;
    png_longjmp(png, 1);
}
void png_warn(png_structp, png_const_charp) {}

class PngWriter {
public:
    explicit PngWriter(const std::filesystem::path& path) : file_(open_file(path, "wb")) {
        png_ = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error_, png_fail, png_warn);
        info_ = png_ ? png_create_info_struct(png_) : nullptr;
        if (!png_ || !info_) throw DataError("libpng: allocation failed");
        png_init_io(png_, file_.get());
    }
    ~PngWriter() { png_destroy_write_struct(&png_, &info_); }
    PngWriter(const PngWriter&) = delete;
    PngWriter& operator=(const PngWriter&) = delete;

    png_structp png() { return png_; }
    png_infop info() { return info_; }
    [[noreturn]] void fail() const { throw DataError("libpng: " + error_); }

private:
    std::string error_;
    FilePtr file_;
    png_structp png_ = nullptr;
    png_infop info_ = nullptr;
};

class PngReader {
public:
    explicit PngReader(const std::filesystem::path& path) : file_(open_file(path, "rb")) {
        unsigned char sig[8];
        if (std::fread(sig, 1, 8, file_.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
            throw DataError("'" + path.string() + "' is not a PNG file");
        }
        png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error_, png_fail, png_warn);
        info_ = png_ ? png_create_info_struct(png_) : nullptr;
        if (!png_ || !info_) throw DataError("libpng: allocation failed");
        png_init_io(png_, file_.get());
        png_set_sig_bytes(png_, 8);
    }
    ~PngReader() { png_destroy_read_struct(&png_, &info_, nullptr); }
    PngReader(const PngReader&) = delete;
    PngReader& operator=(const PngReader&) = delete;

    png_structp png() { return png_; }
    png_infop info() { return info_; }
    [[noreturn]] void fail() const { throw DataError("libpng: " + error_); }

private:
    std::string error_;
    FilePtr file_;
    png_structp png_ = nullptr;
    png_infop info_ = nullptr;
};

void write_pgm16(const std::filesystem::path& path, const Image16& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path.string() + "'");
    out << "P5\n" << image.width() << ' ' << image.height() << "\n65535\n";
    for (std::uint16_t v : image.pixels()) {
        const char be[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xff)};
        out.write(be, 2);
    }
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

Image16 read_pgm16(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    in.get();
    if (magic != "P5" || w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
        throw DataError("'" + path.string() + "' is not a binary PGM");
    }
    Image16 image(w, h);
    for (auto& v : image.pixels()) {
        if (maxval > 255) {
            unsigned char be[2];
            in.read(reinterpret_cast<char*>(be), 2);
            v = static_cast<std::uint16_t>((be[0] << 8) | be[1]);
        } else {
            v = static_cast<std::uint16_t>(static_cast<unsigned char>(in.get()) * 257);
        }
    }
    if (!in) throw DataError("'" + path.string() + "' is truncated");
    return image;
}

} // namespace

void write_image16(const std::filesystem::path& path, const Image16& image) {
    if (has_extension(path, ".pgm")) {
        write_pgm16(path, image);
        return;
    }
    PngWriter w(path);
    std::vector<unsigned char> row(static_cast<std::size_t>(image.width()) * 2);
    if (setjmp(png_jmpbuf(w.png()))) w.fail();
    png_set_IHDR(w.png(), w.info(), image.width(), image.height(), 16, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png(), w.info());
    for (int y = 0; y < image.height(); ++y) {
        auto src = image.row(y);
        for (int x = 0; x < image.width(); ++x) {
            row[2 * x] = static_cast<unsigned char>(src[x] >> 8);
            row[2 * x + 1] = static_cast<unsigned char>(src[x] & 0xff);
        }
        png_write_row(w.png(), row.data());
    }
    png_write_end(w.png(), nullptr);
}

Image16 read_image16(const std::filesystem::path& path) {
    if (has_extension(path, ".pgm")) {
        return read_pgm16(path);
    }
    PngReader r(path);
    Image16 image;
    std::vector<unsigned char> row;
    if (setjmp(png_jmpbuf(r.png()))) r.fail();
    png_read_info(r.png(), r.info());
    const int w = static_cast<int>(png_get_image_width(r.png(), r.info()));
    const int h = static_cast<int>(png_get_image_height(r.png(), r.info()));
    const int depth = png_get_bit_depth(r.png(), r.info());
    const int color = png_get_color_type(r.png(), r.info());
    if (color != PNG_COLOR_TYPE_GRAY || (depth != 8 && depth != 16)) {
        throw DataError("'" + path.string() + "' is not an 8/16-bit grayscale PNG");
    }
    image = Image16(w, h);
    const int bytes = depth / 8;
    row.resize(static_cast<std::size_t>(w) * bytes);
    for (int y = 0; y < h; ++y) {
        png_read_row(r.png(), row.data(), nullptr);
        auto dst = image.row(y);
        for (int x = 0; x < w; ++x) {
            dst[x] = bytes == 2 ? static_cast<std::uint16_t>((row[2 * x] << 8) | row[2 * x + 1])
                                : static_cast<std::uint16_t>(row[x] * 257);
        }
    }
    return image;
}

void write_png_rgb(const std::filesystem::path& path, const ImageRgb& image) {
    PngWriter w(path);
    std::vector<unsigned char> row(static_cast<std::size_t>(image.width()) * 3);
    if (setjmp(png_jmpbuf(w.png()))) w.fail();
    png_set_IHDR(w.png(), w.info(), image.width(), image.height(), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png(), w.info());
    for (int y = 0; y < image.height(); ++y) {
        auto src = image.row(y);
        for (int x = 0; x < image.width(); ++x) {
            row[3 * x] = src[x].r;
            row[3 * x + 1] = src[x].g;
            row[3 * x + 2] = src[x].b;
        }
        png_write_row(w.png(), row.data());
    }
    png_write_end(w.png(), nullptr);
}

ImageRgb read_png_rgb(const std::filesystem::path& path) {
    PngReader r(path);
    ImageRgb image;
    std::vector<unsigned char> row;
    if (setjmp(png_jmpbuf(r.png()))) r.fail();
    png_read_info(r.png(), r.info());
    const int w = static_cast<int>(png_get_image_width(r.png(), r.info()));
    const int h = static_cast<int>(png_get_image_height(r.png(), r.info()));
    if (png_get_color_type(r.png(), r.info()) != PNG_COLOR_TYPE_RGB ||
        png_get_bit_depth(r.png(), r.info()) != 8) {
        throw DataError("'" + path.string() + "' is not an 8-bit RGB PNG");
    }
    image = ImageRgb(w, h);
    row.resize(static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        png_read_row(r.png(), row.data(), nullptr);
        auto dst = image.row(y);
        for (int x = 0; x < w; ++x) dst[x] = {row[3 * x], row[3 * x + 1], row[3 * x + 2]};
    }
    return image;
}

} // namespace satdet
