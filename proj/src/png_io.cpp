#include "cpga/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace cpga {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_handler(png_structp, png_const_charp message) { throw PngError(message); }
void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace

template <typename T>
Tensor<T> load_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw PngError("cannot open " + path.string());
    png_byte header[8];
    if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0)
        throw PngError(path.string() + " is not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
    if (!png) throw PngError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    struct Cleanup {
        png_structp* png;
        png_infop* info;
        ~Cleanup() { png_destroy_read_struct(png, info, nullptr); }
    } cleanup{&png, &info};
    if (!info) throw PngError("png_create_info_struct failed");

    std::vector<png_bytep> rows;
    std::vector<png_byte> buffer;
    std::size_t width = 0, height = 0, depth = 0;
    try {
        png_init_io(png, file.get());
        png_set_sig_bytes(png, 8);
        png_read_info(png, info);
        const int color = png_get_color_type(png, info);
        const int bits = png_get_bit_depth(png, info);
        if (color != PNG_COLOR_TYPE_PALETTE && bits != 8 && bits != 16)
            throw UnsupportedBitDepthError(path.string() + ": unsupported bit depth " + std::to_string(bits));
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
        png_set_strip_alpha(png);
        if (bits == 16) png_set_swap(png);  // host-order uint16
        png_read_update_info(png, info);
        width = png_get_image_width(png, info);
        height = png_get_image_height(png, info);
        depth = png_get_bit_depth(png, info);
        const std::size_t row_bytes = png_get_rowbytes(png, info);
        if (png_get_channels(png, info) != 3) throw PngError(path.string() + ": unexpected channel layout");
        buffer.resize(row_bytes * height);
        rows.resize(height);
        for (std::size_t y = 0; y < height; ++y) rows[y] = buffer.data() + y * row_bytes;
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
    } catch (const PngError&) {
        throw;
    }

    std::vector<T> data(3 * width * height);
    const std::size_t plane = width * height;
    if (depth == 16) {
        const auto* px = reinterpret_cast<const std::uint16_t*>(buffer.data());
        for (std::size_t i = 0; i < plane; ++i)
            for (std::size_t c = 0; c < 3; ++c) data[c * plane + i] = static_cast<T>(px[3 * i + c]) / T(65535);
    } else {
        for (std::size_t i = 0; i < plane; ++i)
            for (std::size_t c = 0; c < 3; ++c) data[c * plane + i] = static_cast<T>(buffer[3 * i + c]) / T(255);
    }
    return Tensor<T>({1, 3, height, width}, std::move(data));
}

template <typename T>
void save_png(const Tensor<T>& image, const std::filesystem::path& path) {
    const Shape& s = image.shape();
    const bool batched = s.size() == 4;
    if (!((batched && s[0] == 1 && s[1] == 3) || (s.size() == 3 && s[0] == 3)))
        throw ShapeError("save_png expects [1,3,H,W] or [3,H,W], got " + to_string(s));
    const std::size_t height = batched ? s[2] : s[1];
    const std::size_t width = batched ? s[3] : s[2];
    const std::size_t plane = width * height;
    std::vector<png_byte> buffer(3 * plane);
    const auto data = image.data();
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i) {
            const T v = data[c * plane + i];
            if (!(v >= T(0) && v <= T(1)))
                throw RangeError("save_png: value " + std::to_string(v) + " outside [0,1]");
            buffer[3 * i + c] = static_cast<png_byte>(std::floor(static_cast<double>(v) * 255.0 + 0.5));
        }

    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw PngError("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
    if (!png) throw PngError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    struct Cleanup {
        png_structp* png;
        png_infop* info;
        ~Cleanup() { png_destroy_write_struct(png, info); }
    } cleanup{&png, &info};
    if (!info) throw PngError("png_create_info_struct failed");
    std::vector<png_bytep> rows(height);
    for (std::size_t y = 0; y < height; ++y) rows[y] = buffer.data() + 3 * y * width;
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    if (std::fflush(file.get()) != 0) throw PngError("write failed for " + path.string());
}

template Tensor<float> load_png<float>(const std::filesystem::path&);
template Tensor<double> load_png<double>(const std::filesystem::path&);
template void save_png(const Tensor<float>&, const std::filesystem::path&);
template void save_png(const Tensor<double>&, const std::filesystem::path&);

}  // namespace cpga
