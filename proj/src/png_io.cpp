#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>

#include "keylabel/error.hpp"
#include "keylabel/io.hpp"

namespace kpl::io {

namespace {

struct PngBuffer {
    std::string bytes;
};

void append_data(png_structp png, png_bytep data, png_size_t length)
{
    auto* buffer = static_cast<PngBuffer*>(png_get_io_ptr(png));
    buffer->bytes.append(reinterpret_cast<const char*>(data), length);
}

void flush_nothing(png_structp) {}

[[noreturn]] void png_fail(png_structp, png_const_charp message)
{
    throw Error(Errc::IoError, std::string("png: ") + message);
}

void png_warn(png_structp, png_const_charp) {}

/// Encode rows already packed for the given bit depth / colour type.
std::string encode(int width, int height, int bit_depth, int color_type, const std::vector<std::vector<png_byte>>& rows)
{
    PngBuffer buffer;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    if (png == nullptr)
        throw Error(Errc::IoError, "png: cannot create writer");
    png_infop info = png_create_info_struct(png);
    try {
        png_set_write_fn(png, &buffer, append_data, flush_nothing);
        png_set_compression_level(png, 6);
        png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
                     color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (const auto& row : rows)
            png_write_row(png, row.data());
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
    return std::move(buffer.bytes);
}

struct Decoded {
    int width = 0;
    int height = 0;
    int bit_depth = 0;
    int color_type = 0;
    std::vector<std::vector<png_byte>> rows;
};

Decoded decode(const fs::path& path)
{
    std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!file)
        throw Error(Errc::MissingFile, "cannot open image", path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    png_infop info = png_create_info_struct(png);
    Decoded out;
    try {
        png_init_io(png, file.get());
        png_read_info(png, info);
        out.width = static_cast<int>(png_get_image_width(png, info));
        out.height = static_cast<int>(png_get_image_height(png, info));
        out.bit_depth = png_get_bit_depth(png, info);
        out.color_type = png_get_color_type(png, info);
        if (out.color_type == PNG_COLOR_TYPE_PALETTE)
            png_set_palette_to_rgb(png);
        if (out.color_type == PNG_COLOR_TYPE_GRAY && out.bit_depth < 8)
            png_set_expand_gray_1_2_4_to_8(png);
        if (out.bit_depth == 16)
            png_set_swap(png);  // little-endian rows for the caller
        png_read_update_info(png, info);
        out.bit_depth = png_get_bit_depth(png, info);
        out.color_type = png_get_color_type(png, info);
        const std::size_t stride = png_get_rowbytes(png, info);
        out.rows.assign(static_cast<std::size_t>(out.height), std::vector<png_byte>(stride));
        for (auto& row : out.rows)
            png_read_row(png, row.data(), nullptr);
        png_read_end(png, nullptr);
    } catch (const Error& e) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(e.code(), e.what(), path.string());
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

}  // namespace

std::string frame_filename(std::size_t frame)
{
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.png", frame);
    return name;
}

std::string encode_png(const ColorImage& image)
{
    if (image.channels != 3)
        throw Error(Errc::InvalidArgument, "colour images must have 3 channels");
    std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(image.height));
    for (int v = 0; v < image.height; ++v) {
        const auto* begin = image.pixels.data() + static_cast<std::size_t>(v) * image.width * 3;
        rows[static_cast<std::size_t>(v)].assign(begin, begin + static_cast<std::size_t>(image.width) * 3);
    }
    return encode(image.width, image.height, 8, PNG_COLOR_TYPE_RGB, rows);
}

void write_png(const fs::path& path, const ColorImage& image) { write_file_atomic(path, encode_png(image)); }

void write_png(const fs::path& path, const DepthImage& image)
{
    std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(image.height),
                                            std::vector<png_byte>(static_cast<std::size_t>(image.width) * 2));
    for (int v = 0; v < image.height; ++v)
        for (int u = 0; u < image.width; ++u) {
            const std::uint16_t d = image.at(u, v);
            rows[static_cast<std::size_t>(v)][2 * static_cast<std::size_t>(u)] = static_cast<png_byte>(d >> 8);
            rows[static_cast<std::size_t>(v)][2 * static_cast<std::size_t>(u) + 1] = static_cast<png_byte>(d & 0xff);
        }
    write_file_atomic(path, encode(image.width, image.height, 16, PNG_COLOR_TYPE_GRAY, rows));
}

void write_mask_png(const fs::path& path, const Mask& mask)
{
    const std::size_t stride = (static_cast<std::size_t>(mask.width) + 7) / 8;
    std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(mask.height), std::vector<png_byte>(stride, 0));
    for (int v = 0; v < mask.height; ++v)
        for (int u = 0; u < mask.width; ++u)
            if (mask.at(u, v))
                rows[static_cast<std::size_t>(v)][static_cast<std::size_t>(u) / 8] |=
                    static_cast<png_byte>(0x80 >> (u % 8));
    write_file_atomic(path, encode(mask.width, mask.height, 1, PNG_COLOR_TYPE_GRAY, rows));
}

ColorImage read_color_png(const fs::path& path)
{
    const Decoded d = decode(path);
    if (d.bit_depth != 8 || (d.color_type != PNG_COLOR_TYPE_RGB && d.color_type != PNG_COLOR_TYPE_RGBA &&
                             d.color_type != PNG_COLOR_TYPE_GRAY))
        throw Error(Errc::IoError, "expected an 8-bit colour PNG", path.string());
    const int in_channels = d.color_type == PNG_COLOR_TYPE_RGB ? 3 : d.color_type == PNG_COLOR_TYPE_RGBA ? 4 : 1;
    ColorImage image(d.width, d.height, 3);
    for (int v = 0; v < d.height; ++v)
        for (int u = 0; u < d.width; ++u)
            for (int c = 0; c < 3; ++c)
                image.at(u, v, c) =
                    d.rows[static_cast<std::size_t>(v)][static_cast<std::size_t>(u * in_channels + (in_channels == 1 ? 0 : c))];
    return image;
}

DepthImage read_depth_png(const fs::path& path)
{
    const Decoded d = decode(path);
    if (d.bit_depth != 16 || d.color_type != PNG_COLOR_TYPE_GRAY)
        throw Error(Errc::IoError, "expected a 16-bit greyscale depth PNG", path.string());
    DepthImage image(d.width, d.height);
    for (int v = 0; v < d.height; ++v) {
        const auto& row = d.rows[static_cast<std::size_t>(v)];
        for (int u = 0; u < d.width; ++u)
            image.at(u, v) = static_cast<std::uint16_t>(row[2 * static_cast<std::size_t>(u)] |
                                                        (row[2 * static_cast<std::size_t>(u) + 1] << 8));
    }
    return image;
}

Mask read_mask_png(const fs::path& path)
{
    const Decoded d = decode(path);
    if (d.bit_depth != 8 || d.color_type != PNG_COLOR_TYPE_GRAY)
        throw Error(Errc::IoError, "expected a greyscale mask PNG", path.string());
    Mask mask(d.width, d.height);
    for (int v = 0; v < d.height; ++v)
        for (int u = 0; u < d.width; ++u)
            mask.at(u, v) = d.rows[static_cast<std::size_t>(v)][static_cast<std::size_t>(u)] != 0;
    return mask;
}

}  // namespace kpl::io
