#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "errors.hpp"

namespace fluoroforge::detail {

struct Png16 {
    int width = 0;
    int height = 0;
    std::vector<std::uint16_t> samples;  // row-major
};

inline void close_file(std::FILE* fp) {
    if (fp) std::fclose(fp);
}

/// Reads a 16-bit grayscale PNG. Any other layout is rejected: the on-disk
/// format is part of the interchange contract, not something to convert
/// silently.
inline Png16 read_png16(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open image file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        close_file(fp);
        throw IoError("cannot allocate PNG reader for: " + path);
    }

    // libpng reports errors by longjmp. No C++ objects with destructors may
    // live between here and the cleanup below.
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        close_file(fp);
        throw IoError("failed to decode PNG: " + path);
    }

    png_init_io(png, fp);
    png_read_info(png, info);

    const png_uint_32 width = png_get_image_width(png, info);
    const png_uint_32 height = png_get_image_height(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);

    if (color_type != PNG_COLOR_TYPE_GRAY || bit_depth != 16) {
        png_destroy_read_struct(&png, &info, nullptr);
        close_file(fp);
        throw IoError("expected 16-bit grayscale PNG: " + path);
    }
    if (width == 0 || height == 0) {
        png_destroy_read_struct(&png, &info, nullptr);
        close_file(fp);
        throw IoError("zero-size PNG: " + path);
    }

    std::vector<std::uint8_t>* raw = new std::vector<std::uint8_t>(
        static_cast<std::size_t>(width) * height * 2);
    std::vector<png_bytep>* rows = new std::vector<png_bytep>(height);
    for (png_uint_32 y = 0; y < height; ++y) {
        (*rows)[y] = raw->data() + static_cast<std::size_t>(y) * width * 2;
    }

    if (setjmp(png_jmpbuf(png))) {
        delete raw;
        delete rows;
        png_destroy_read_struct(&png, &info, nullptr);
        close_file(fp);
        throw IoError("failed to decode PNG: " + path);
    }

    png_read_image(png, rows->data());
    png_destroy_read_struct(&png, &info, nullptr);
    close_file(fp);

    Png16 out;
    out.width = static_cast<int>(width);
    out.height = static_cast<int>(height);
    out.samples.resize(static_cast<std::size_t>(width) * height);
    // PNG stores 16-bit samples big-endian; assemble by hand so the result
    // does not depend on host byte order.
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
        out.samples[i] = static_cast<std::uint16_t>(
            (static_cast<unsigned>((*raw)[2 * i]) << 8) | (*raw)[2 * i + 1]);
    }
    delete raw;
    delete rows;
    return out;
}

inline void write_png16(const std::string& path, int width, int height,
                        const std::vector<std::uint16_t>& samples) {
    if (width <= 0 || height <= 0) throw IoError("refusing to write zero-size PNG: " + path);
    if (samples.size() != static_cast<std::size_t>(width) * height) {
        throw IoError("sample buffer does not match dimensions for: " + path);
    }

    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot open image file for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        close_file(fp);
        throw IoError("cannot allocate PNG writer for: " + path);
    }

    std::vector<std::uint8_t>* raw = new std::vector<std::uint8_t>(samples.size() * 2);
    std::vector<png_bytep>* rows = new std::vector<png_bytep>(height);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        (*raw)[2 * i] = static_cast<std::uint8_t>(samples[i] >> 8);
        (*raw)[2 * i + 1] = static_cast<std::uint8_t>(samples[i] & 0xff);
    }
    for (int y = 0; y < height; ++y) {
        (*rows)[y] = raw->data() + static_cast<std::size_t>(y) * width * 2;
    }

    if (setjmp(png_jmpbuf(png))) {
        delete raw;
        delete rows;
        png_destroy_write_struct(&png, &info);
        close_file(fp);
        throw IoError("failed to encode PNG: " + path);
    }

    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows->data());
    png_write_end(png, nullptr);

    png_destroy_write_struct(&png, &info);
    close_file(fp);
    delete raw;
    delete rows;
}

}  // namespace fluoroforge::detail
