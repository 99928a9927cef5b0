// Minimal 8-bit PNG read/write on top of libpng. Images are exchanged with
// the rest of the library as PatchTensor ([0,1] floats).
#pragma once

#include <png.h>

#include <cstdio>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tonemeter/common.hpp"
#include "tonemeter/image.hpp"

namespace tonemeter {

struct Image8 {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;  // interleaved, 3 * width * height
};

inline Image8 quantize_to_8bit(const PatchTensor& t) {
    Image8 img;
    img.width = t.width;
    img.height = t.height;
    img.rgb.resize(t.data.size());
    for (size_t i = 0; i < t.data.size(); ++i) {
        float v = t.data[i];
        v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        img.rgb[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
    return img;
}

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

inline void write_png_rgb8(const std::string& path, const Image8& img) {
    if (img.width < 1 || img.height < 1 ||
        img.rgb.size() != static_cast<size_t>(img.width) * img.height * 3) {
        throw validation_error("write_png: bad image dimensions");
    }
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw validation_error("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw validation_error("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw validation_error("libpng info init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw validation_error("libpng write error: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y) {
        rows[y] = const_cast<png_bytep>(img.rgb.data() + static_cast<size_t>(y) * img.width * 3);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline void write_png_gray8(const std::string& path, int width, int height,
                            const std::vector<uint8_t>& gray) {
    if (gray.size() != static_cast<size_t>(width) * height) {
        throw validation_error("write_png: bad mask dimensions");
    }
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw validation_error("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw validation_error("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw validation_error("libpng info init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw validation_error("libpng write error: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) {
        rows[y] = const_cast<png_bytep>(gray.data() + static_cast<size_t>(y) * width);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Reads any PNG as 8-bit RGB (palette/gray/alpha/16-bit are converted).
inline Image8 read_png_rgb8(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw validation_error("cannot open image: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw validation_error("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw validation_error("libpng info init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw validation_error("libpng read error (not a valid PNG?): " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(png);
    }
    png_read_update_info(png, info);

    Image8 img;
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.rgb.resize(static_cast<size_t>(img.width) * img.height * 3);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y) {
        rows[y] = img.rgb.data() + static_cast<size_t>(y) * img.width * 3;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline PatchTensor to_tensor(const Image8& img) {
    PatchTensor t = PatchTensor::zeros(img.height, img.width);
    for (size_t i = 0; i < img.rgb.size(); ++i) {
        t.data[i] = static_cast<float>(img.rgb[i]) / 255.0f;
    }
    return t;
}

inline PatchTensor read_image(const std::string& path) { return to_tensor(read_png_rgb8(path)); }

// Mask PNGs are grayscale; any nonzero pixel marks an excluded (lesion) pixel.
inline std::vector<uint8_t> read_mask(const std::string& path, int expect_h, int expect_w) {
    Image8 img = read_png_rgb8(path);
    if (img.height != expect_h || img.width != expect_w) {
        throw validation_error("mask size does not match image: " + path);
    }
    std::vector<uint8_t> mask(static_cast<size_t>(expect_h) * expect_w, 0);
    for (size_t i = 0; i < mask.size(); ++i) {
        mask[i] = img.rgb[i * 3] != 0 ? 1 : 0;
    }
    return mask;
}

inline void save_image(const std::string& path, const PatchTensor& t) {
    write_png_rgb8(path, quantize_to_8bit(t));
}

}  // namespace tonemeter
