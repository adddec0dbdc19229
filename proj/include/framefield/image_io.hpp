#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include "geometry.hpp"

namespace ff {

// 8-bit emission rule shared by every image writer: round(clamp(v,0,1)*255).
inline uint8_t quantize8(double v) {
    return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

namespace detail {

struct FileCloser {
    std::FILE* f = nullptr;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

inline void check_savable(const Image& img, const std::string& path) {
    if (img.height < 1 || img.width < 1 || (img.channels != 1 && img.channels != 3))
        throw IoError("save: image must be 1- or 3-channel and non-empty, got [" +
                      std::to_string(img.channels) + "," + std::to_string(img.height) + "," +
                      std::to_string(img.width) + "] for " + path);
}

} // namespace detail

inline void save_png(const std::string& path, const Image& img) {
    detail::check_savable(img, path);
    detail::FileCloser fc{std::fopen(path.c_str(), "wb")};
    if (!fc.f) throw IoError("save_png: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("save_png: libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("save_png: write failed for " + path);
    }
    png_init_io(png, fc.f);
    const int color = img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<uint8_t> row(static_cast<size_t>(img.width * img.channels));
    for (int64_t i = 0; i < img.height; ++i) {
        for (int64_t j = 0; j < img.width; ++j)
            for (int64_t c = 0; c < img.channels; ++c)
                row[static_cast<size_t>(j * img.channels + c)] = quantize8(img.at(c, i, j));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Always yields a 3-channel image in [0,1]; palette, gray and 16-bit inputs
// are expanded, alpha is dropped.
inline Image load_png(const std::string& path) {
    detail::FileCloser fc{std::fopen(path.c_str(), "rb")};
    if (!fc.f) throw IoError("load_png: cannot open " + path);
    uint8_t sig[8];
    if (std::fread(sig, 1, 8, fc.f) != 8 || png_sig_cmp(sig, 0, 8))
        throw IoError("load_png: not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("load_png: libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("load_png: read failed for " + path);
    }
    png_init_io(png, fc.f);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int64_t w = png_get_image_width(png, info);
    const int64_t h = png_get_image_height(png, info);
    if (png_get_channels(png, info) != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("load_png: unsupported channel layout in " + path);
    }

    Image img(3, h, w);
    std::vector<uint8_t> row(static_cast<size_t>(w * 3));
    for (int64_t i = 0; i < h; ++i) {
        png_read_row(png, row.data(), nullptr);
        for (int64_t j = 0; j < w; ++j)
            for (int64_t c = 0; c < 3; ++c)
                img.at(c, i, j) = row[static_cast<size_t>(j * 3 + c)] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline void save_ppm(const std::string& path, const Image& img) {
    detail::check_savable(img, path);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_ppm: cannot open " + path);
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    for (int64_t i = 0; i < img.height; ++i)
        for (int64_t j = 0; j < img.width; ++j)
            for (int64_t c = 0; c < 3; ++c) {
                // gray images replicate their single channel
                const int64_t cc = img.channels == 3 ? c : 0;
                os.put(static_cast<char>(quantize8(img.at(cc, i, j))));
            }
    if (!os) throw IoError("save_ppm: write failed for " + path);
}

inline Image load_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_ppm: cannot open " + path);
    auto next_token = [&]() -> std::string {
        std::string tok;
        int ch;
        while ((ch = is.get()) != EOF) {
            if (ch == '#') { // comment to end of line
                while ((ch = is.get()) != EOF && ch != '\n') {
                }
                continue;
            }
            if (std::isspace(ch)) {
                if (!tok.empty()) return tok;
                continue;
            }
            tok.push_back(static_cast<char>(ch));
        }
        return tok;
    };
    if (next_token() != "P6") throw IoError("load_ppm: not a P6 file: " + path);
    int64_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoll(next_token());
        h = std::stoll(next_token());
        maxval = std::stoll(next_token());
    } catch (const std::exception&) {
        throw IoError("load_ppm: malformed header in " + path);
    }
    if (w < 1 || h < 1 || maxval != 255)
        throw IoError("load_ppm: unsupported header (need maxval 255) in " + path);
    // the single whitespace after maxval was consumed by the tokenizer
    Image img(3, h, w);
    std::vector<char> buf(static_cast<size_t>(w * h * 3));
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (is.gcount() != static_cast<std::streamsize>(buf.size()))
        throw IoError("load_ppm: truncated pixel data in " + path);
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
            for (int64_t c = 0; c < 3; ++c)
                img.at(c, i, j) = static_cast<uint8_t>(buf[static_cast<size_t>((i * w + j) * 3 + c)]) / 255.0;
    return img;
}

namespace detail {

inline std::string lower_ext(const std::string& path) {
    const auto dot = path.find_last_of('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot);
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

} // namespace detail

inline void save_image(const std::string& path, const Image& img) {
    const auto ext = detail::lower_ext(path);
    if (ext == ".png") return save_png(path, img);
    if (ext == ".ppm") return save_ppm(path, img);
    throw IoError("save_image: unsupported extension '" + ext + "' for " + path);
}

inline Image load_image(const std::string& path) {
    const auto ext = detail::lower_ext(path);
    if (ext == ".png") return load_png(path);
    if (ext == ".ppm") return load_ppm(path);
    throw IoError("load_image: unsupported extension '" + ext + "' for " + path);
}

} // namespace ff
