// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "canonsplat/common.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

// 8-bit PNG (color, mapped to [0, 1]) and PFM (32-bit float) file I/O.
// Linking requires libpng.
namespace canonsplat::io {

inline Image
read_png(const std::filesystem::path &path) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&img, path.c_str()) == 0) {
        fail(ErrorKind::Io, "cannot read PNG " + path.string() + ": " + img.message);
    }
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr) == 0) {
        png_image_free(&img);
        fail(ErrorKind::Parse, "cannot decode PNG " + path.string() + ": " + img.message);
    }
    Image out(static_cast<int>(img.width), static_cast<int>(img.height), 3);
    for (std::size_t i = 0; i < buf.size(); ++i) {
        out.data()[i] = buf[i] / 255.0;
    }
    return out;
}

/// Values are clamped to [0, 1] and rounded to 8 bits. Single-channel images
/// are written as grayscale.
inline void
write_png(const Image &image, const std::filesystem::path &path) {
    require(image.channels() == 1 || image.channels() == 3, "write_png: need 1 or 3 channels");
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width());
    img.height = static_cast<png_uint_32>(image.height());
    img.format = image.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(image.size());
    for (std::size_t i = 0; i < buf.size(); ++i) {
        buf[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.data()[i], 0.0, 1.0) * 255.0));
    }
    if (png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr) == 0) {
        fail(ErrorKind::Io, "cannot write PNG " + path.string() + ": " + img.message);
    }
}

/// 8-bit quantization as applied by write_png.
inline Image
quantize8(const Image &image) {
    Image out = image;
    for (double &v : out.data()) {
        v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    }
    return out;
}

/// PFM: "Pf" (1 channel) or "PF" (3 channels), negative scale for
/// little-endian, rows stored bottom to top.
inline void
write_pfm(const Image &image, const std::filesystem::path &path) {
    require(image.channels() == 1 || image.channels() == 3, "write_pfm: need 1 or 3 channels");
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        fail(ErrorKind::Io, "cannot open for writing: " + path.string());
    }
    f << (image.channels() == 3 ? "PF" : "Pf") << "\n" << image.width() << " " << image.height() << "\n-1.0\n";
    std::vector<float> row(static_cast<std::size_t>(image.width()) * image.channels());
    for (int y = image.height() - 1; y >= 0; --y) {
        for (int x = 0; x < image.width(); ++x) {
            for (int c = 0; c < image.channels(); ++c) {
                row[static_cast<std::size_t>(x) * image.channels() + c] = static_cast<float>(image(x, y, c));
            }
        }
        f.write(reinterpret_cast<const char *>(row.data()), static_cast<std::streamsize>(row.size() * 4));
    }
    if (!f) {
        fail(ErrorKind::Io, "write failed: " + path.string());
    }
}

inline Image
read_pfm(const std::filesystem::path &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        fail(ErrorKind::Io, "cannot open PFM " + path.string());
    }
    std::string magic;
    int w = 0, h = 0;
    double scale = 0.0;
    f >> magic >> w >> h >> scale;
    f.get();
    if ((magic != "PF" && magic != "Pf") || w <= 0 || h <= 0 || scale == 0.0 || !f) {
        fail(ErrorKind::Parse, "malformed PFM header in " + path.string());
    }
    const int channels = magic == "PF" ? 3 : 1;
    const bool little = scale < 0.0;
    Image out(w, h, channels);
    std::vector<std::uint32_t> row(static_cast<std::size_t>(w) * channels);
    for (int y = h - 1; y >= 0; --y) {
        f.read(reinterpret_cast<char *>(row.data()), static_cast<std::streamsize>(row.size() * 4));
        if (!f) {
            fail(ErrorKind::Parse, "truncated PFM payload in " + path.string());
        }
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < channels; ++c) {
                std::uint32_t bits = row[static_cast<std::size_t>(x) * channels + c];
                if (little != (std::endian::native == std::endian::little)) {
                    bits = __builtin_bswap32(bits);
                }
                out(x, y, c) = std::bit_cast<float>(bits);
            }
        }
    }
    return out;
}

} // namespace canonsplat::io
