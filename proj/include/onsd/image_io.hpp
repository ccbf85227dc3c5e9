#pragma once

// 8-bit grayscale image files: binary/ASCII PGM and PNG (via libpng).
// Masks are read as raw sample values (palette indices or gray levels),
// frames as gray intensities.

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "onsd/error.hpp"
#include "onsd/imaging.hpp"

namespace onsd {

struct Gray8Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // row-major
};

namespace detail {

struct PngReadState {
    Gray8Image image;
    std::vector<png_bytep> rows;
    std::string error;
};

inline void png_error_handler(png_structp png, png_const_charp msg) {
    auto* state = static_cast<PngReadState*>(png_get_error_ptr(png));
    if (state) state->error = msg ? msg : "libpng error";
    png_longjmp(png, 1);
}

inline void png_warning_handler(png_structp, png_const_charp) {}

// No objects with non-trivial destructors live in this frame across setjmp.
inline bool png_read_into(std::FILE* fp, PngReadState* state, bool raw_values) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, state, png_error_handler, png_warning_handler);
    if (!png) {
        state->error = "cannot allocate png reader";
        return false;
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        state->error = "cannot allocate png info";
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);

    if (raw_values) {
        if (color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY) {
            state->error = "mask png must be grayscale or palette";
            png_destroy_read_struct(&png, &info, nullptr);
            return false;
        }
        if (depth == 16) {
            state->error = "16-bit mask png not supported";
            png_destroy_read_struct(&png, &info, nullptr);
            return false;
        }
        if (depth < 8) png_set_packing(png);
    } else {
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (depth == 16) png_set_strip_16(png);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        if (color == PNG_COLOR_TYPE_PALETTE || (color & PNG_COLOR_MASK_COLOR))
            png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    }
    png_read_update_info(png, info);
    if (png_get_rowbytes(png, info) != w) {
        state->error = "unexpected png row layout";
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    state->image.width = static_cast<int>(w);
    state->image.height = static_cast<int>(h);
    state->image.data.resize(static_cast<std::size_t>(w) * h);
    state->rows.resize(h);
    for (png_uint_32 r = 0; r < h; ++r) state->rows[r] = state->image.data.data() + static_cast<std::size_t>(r) * w;
    png_read_image(png, state->rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

struct PngWriteState {
    std::vector<png_bytep> rows;
    std::string error;
};

inline bool png_write_from(std::FILE* fp, const Gray8Image* img, PngWriteState* state) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, state, png_error_handler, png_warning_handler);
    if (!png) return false;
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        return false;
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img->width), static_cast<png_uint_32>(img->height), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, state->rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};

inline std::string lower_extension(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return ext;
}

inline void skip_pgm_space(std::istream& in) {
    while (true) {
        const int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}

}  // namespace detail

inline Gray8Image read_png(const std::filesystem::path& path, bool raw_values) {
    std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw Error("cannot open " + path.string());
    detail::PngReadState state;
    if (!detail::png_read_into(fp.get(), &state, raw_values))
        throw Error("png read failed for " + path.string() + ": " + state.error);
    return std::move(state.image);
}

inline void write_png(const std::filesystem::path& path, const Gray8Image& img) {
    std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw Error("cannot write " + path.string());
    detail::PngWriteState state;
    state.rows.resize(static_cast<std::size_t>(img.height));
    auto* base = const_cast<std::uint8_t*>(img.data.data());
    for (int r = 0; r < img.height; ++r) state.rows[r] = base + static_cast<std::size_t>(r) * img.width;
    if (!detail::png_write_from(fp.get(), &img, &state)) throw Error("png write failed for " + path.string());
}

inline Gray8Image read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P5" && magic != "P2") throw Error("not a PGM file: " + path.string());
    int w = 0, h = 0, maxval = 0;
    detail::skip_pgm_space(in);
    in >> w;
    detail::skip_pgm_space(in);
    in >> h;
    detail::skip_pgm_space(in);
    in >> maxval;
    if (!in || w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw Error("unsupported PGM header: " + path.string());
    Gray8Image img{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h)};
    if (magic == "P5") {
        in.get();  // single whitespace after maxval
        in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
        if (in.gcount() != static_cast<std::streamsize>(img.data.size())) throw Error("truncated PGM: " + path.string());
    } else {
        for (auto& v : img.data) {
            int x = 0;
            if (!(in >> x) || x < 0 || x > maxval) throw Error("bad PGM sample: " + path.string());
            v = static_cast<std::uint8_t>(x);
        }
    }
    if (maxval != 255)
        for (auto& v : img.data) v = static_cast<std::uint8_t>(std::lround(v * 255.0 / maxval));
    return img;
}

inline void write_pgm(const std::filesystem::path& path, const Gray8Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
}

/// Frame loader: .pgm or .png, converted to intensities with the given spacing.
inline Raster read_frame(const std::filesystem::path& path, Spacing spacing) {
    const auto ext = detail::lower_extension(path);
    Gray8Image img;
    if (ext == ".pgm") img = read_pgm(path);
    else if (ext == ".png") img = read_png(path, false);
    else throw Error("unsupported frame format: " + path.string());
    std::vector<double> px(img.data.begin(), img.data.end());
    return Raster(img.width, img.height, spacing, std::move(px));
}

/// Intensities are rounded and clipped to 8 bits.
inline Gray8Image to_gray8(const Raster& r) {
    Gray8Image img{r.width(), r.height(), {}};
    img.data.reserve(r.pixels().size());
    for (double v : r.pixels()) img.data.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)));
    return img;
}

inline void write_frame(const std::filesystem::path& path, const Raster& r) {
    const auto ext = detail::lower_extension(path);
    if (ext == ".png") write_png(path, to_gray8(r));
    else write_pgm(path, to_gray8(r));
}

inline LabelMask read_label_mask(const std::filesystem::path& path) {
    Gray8Image img = read_png(path, true);
    for (auto v : img.data)
        if (v > 2) throw Error("invalid label");
    return LabelMask(img.width, img.height, std::move(img.data));
}

inline void write_label_mask(const std::filesystem::path& path, const LabelMask& m) {
    Gray8Image img{m.width(), m.height(), std::vector<std::uint8_t>(m.labels().begin(), m.labels().end())};
    write_png(path, img);
}

}  // namespace onsd
