#include "deco/image.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>

#include "deco/error.hpp"

namespace deco {

CropBox mask_crop_box(const Mask& mask, double margin, bool square) {
    if (margin < 0) throw std::invalid_argument("crop margin must be >= 0");
    std::size_t x_min = mask.width, y_min = mask.height, x_max = 0, y_max = 0;
    bool any = false;
    for (std::size_t y = 0; y < mask.height; ++y)
        for (std::size_t x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) {
                any = true;
                x_min = std::min(x_min, x), x_max = std::max(x_max, x);
                y_min = std::min(y_min, y), y_max = std::max(y_max, y);
            }
    if (!any) throw DataError("crop_with_mask: mask has no foreground pixels");

    auto grow = [](std::size_t lo, std::size_t hi, std::size_t pad, std::size_t limit) {
        const long a = std::max(0L, long(lo) - long(pad));
        const long b = std::min(long(limit) - 1, long(hi) + long(pad));
        return std::pair<std::size_t, std::size_t>(std::size_t(a), std::size_t(b));
    };
    const std::size_t w = x_max - x_min + 1, h = y_max - y_min + 1;
    auto [x0, x1] = grow(x_min, x_max, std::size_t(std::floor(margin * double(w) + 0.5)), mask.width);
    auto [y0, y1] = grow(y_min, y_max, std::size_t(std::floor(margin * double(h) + 0.5)), mask.height);
    if (square) {
        const std::size_t cw = x1 - x0 + 1, ch = y1 - y0 + 1;
        if (cw < ch) {
            const std::size_t d = ch - cw;
            const long left = long(x0) - long(d / 2), right = long(x1) + long(d - d / 2);
            x0 = std::size_t(std::max(0L, left)), x1 = std::size_t(std::min(long(mask.width) - 1, right));
        } else if (ch < cw) {
            const std::size_t d = cw - ch;
            const long top = long(y0) - long(d / 2), bottom = long(y1) + long(d - d / 2);
            y0 = std::size_t(std::max(0L, top)), y1 = std::size_t(std::min(long(mask.height) - 1, bottom));
        }
    }
    return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

DepthMap resize_depth(const DepthMap& depth, std::size_t target_w, std::size_t target_h) {
    if (target_w == 0 || target_h == 0) throw std::invalid_argument("resize target must be positive");
    if (depth.empty()) throw std::invalid_argument("resize of empty depth map");
    if (target_w == depth.width && target_h == depth.height) return depth;
    DepthMap out(target_w, target_h);
    const double sx = double(depth.width) / double(target_w);
    const double sy = double(depth.height) / double(target_h);
    for (std::size_t y = 0; y < target_h; ++y) {
        const double fy = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(depth.height - 1));
        const std::size_t y0 = std::size_t(fy), y1 = std::min(y0 + 1, depth.height - 1);
        const double wy = fy - double(y0);
        for (std::size_t x = 0; x < target_w; ++x) {
            const double fx = std::clamp((double(x) + 0.5) * sx - 0.5, 0.0, double(depth.width - 1));
            const std::size_t x0 = std::size_t(fx), x1 = std::min(x0 + 1, depth.width - 1);
            const double wx = fx - double(x0);
            const std::size_t xs[4] = {x0, x1, x0, x1}, ys[4] = {y0, y0, y1, y1};
            const double ws[4] = {(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy};
            double acc = 0, wsum = 0;
            for (int i = 0; i < 4; ++i) {
                const auto v = depth.at(xs[i], ys[i]);
                if (v == 0 || ws[i] == 0) continue;
                acc += ws[i] * v;
                wsum += ws[i];
            }
            out.at(x, y) = wsum > 0 ? round_to<std::uint16_t>(acc / wsum) : 0;
        }
    }
    return out;
}

Mask resize_nearest(const Mask& mask, std::size_t target_w, std::size_t target_h) {
    if (target_w == 0 || target_h == 0) throw std::invalid_argument("resize target must be positive");
    Mask out(target_w, target_h);
    for (std::size_t y = 0; y < target_h; ++y) {
        const std::size_t sy = std::min(mask.height - 1, std::size_t((double(y) + 0.5) * mask.height / target_h));
        for (std::size_t x = 0; x < target_w; ++x) {
            const std::size_t sx = std::min(mask.width - 1, std::size_t((double(x) + 0.5) * mask.width / target_w));
            out.at(x, y) = mask.at(sx, sy);
        }
    }
    return out;
}

ColorImage hconcat(const std::vector<ColorImage>& tiles, std::size_t gap, std::uint8_t fill) {
    if (tiles.empty()) return {};
    std::size_t w = 0, h = 0;
    for (const auto& t : tiles) w += t.width, h = std::max(h, t.height);
    w += gap * (tiles.size() - 1);
    ColorImage out(w, h, fill);
    std::size_t ox = 0;
    for (const auto& t : tiles) {
        for (std::size_t y = 0; y < t.height; ++y) std::copy_n(&t.at(0, y), t.width * 3, &out.at(ox, y));
        ox += t.width + gap;
    }
    return out;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct RawPng {
    std::size_t width = 0, height = 0;
    int bit_depth = 0;
    int color_type = 0;
    std::vector<std::uint8_t> bytes;  // rows packed, big-endian for 16-bit
    std::size_t row_bytes = 0;
};

std::string describe(int bit_depth, int color_type) {
    std::string kind;
    switch (color_type) {
        case PNG_COLOR_TYPE_GRAY: kind = "single-channel"; break;
        case PNG_COLOR_TYPE_GRAY_ALPHA: kind = "gray+alpha"; break;
        case PNG_COLOR_TYPE_RGB: kind = "RGB"; break;
        case PNG_COLOR_TYPE_RGB_ALPHA: kind = "RGBA"; break;
        case PNG_COLOR_TYPE_PALETTE: kind = "palette"; break;
        default: kind = "unknown";
    }
    return std::to_string(bit_depth) + "-bit " + kind;
}

void on_png_error(png_structp png, png_const_charp msg) {
    auto* sink = static_cast<std::string*>(png_get_error_ptr(png));
    if (sink) *sink = msg;
    png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

RawPng read_png(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw MissingArtifactError("image not found: " + path.string());
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw DataError("cannot open image: " + path.string());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw DataError("not a PNG file: " + path.string());

    std::string message;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, on_png_error, on_png_warning);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::bad_alloc();
    }
    RawPng raw;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("corrupt PNG " + path.string() + ": " + message);
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    raw.width = png_get_image_width(png, info);
    raw.height = png_get_image_height(png, info);
    raw.bit_depth = png_get_bit_depth(png, info);
    raw.color_type = png_get_color_type(png, info);
    if (png_get_interlace_type(png, info) != PNG_INTERLACE_NONE) png_set_interlace_handling(png);
    png_read_update_info(png, info);
    raw.row_bytes = png_get_rowbytes(png, info);
    raw.bytes.resize(raw.row_bytes * raw.height);
    rows.resize(raw.height);
    for (std::size_t y = 0; y < raw.height; ++y) rows[y] = raw.bytes.data() + y * raw.row_bytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return raw;
}

void write_png(const std::filesystem::path& path, std::size_t width, std::size_t height, int bit_depth,
               int color_type, const std::vector<std::uint8_t>& bytes, std::size_t row_bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw DataError("cannot write image: " + path.string());
    std::string message;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, on_png_error, on_png_warning);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::bad_alloc();
    }
    std::vector<png_bytep> rows(height);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("failed writing PNG " + path.string() + ": " + message);
    }
    png_init_io(png, file.get());
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), bit_depth, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < height; ++y) rows[y] = const_cast<png_bytep>(bytes.data() + y * row_bytes);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

[[noreturn]] void wrong_format(const std::filesystem::path& path, const std::string& expected, const RawPng& raw) {
    throw DataError("expected " + expected + " PNG, got " + describe(raw.bit_depth, raw.color_type) + ": " +
                    path.string());
}

}  // namespace

DepthMap load_depth(const std::filesystem::path& path) {
    RawPng raw = read_png(path);
    if (raw.bit_depth != 16 || raw.color_type != PNG_COLOR_TYPE_GRAY) wrong_format(path, "16-bit single-channel", raw);
    DepthMap d(raw.width, raw.height);
    for (std::size_t y = 0; y < raw.height; ++y)
        for (std::size_t x = 0; x < raw.width; ++x) {
            const std::uint8_t* p = raw.bytes.data() + y * raw.row_bytes + 2 * x;
            d.at(x, y) = std::uint16_t((p[0] << 8) | p[1]);
        }
    return d;
}

void save_depth(const std::filesystem::path& path, const DepthMap& depth) {
    std::vector<std::uint8_t> bytes(depth.pixels() * 2);
    for (std::size_t i = 0; i < depth.pixels(); ++i) {
        bytes[2 * i] = std::uint8_t(depth.data[i] >> 8);
        bytes[2 * i + 1] = std::uint8_t(depth.data[i] & 0xff);
    }
    write_png(path, depth.width, depth.height, 16, PNG_COLOR_TYPE_GRAY, bytes, depth.width * 2);
}

GrayImage load_gray(const std::filesystem::path& path) {
    RawPng raw = read_png(path);
    if (raw.bit_depth != 8 || raw.color_type != PNG_COLOR_TYPE_GRAY) wrong_format(path, "8-bit single-channel", raw);
    GrayImage g(raw.width, raw.height);
    for (std::size_t y = 0; y < raw.height; ++y)
        std::copy_n(raw.bytes.data() + y * raw.row_bytes, raw.width, &g.at(0, y));
    return g;
}

void save_gray(const std::filesystem::path& path, const GrayImage& img) {
    write_png(path, img.width, img.height, 8, PNG_COLOR_TYPE_GRAY, img.data, img.width);
}

ColorImage load_color(const std::filesystem::path& path) {
    RawPng raw = read_png(path);
    const bool rgb = raw.color_type == PNG_COLOR_TYPE_RGB, rgba = raw.color_type == PNG_COLOR_TYPE_RGB_ALPHA;
    if (raw.bit_depth != 8 || !(rgb || rgba)) wrong_format(path, "8-bit RGB", raw);
    const std::size_t stride = rgb ? 3 : 4;
    ColorImage c(raw.width, raw.height);
    for (std::size_t y = 0; y < raw.height; ++y)
        for (std::size_t x = 0; x < raw.width; ++x)
            for (int k = 0; k < 3; ++k) c.at(x, y, k) = raw.bytes[y * raw.row_bytes + x * stride + k];
    return c;
}

void save_color(const std::filesystem::path& path, const ColorImage& img) {
    write_png(path, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, img.data, img.width * 3);
}

Mask load_mask(const std::filesystem::path& path) {
    RawPng raw = read_png(path);
    if (raw.color_type != PNG_COLOR_TYPE_GRAY || (raw.bit_depth != 8 && raw.bit_depth != 1))
        wrong_format(path, "8-bit or 1-bit single-channel", raw);
    Mask m(raw.width, raw.height);
    for (std::size_t y = 0; y < raw.height; ++y)
        for (std::size_t x = 0; x < raw.width; ++x) {
            const std::uint8_t* row = raw.bytes.data() + y * raw.row_bytes;
            const bool on = raw.bit_depth == 8 ? row[x] != 0 : ((row[x / 8] >> (7 - x % 8)) & 1) != 0;
            m.at(x, y) = on ? 255 : 0;
        }
    return m;
}

}  // namespace deco
