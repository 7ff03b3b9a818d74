#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "pyrocc/tensor.hpp"

namespace pyrocc {

struct Rgb {
    std::uint8_t r, g, b;
};

/// Plain interleaved RGB8 raster, top-left origin.
struct Image8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // 3 bytes per pixel, row-major

    Image8() = default;
    Image8(int w, int h, Rgb fill = {0, 0, 0}) : width(w), height(h), pixels(3u * w * h) {
        for (int i = 0; i < w * h; ++i) set_index(i, fill);
    }

    void set(int x, int y, Rgb c) {
        if (x < 0 || y < 0 || x >= width || y >= height) return;
        set_index(y * width + x, c);
    }

    Rgb get(int x, int y) const {
        std::size_t i = 3u * (static_cast<std::size_t>(y) * width + x);
        return {pixels[i], pixels[i + 1], pixels[i + 2]};
    }

private:
    void set_index(int i, Rgb c) {
        pixels[3u * i] = c.r;
        pixels[3u * i + 1] = c.g;
        pixels[3u * i + 2] = c.b;
    }
};

/// Writes an uncompressed 24-bit BMP (BGR, bottom-up rows).
inline void write_bmp(const std::string& path, const Image8& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_bmp: cannot open " + path);
    int row_bytes = (3 * img.width + 3) / 4 * 4;
    std::uint32_t data_size = static_cast<std::uint32_t>(row_bytes) * img.height;
    std::uint32_t file_size = 54 + data_size;
    auto put_u16 = [&](std::uint16_t v) { out.put(static_cast<char>(v)); out.put(static_cast<char>(v >> 8)); };
    auto put_u32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.put(static_cast<char>(v >> (8 * i)));
    };
    out.put('B');
    out.put('M');
    put_u32(file_size);
    put_u16(0);
    put_u16(0);
    put_u32(54);
    put_u32(40);
    put_u32(static_cast<std::uint32_t>(img.width));
    put_u32(static_cast<std::uint32_t>(img.height));
    put_u16(1);
    put_u16(24);
    put_u32(0);
    put_u32(data_size);
    put_u32(2835);
    put_u32(2835);
    put_u32(0);
    put_u32(0);
    std::vector<char> row(row_bytes, 0);
    for (int y = img.height - 1; y >= 0; --y) {
        for (int x = 0; x < img.width; ++x) {
            Rgb c = img.get(x, y);
            row[3 * x] = static_cast<char>(c.b);
            row[3 * x + 1] = static_cast<char>(c.g);
            row[3 * x + 2] = static_cast<char>(c.r);
        }
        out.write(row.data(), row_bytes);
    }
    if (!out) throw std::runtime_error("write_bmp: write failed: " + path);
}

/// Bresenham segment.
inline void draw_line(Image8& img, int x0, int y0, int x1, int y1, Rgb color) {
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        img.set(x0, y0, color);
        if (x0 == x1 && y0 == y1) break;
        int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

/// Renders a camera image tensor (3 x H x W, uint8) for inspection.
inline Image8 tensor_to_image(const Tensor<std::uint8_t>& t) {
    Image8 img(static_cast<int>(t.dim(2)), static_cast<int>(t.dim(1)));
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            img.set(x, y, {t(0, y, x), t(1, y, x), t(2, y, x)});
    return img;
}

/// Line plot of a precision-recall curve on fixed [0,1]^2 axes: recall on x,
/// precision on y.
inline Image8 render_pr_plot(const std::vector<std::pair<double, double>>& recall_precision,
                             Rgb curve_color = {178, 34, 34}) {
    const int size = 480, margin = 40;
    Image8 img(size, size, {255, 255, 255});
    const int lo = margin, hi = size - margin;
    auto to_px = [&](double v) { return lo + static_cast<int>((hi - lo) * v + 0.5); };
    Rgb axis{30, 30, 30}, grid{215, 215, 215};
    for (int i = 1; i <= 4; ++i) {
        int p = lo + (hi - lo) * i / 5;
        draw_line(img, p, lo, p, hi, grid);
        draw_line(img, lo, p, hi, p, grid);
    }
    draw_line(img, lo, hi, hi, hi, axis);  // x axis (recall)
    draw_line(img, lo, lo, lo, hi, axis);  // y axis (precision)
    bool has_prev = false;
    int px = 0, py = 0;
    for (const auto& [recall, precision] : recall_precision) {
        int x = to_px(recall);
        int y = hi - (to_px(precision) - lo);
        if (has_prev) draw_line(img, px, py, x, y, curve_color);
        px = x;
        py = y;
        has_prev = true;
    }
    return img;
}

}  // namespace pyrocc
