#include "raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace vizecg {

namespace {

constexpr double kGridGray = 0.85;

void draw_segment(EcgImage& img, int x0, int y0, int x1, int y1, int thickness, int y_min,
                  int y_max) {
    // Bresenham; every visited pixel gets a vertical span of `thickness`.
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    int x = x0, y = y0;
    const int half = (thickness - 1) / 2;
    for (;;) {
        for (int t = 0; t < thickness; ++t) {
            const int yy = std::clamp(y - half + t, y_min, y_max);
            img.at(yy, x) = 0.0;
        }
        if (x == x1 && y == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y += sy;
        }
    }
}

} // namespace

void LayoutSpec::validate() const {
    if (rows * cols != kLeadCount) {
        throw ContractError("layout: rows*cols must equal 12, got " + std::to_string(rows) + "x" +
                            std::to_string(cols));
    }
    if (rows < 1 || cols < 1) throw ContractError("layout: rows/cols must be positive");
    if (grid_spacing_px <= 0) throw ContractError("layout: grid spacing must be positive");
    if (trace_thickness_px < 1) throw ContractError("layout: trace thickness must be >= 1");
    if (margin_px < 0) throw ContractError("layout: margin must be >= 0");
    if (!(mv_per_cell_height > 0)) throw ContractError("layout: mv_per_cell_height must be positive");
}

EcgImage render_record(const EcgRecord& record, const LayoutSpec& layout, int height, int width) {
    layout.validate();
    if (height < layout.rows * 16 || width < layout.cols * 16) {
        throw DimensionError("render: image " + std::to_string(width) + "x" +
                             std::to_string(height) + " too small; need at least " +
                             std::to_string(layout.cols * 16) + "x" + std::to_string(layout.rows * 16));
    }
    if (record.t_len < 2) throw ContractError("render: record must have at least 2 samples");
    for (int l = 0; l < kLeadCount; ++l) {
        const double* s = record.lead(l);
        for (int i = 0; i < record.t_len; ++i) {
            if (!std::isfinite(s[i])) {
                throw NumericError("render: non-finite sample in lead " + std::string(lead_name(l)));
            }
        }
    }

    EcgImage img;
    img.height = height;
    img.width = width;
    img.pixels.assign(static_cast<size_t>(height) * width, 1.0);

    if (layout.draw_grid) {
        for (int y = 0; y < height; y += layout.grid_spacing_px) {
            for (int x = 0; x < width; ++x) img.at(y, x) = kGridGray;
        }
        for (int x = 0; x < width; x += layout.grid_spacing_px) {
            for (int y = 0; y < height; ++y) img.at(y, x) = kGridGray;
        }
    }

    const int margin = layout.margin_px;
    const int cell_w = (width - margin * (layout.cols + 1)) / layout.cols;
    const int cell_h = (height - margin * (layout.rows + 1)) / layout.rows;
    if (cell_w < 2 || cell_h < 2) {
        throw DimensionError("render: margins leave no room for cells");
    }

    const int t_len = record.t_len;
    for (int lead_idx = 0; lead_idx < kLeadCount; ++lead_idx) {
        const int row = lead_idx / layout.cols;
        const int col = lead_idx % layout.cols;
        const int x0 = margin + col * (cell_w + margin);
        const int y0 = margin + row * (cell_h + margin);
        const int y_max = y0 + cell_h - 1;
        const int mid_y = y0 + cell_h / 2;
        const double* samples = record.lead(lead_idx);

        int prev_x = 0, prev_y = 0;
        for (int i = 0; i < cell_w; ++i) {
            const double pos = cell_w > 1 ? static_cast<double>(i) * (t_len - 1) / (cell_w - 1) : 0.0;
            const int i0 = static_cast<int>(pos);
            const double frac = pos - i0;
            const double v = i0 + 1 < t_len ? samples[i0] * (1.0 - frac) + samples[i0 + 1] * frac
                                            : samples[i0];
            int y = mid_y - static_cast<int>(std::lround(v * cell_h / layout.mv_per_cell_height));
            y = std::clamp(y, y0, y_max);
            const int x = x0 + i;
            if (i == 0) {
                draw_segment(img, x, y, x, y, layout.trace_thickness_px, y0, y_max);
            } else {
                draw_segment(img, prev_x, prev_y, x, y, layout.trace_thickness_px, y0, y_max);
            }
            prev_x = x;
            prev_y = y;
        }
    }
    return img;
}

void write_pgm(const EcgImage& image, const std::string& path) {
    if (image.height <= 0 || image.width <= 0 ||
        image.pixels.size() != static_cast<size_t>(image.height) * image.width) {
        throw ContractError("write_pgm: image dimensions do not match pixel count");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P5\n" << image.width << " " << image.height << "\n255\n";
    std::vector<unsigned char> bytes(image.pixels.size());
    for (size_t i = 0; i < image.pixels.size(); ++i) {
        const double q = std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0);
        bytes[i] = static_cast<unsigned char>(q);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

EcgImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);

    // header tokens may be separated by whitespace and '#' comments
    auto next_token = [&in, &path]() {
        std::string tok;
        int c;
        while ((c = in.get()) != EOF) {
            if (c == '#') {
                while ((c = in.get()) != EOF && c != '\n') {
                }
                continue;
            }
            if (std::isspace(c)) {
                if (!tok.empty()) return tok;
                continue;
            }
            tok.push_back(static_cast<char>(c));
        }
        if (tok.empty()) throw FormatError("pgm: truncated header in " + path);
        return tok;
    };

    const std::string magic = next_token();
    if (magic != "P5") {
        throw FormatError("pgm: expected binary PGM magic \"P5\", got \"" + magic + "\"");
    }
    const std::string w_tok = next_token(), h_tok = next_token(), max_tok = next_token();
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(w_tok);
        h = std::stoi(h_tok);
        maxval = std::stoi(max_tok);
    } catch (const std::exception&) {
        throw FormatError("pgm: non-numeric header field");
    }
    if (w <= 0 || h <= 0) throw FormatError("pgm: invalid dimensions");
    if (maxval != 255) {
        throw FormatError("pgm: expected maxval 255, got " + std::to_string(maxval));
    }
    // exactly one whitespace byte separates the header from the payload;
    // next_token already consumed it

    std::vector<unsigned char> bytes(static_cast<size_t>(w) * h);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    const size_t got = static_cast<size_t>(in.gcount());
    if (got != bytes.size()) {
        throw FormatError("pgm: truncated payload: expected " + std::to_string(bytes.size()) +
                          " bytes, got " + std::to_string(got));
    }

    EcgImage img;
    img.height = h;
    img.width = w;
    img.pixels.resize(bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / 255.0;
    return img;
}

} // namespace vizecg
