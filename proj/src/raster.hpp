#pragma once

#include <string>
#include <vector>

#include "ecg_data.hpp"

namespace vizecg {

// Grayscale raster in [0,1]; 0 = black ink, 1 = white paper.
struct EcgImage {
    int height = 0;
    int width = 0;
    std::vector<double> pixels; // row-major

    double& at(int r, int c) { return pixels[static_cast<size_t>(r) * width + c]; }
    double at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
};

struct LayoutSpec {
    int rows = 6;
    int cols = 2;
    int margin_px = 8;
    bool draw_grid = false;
    int grid_spacing_px = 16;
    int trace_thickness_px = 1;
    double mv_per_cell_height = 3.0;

    void validate() const;
};

// Deterministic printed-ECG rendering: leads laid out row-major
// (I, II, III, aVR, aVL, aVF, V1..V6), each lead linearly resampled to its
// cell width, amplitudes clamped to the cell, traces drawn with integer line
// rasterization over white (optionally over a light-gray grid).
EcgImage render_record(const EcgRecord& record, const LayoutSpec& layout, int height, int width);

// Binary PGM (P5), maxval 255.
void write_pgm(const EcgImage& image, const std::string& path);
EcgImage read_pgm(const std::string& path);

} // namespace vizecg
