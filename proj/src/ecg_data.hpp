#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "errors.hpp"

namespace vizecg {

inline constexpr int kLeadCount = 12;
inline constexpr int kClassCount = 6;

// Label bit positions, bit 0 = 1dAVb ... bit 5 = ST.
enum EcgClass : int {
    kFirstDegreeAvBlock = 0,
    kRightBundleBranchBlock = 1,
    kLeftBundleBranchBlock = 2,
    kSinusBradycardia = 3,
    kAtrialFibrillation = 4,
    kSinusTachycardia = 5,
};

const char* class_name(int index); // "1dAVb", "RBBB", "LBBB", "SB", "AF", "ST"
const char* lead_name(int index);  // "I", "II", ..., "V6"
int class_index(const std::string& name); // -1 if unknown

struct EcgRecord {
    int t_len = 4096;
    double sample_rate_hz = 400.0;
    std::vector<double> samples; // 12 x t_len, lead-major
    uint8_t label_mask = 0;

    double* lead(int l) { return &samples[static_cast<size_t>(l) * t_len]; }
    const double* lead(int l) const { return &samples[static_cast<size_t>(l) * t_len]; }
    bool label(int c) const { return (label_mask >> c) & 1u; }
    void set_label(int c, bool v) {
        if (v)
            label_mask |= static_cast<uint8_t>(1u << c);
        else
            label_mask &= static_cast<uint8_t>(~(1u << c));
    }
    std::array<bool, kClassCount> labels() const {
        std::array<bool, kClassCount> out{};
        for (int c = 0; c < kClassCount; ++c) out[c] = label(c);
        return out;
    }
};

// Knobs of the synthetic PQRST generator. Each abnormality gets one
// dedicated signature so classes stay machine-separable.
struct SynthConfig {
    int t_len = 4096;
    double sample_rate_hz = 400.0;

    double hr_normal_lo = 65.0, hr_normal_hi = 95.0;
    double hr_sb_lo = 40.0, hr_sb_hi = 55.0;    // sinus bradycardia
    double hr_st_lo = 110.0, hr_st_hi = 150.0;  // sinus tachycardia

    double qrs_mult_rbbb = 2.4;
    double qrs_mult_lbbb = 2.6;

    double pr_base_s = 0.15;
    double pr_offset_avb_s = 0.25; // 1dAVb: PR = base + offset, well above 200 ms

    double sinus_rr_jitter = 0.03;
    double af_rr_jitter = 0.22;      // RR coefficient of variation under AF
    double af_p_suppression = 0.05;  // P-wave amplitude multiplier under AF

    double noise_mv = 0.02;

    std::array<double, kClassCount> prevalence = {0.18, 0.18, 0.18, 0.18, 0.18, 0.18};
    double co_occurrence = 0.15;

    void validate() const;
};

struct SplitIndices {
    std::vector<int> train, val, test;
};

struct Dataset {
    std::vector<EcgRecord> records;
    uint64_t split_seed = 42;
    double train_frac = 0.70, val_frac = 0.15, test_frac = 0.15;

    int size() const { return static_cast<int>(records.size()); }
    void set_split(double train, double val, double test, uint64_t seed);
    // Deterministic partition: same (split_seed, n) -> same indices.
    SplitIndices split() const;
};

// Removes the least-squares linear trend per lead, then the residual mean.
EcgRecord detrend(const EcgRecord& record);

// Deterministic for (config, labels, seed); samples are exactly
// f32-representable so disk round-trips are lossless.
EcgRecord generate_record(const SynthConfig& cfg, const std::array<bool, kClassCount>& labels,
                          uint64_t seed);

Dataset generate_dataset(const SynthConfig& cfg, int n, uint64_t seed);

// Binary dataset container: magic "VZEC", u32 version=1, u32 n_records,
// u32 n_leads=12, u32 T, then per record 12*T little-endian f32 samples
// plus one u8 label bitmask.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

// Single record from a 12-column CSV (header row of lead names, one sample
// per data row, no resampling).
EcgRecord import_csv(const std::string& path);

} // namespace vizecg
