#include "ecg_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "rng.hpp"

namespace vizecg {

namespace {

const char* const kClassNames[kClassCount] = {"1dAVb", "RBBB", "LBBB", "SB", "AF", "ST"};
const char* const kLeadNames[kLeadCount] = {"I",  "II", "III", "aVR", "aVL", "aVF",
                                            "V1", "V2", "V3",  "V4",  "V5",  "V6"};

// Fixed per-lead projection gains for a normal electrical axis.
constexpr double kQrsGain[kLeadCount] = {0.75, 1.10, 0.50, -0.90, 0.30, 0.80,
                                         -0.40, -0.10, 0.35, 0.90, 1.15, 1.00};
constexpr double kPGain[kLeadCount] = {0.60, 1.00, 0.45, -0.80, 0.25, 0.70,
                                       0.35, 0.45, 0.50, 0.55, 0.60, 0.55};
constexpr double kTGain[kLeadCount] = {0.70, 1.00, 0.40, -0.80, 0.25, 0.75,
                                       -0.25, 0.15, 0.45, 0.85, 1.00, 0.90};

struct Wave {
    double offset_s; // center relative to the R peak
    double amp_mv;
    double sigma_s;
    int gain_kind; // 0 = P, 1 = QRS, 2 = T
};

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void write_u32(std::ofstream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::ifstream& in, size_t& offset, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) {
        throw FormatError(std::string("dataset: truncated while reading ") + what +
                          " at byte offset " + std::to_string(offset));
    }
    offset += 4;
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

} // namespace

const char* class_name(int index) { return kClassNames[index]; }
const char* lead_name(int index) { return kLeadNames[index]; }

int class_index(const std::string& name) {
    for (int c = 0; c < kClassCount; ++c) {
        if (name == kClassNames[c]) return c;
    }
    // accept lowercase aliases for CLI convenience
    std::string lower;
    for (char ch : name) lower.push_back(static_cast<char>(std::tolower(ch)));
    const char* aliases[kClassCount] = {"1davb", "rbbb", "lbbb", "sb", "af", "st"};
    for (int c = 0; c < kClassCount; ++c) {
        if (lower == aliases[c]) return c;
    }
    return -1;
}

void SynthConfig::validate() const {
    if (t_len < 2) throw ContractError("synth config: t_len must be >= 2");
    if (sample_rate_hz <= 0) throw ContractError("synth config: sample rate must be positive");
    auto check_range = [](double lo, double hi, const char* what) {
        if (!(lo > 0) || !(hi >= lo)) {
            throw ContractError(std::string("synth config: empty or invalid range for ") + what);
        }
    };
    check_range(hr_normal_lo, hr_normal_hi, "normal heart rate");
    check_range(hr_sb_lo, hr_sb_hi, "SB heart rate");
    check_range(hr_st_lo, hr_st_hi, "ST heart rate");
    for (double p : prevalence) {
        if (p < 0.0 || p > 1.0) throw ContractError("synth config: prevalence must be in [0,1]");
    }
    if (co_occurrence < 0.0 || co_occurrence > 1.0) {
        throw ContractError("synth config: co_occurrence must be in [0,1]");
    }
    if (qrs_mult_rbbb < 1.0 || qrs_mult_lbbb < 1.0) {
        throw ContractError("synth config: QRS width multipliers must be >= 1");
    }
    if (noise_mv < 0.0) throw ContractError("synth config: noise amplitude must be >= 0");
}

void Dataset::set_split(double train, double val, double test, uint64_t seed) {
    if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-6) {
        throw ContractError("split fractions must be non-negative and sum to 1");
    }
    train_frac = train;
    val_frac = val;
    test_frac = test;
    split_seed = seed;
}

SplitIndices Dataset::split() const {
    const int n = size();
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng rng(mix_seed(split_seed, 0xec9));
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.next_below(static_cast<uint64_t>(i) + 1));
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    const int n_train = std::min(n, static_cast<int>(std::llround(train_frac * n)));
    const int n_val = std::min(n - n_train, static_cast<int>(std::llround(val_frac * n)));
    SplitIndices out;
    out.train.assign(order.begin(), order.begin() + n_train);
    out.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    out.test.assign(order.begin() + n_train + n_val, order.end());
    return out;
}

EcgRecord detrend(const EcgRecord& record) {
    if (record.t_len < 2) throw ContractError("detrend: record must have at least 2 samples");
    EcgRecord out = record;
    const int t = record.t_len;
    const double t_mean = (t - 1) / 2.0;
    double denom = 0.0;
    for (int i = 0; i < t; ++i) {
        const double d = i - t_mean;
        denom += d * d;
    }
    for (int l = 0; l < kLeadCount; ++l) {
        double* y = out.lead(l);
        double y_mean = 0.0;
        for (int i = 0; i < t; ++i) y_mean += y[i];
        y_mean /= t;
        double num = 0.0;
        for (int i = 0; i < t; ++i) num += (i - t_mean) * (y[i] - y_mean);
        const double slope = num / denom;
        for (int i = 0; i < t; ++i) y[i] -= y_mean + slope * (i - t_mean);
        // residual mean is ~0 already; remove the floating-point leftover too
        double resid = 0.0;
        for (int i = 0; i < t; ++i) resid += y[i];
        resid /= t;
        for (int i = 0; i < t; ++i) y[i] -= resid;
    }
    return out;
}

EcgRecord generate_record(const SynthConfig& cfg, const std::array<bool, kClassCount>& labels,
                          uint64_t seed) {
    cfg.validate();
    if (labels[kSinusBradycardia] && labels[kSinusTachycardia]) {
        throw ContractError("generate_record: SB and ST are a contradictory label combination");
    }

    Rng rng(mix_seed(seed, 0x5ca1ab1e));

    double hr_lo = cfg.hr_normal_lo, hr_hi = cfg.hr_normal_hi;
    if (labels[kSinusBradycardia]) {
        hr_lo = cfg.hr_sb_lo;
        hr_hi = cfg.hr_sb_hi;
    } else if (labels[kSinusTachycardia]) {
        hr_lo = cfg.hr_st_lo;
        hr_hi = cfg.hr_st_hi;
    }
    const double heart_rate = rng.uniform(hr_lo, hr_hi);
    const double rr_mean = 60.0 / heart_rate;

    const double pr = cfg.pr_base_s + (labels[kFirstDegreeAvBlock] ? cfg.pr_offset_avb_s : 0.0);
    double qrs_width = 1.0;
    if (labels[kRightBundleBranchBlock]) qrs_width = std::max(qrs_width, cfg.qrs_mult_rbbb);
    if (labels[kLeftBundleBranchBlock]) qrs_width = std::max(qrs_width, cfg.qrs_mult_lbbb);
    const double p_amp_mult = labels[kAtrialFibrillation] ? cfg.af_p_suppression : 1.0;
    const double rr_jitter = labels[kAtrialFibrillation] ? cfg.af_rr_jitter : cfg.sinus_rr_jitter;

    // Lead gains, with QRS polarity flipped in the affected precordial zone.
    double qrs_gain[kLeadCount];
    for (int l = 0; l < kLeadCount; ++l) qrs_gain[l] = kQrsGain[l];
    if (labels[kRightBundleBranchBlock]) {
        for (int l = 6; l <= 8; ++l) qrs_gain[l] *= -1.2; // V1-zone
    }
    if (labels[kLeftBundleBranchBlock]) {
        for (int l = 9; l <= 11; ++l) qrs_gain[l] *= -1.2; // V5-zone
    }

    const double duration = cfg.t_len / cfg.sample_rate_hz;

    struct Beat {
        double center;
        double rr_next;
    };
    std::vector<Beat> beats;
    double t = 0.20 + rng.next_double() * 0.15 * rr_mean;
    while (t < duration + 0.5) {
        const double jitter = std::clamp(1.0 + rr_jitter * rng.next_gaussian(), 0.5, 1.7);
        const double rr = rr_mean * jitter;
        beats.push_back({t, rr});
        t += rr;
    }

    EcgRecord rec;
    rec.t_len = cfg.t_len;
    rec.sample_rate_hz = cfg.sample_rate_hz;
    rec.samples.assign(static_cast<size_t>(kLeadCount) * cfg.t_len, 0.0);
    for (int c = 0; c < kClassCount; ++c) rec.set_label(c, labels[c]);

    const double dt = 1.0 / cfg.sample_rate_hz;
    for (int l = 0; l < kLeadCount; ++l) {
        double* samples = rec.lead(l);
        for (const Beat& beat : beats) {
            const Wave waves[5] = {
                {-pr, 0.22 * p_amp_mult, 0.030, 0},
                {-0.035 * qrs_width, -0.12, 0.011 * qrs_width, 1},
                {0.0, 1.10, 0.013 * qrs_width, 1},
                {0.035 * qrs_width, -0.22, 0.012 * qrs_width, 1},
                {0.30 * std::sqrt(beat.rr_next / 0.8), 0.28, 0.055, 2},
            };
            for (const Wave& w : waves) {
                const double gain = w.gain_kind == 0   ? kPGain[l]
                                    : w.gain_kind == 1 ? qrs_gain[l]
                                                       : kTGain[l];
                const double amp = w.amp_mv * gain;
                const double center = beat.center + w.offset_s;
                const double window = 4.5 * w.sigma_s;
                const int i_lo = std::max(0, static_cast<int>(std::ceil((center - window) / dt)));
                const int i_hi =
                    std::min(cfg.t_len - 1, static_cast<int>(std::floor((center + window) / dt)));
                const double inv_two_sigma2 = 1.0 / (2.0 * w.sigma_s * w.sigma_s);
                for (int i = i_lo; i <= i_hi; ++i) {
                    const double d = i * dt - center;
                    samples[i] += amp * std::exp(-d * d * inv_two_sigma2);
                }
            }
        }
    }
    if (cfg.noise_mv > 0.0) {
        for (auto& s : rec.samples) s += cfg.noise_mv * rng.next_gaussian();
    }
    for (auto& s : rec.samples) s = quantize_f32(s);
    return rec;
}

Dataset generate_dataset(const SynthConfig& cfg, int n, uint64_t seed) {
    cfg.validate();
    if (n < 1) throw ContractError("generate_dataset: n must be >= 1");
    Dataset ds;
    ds.records.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const uint64_t record_seed = mix_seed(seed, static_cast<uint64_t>(i));
        Rng label_rng(mix_seed(record_seed, 0x1abe15));
        std::array<bool, kClassCount> labels{};
        for (int c = 0; c < kClassCount; ++c) labels[c] = label_rng.next_double() < cfg.prevalence[c];
        if (labels[kSinusBradycardia] && labels[kSinusTachycardia]) {
            const bool keep_sb = label_rng.next_double() < 0.5;
            labels[kSinusBradycardia] = keep_sb;
            labels[kSinusTachycardia] = !keep_sb;
        }
        bool any = false;
        for (bool b : labels) any = any || b;
        if (any && label_rng.next_double() < cfg.co_occurrence) {
            // promote one absent, non-contradictory label
            std::vector<int> candidates;
            for (int c = 0; c < kClassCount; ++c) {
                if (labels[c]) continue;
                if (c == kSinusBradycardia && labels[kSinusTachycardia]) continue;
                if (c == kSinusTachycardia && labels[kSinusBradycardia]) continue;
                candidates.push_back(c);
            }
            if (!candidates.empty()) {
                const size_t pick = label_rng.next_below(candidates.size());
                labels[static_cast<size_t>(candidates[pick])] = true;
            }
        }
        ds.records.push_back(generate_record(cfg, labels, record_seed));
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    if (ds.records.empty()) throw ContractError("save_dataset: dataset is empty");
    const int t = ds.records.front().t_len;
    for (const auto& r : ds.records) {
        if (r.t_len != t) throw ContractError("save_dataset: records have differing lengths");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write("VZEC", 4);
    write_u32(out, 1);
    write_u32(out, static_cast<uint32_t>(ds.records.size()));
    write_u32(out, kLeadCount);
    write_u32(out, static_cast<uint32_t>(t));
    std::vector<float> buf(static_cast<size_t>(kLeadCount) * t);
    for (const auto& r : ds.records) {
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(r.samples[i]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
        out.put(static_cast<char>(r.label_mask));
    }
    if (!out) throw IoError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    size_t offset = 0;
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "VZEC", 4) != 0) {
        throw FormatError("dataset: bad magic at byte offset 0 (expected \"VZEC\")");
    }
    offset = 4;
    const uint32_t version = read_u32(in, offset, "version");
    if (version != 1) {
        throw FormatError("dataset: unsupported version " + std::to_string(version) +
                          " at byte offset 4");
    }
    const uint32_t n_records = read_u32(in, offset, "record count");
    const uint32_t n_leads = read_u32(in, offset, "lead count");
    if (n_leads != kLeadCount) {
        throw FormatError("dataset: expected 12 leads, got " + std::to_string(n_leads) +
                          " at byte offset 12");
    }
    const uint32_t t = read_u32(in, offset, "record length");
    if (t < 2) throw FormatError("dataset: record length must be >= 2");

    Dataset ds;
    ds.records.reserve(n_records);
    const size_t record_bytes = static_cast<size_t>(kLeadCount) * t * sizeof(float) + 1;
    std::vector<char> buf(record_bytes);
    for (uint32_t r = 0; r < n_records; ++r) {
        in.read(buf.data(), static_cast<std::streamsize>(record_bytes));
        const size_t got = static_cast<size_t>(in.gcount());
        if (got != record_bytes) {
            throw FormatError("dataset: truncated record " + std::to_string(r) + " at byte offset " +
                              std::to_string(offset) + ": expected " + std::to_string(record_bytes) +
                              " bytes, got " + std::to_string(got));
        }
        offset += record_bytes;
        EcgRecord rec;
        rec.t_len = static_cast<int>(t);
        rec.samples.resize(static_cast<size_t>(kLeadCount) * t);
        const float* f = reinterpret_cast<const float*>(buf.data());
        for (size_t i = 0; i < rec.samples.size(); ++i) rec.samples[i] = static_cast<double>(f[i]);
        rec.label_mask = static_cast<uint8_t>(buf[record_bytes - 1]);
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

EcgRecord import_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("csv: missing header row");

    auto split_fields = [](const std::string& s) {
        std::vector<std::string> fields;
        size_t start = 0;
        for (;;) {
            const size_t comma = s.find(',', start);
            if (comma == std::string::npos) {
                fields.push_back(s.substr(start));
                break;
            }
            fields.push_back(s.substr(start, comma - start));
            start = comma + 1;
        }
        return fields;
    };

    const auto header = split_fields(line);
    if (header.size() != kLeadCount) {
        throw FormatError("csv: expected 12 columns, got " + std::to_string(header.size()) +
                          " in header");
    }

    std::vector<double> rows;
    int row_number = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++row_number;
        const auto fields = split_fields(line);
        if (fields.size() != kLeadCount) {
            throw FormatError("csv: expected 12 columns, got " + std::to_string(fields.size()) +
                              " at row " + std::to_string(row_number));
        }
        for (int c = 0; c < kLeadCount; ++c) {
            const std::string& cell = fields[static_cast<size_t>(c)];
            const char* begin = cell.data();
            const char* end = begin + cell.size();
            while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
            while (end > begin && (end[-1] == ' ' || end[-1] == '\t' || end[-1] == '\r')) --end;
            double value = 0.0;
            const auto res = std::from_chars(begin, end, value);
            if (res.ec != std::errc{} || res.ptr != end) {
                throw FormatError("csv: cannot parse cell \"" + cell + "\" at row " +
                                  std::to_string(row_number) + ", column " + std::to_string(c + 1));
            }
            rows.push_back(value);
        }
    }
    if (row_number < 2) throw FormatError("csv: need at least 2 data rows");

    EcgRecord rec;
    rec.t_len = row_number;
    rec.samples.resize(static_cast<size_t>(kLeadCount) * row_number);
    // transpose row-major CSV cells into lead-major storage
    for (int r = 0; r < row_number; ++r) {
        for (int c = 0; c < kLeadCount; ++c) {
            rec.samples[static_cast<size_t>(c) * row_number + r] =
                rows[static_cast<size_t>(r) * kLeadCount + c];
        }
    }
    return rec;
}

} // namespace vizecg
