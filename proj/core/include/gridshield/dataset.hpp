#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gridshield/tensor.hpp"

namespace gridshield {

// Who produced a window: a malice function at data level or an evasion
// attack. label == 1 exactly when provenance != benign.
enum class Provenance {
    benign,
    f1,
    f2,
    f3,
    f4,
    f5,
    f6,
    fgsm,
    bim,
    cw,
    cgan,
};

const char* provenance_name(Provenance p);
Provenance parse_provenance(const std::string& name);
inline bool is_malice_kind(Provenance p) { return p >= Provenance::f1 && p <= Provenance::f6; }
inline bool is_attack_kind(Provenance p) { return p >= Provenance::fgsm; }
inline int label_of(Provenance p) { return p == Provenance::benign ? 0 : 1; }

// One site's consumption series with the tariff aligned to it.
struct LoadSeries {
    int site_id = 0;
    std::vector<float> readings;   // kWh per interval, >= 0
    int interval_minutes = 30;
    std::vector<float> tou_price;  // tariff per interval
    Provenance provenance = Provenance::benign;
    int gap_fill_count = 0;        // LOCF fills added during CSV ingestion
};

struct MeterWindow {
    std::vector<float> values;  // length W, raw units
    int label = 0;
    Provenance provenance = Provenance::benign;
};

struct SplitPlan {
    double train = 0.7;
    double val = 0.15;
    double test = 0.15;
    int access_percent = 100;  // adversary access p, subsets drawn from train only
    std::uint64_t seed = 0;

    void validate() const;
};

struct GenConfig {
    double base_load = 2.0;        // kWh per interval, daily mean
    double noise = 0.15;           // gaussian noise stddev as fraction of base_load
    double weekly_amplitude = 0.1; // weekly load modulation depth
    int intervals_per_day = 48;    // 30-minute cadence
    double peak_price = 2.0;       // ToU two-tier default
    double offpeak_price = 1.0;
    double peak_start_hour = 17.0;
    double peak_end_hour = 21.0;
};

// Synthetic benign profiles: normalized daily double-peak shape scaled by
// base_load, weekly modulation, gaussian noise, clipped at zero.
// Deterministic per (seed, site).
std::vector<LoadSeries> generate_benign(int sites, int days, std::uint64_t seed,
                                        const GenConfig& cfg = {});

struct CsvSchema {
    std::string timestamp_col = "timestamp";
    std::string consumption_col = "consumption";
    std::string price_col;  // optional
    std::string pv_col;     // optional, parsed and ignored (context only)
};

// Single-site CSV with a header row. Gaps in the timestamp grid are filled by
// last observation carried forward and counted in gap_fill_count.
LoadSeries ingest_csv(const std::string& path, const CsvSchema& schema,
                      const GenConfig& cfg = {});

// Applies one of the six malicious behaviors; deterministic per
// (seed, site id, kind). The result is re-drawn (up to 3 times) if it is
// identical to the source.
LoadSeries apply_malice(const LoadSeries& s, Provenance kind, std::uint64_t seed);

// Labeled windows with the split assignment and the standardization stats
// frozen from benign train windows only.
struct WindowSet {
    std::vector<MeterWindow> windows;
    std::vector<int> split;  // 0 train / 1 val / 2 test, aligned with windows
    int window_width = 48;
    int stride = 48;
    double malicious_ratio = 0.5;
    float mean = 0.0f;
    float stdev = 1.0f;
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;

    std::vector<MeterWindow> subset(int which) const;  // by split tag
    std::size_t count_label(int label) const;
};

// Cuts windows from every series, drops malicious windows identical to their
// benign source, balances to malicious_ratio, splits, and freezes
// standardization stats. Series shorter than W are skipped with a warning.
WindowSet make_windows(const std::vector<LoadSeries>& series, int w, int stride,
                       double malicious_ratio, std::uint64_t seed, const SplitPlan& plan);

// Uniform stratified sample without replacement; nested across p for a fixed
// seed (subset(p1) is a prefix of subset(p2) per label when p1 < p2).
// p == 100 returns the input unchanged.
std::vector<MeterWindow> access_subset(const std::vector<MeterWindow>& train, int p,
                                       std::uint64_t seed);

// Snapshot = windows CSV + JSON manifest carrying seed, W, ratios and the
// standardization stats.
void save_snapshot(const WindowSet& ws, const std::string& csv_path,
                   const std::string& manifest_path);
WindowSet load_snapshot(const std::string& csv_path, const std::string& manifest_path);

// (x - mean) / stdev over every value, flattened row-major [n x W]
std::vector<float> standardize(const std::vector<MeterWindow>& windows, float mean, float stdev);

}  // namespace gridshield
