#include "gridshield/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace gridshield {

using json = nlohmann::json;

namespace {

constexpr const char* kProvenanceNames[] = {"benign", "f1", "f2",   "f3",  "f4", "f5",
                                            "f6",     "fgsm", "bim", "cw", "cgan"};

enum SeedStream : std::uint64_t {
    kStreamGen = 1,
    kStreamMalice = 2,
    kStreamWindows = 3,
    kStreamSplit = 4,
    kStreamAccess = 5,
};

}  // namespace

const char* provenance_name(Provenance p) { return kProvenanceNames[static_cast<int>(p)]; }

Provenance parse_provenance(const std::string& name) {
    for (int i = 0; i <= static_cast<int>(Provenance::cgan); ++i)
        if (name == kProvenanceNames[i]) return static_cast<Provenance>(i);
    throw std::invalid_argument("unknown provenance: " + name);
}

void SplitPlan::validate() const {
    if (std::abs(train + val + test - 1.0) > 1e-9)
        throw std::invalid_argument("SplitPlan: fractions must sum to 1.0");
    if (access_percent != 20 && access_percent != 40 && access_percent != 60 &&
        access_percent != 80 && access_percent != 100)
        throw std::invalid_argument("SplitPlan: access percent must be one of 20/40/60/80/100");
}

std::vector<LoadSeries> generate_benign(int sites, int days, std::uint64_t seed,
                                        const GenConfig& cfg) {
    if (sites < 1 || days < 1)
        throw std::invalid_argument("generate_benign: sites and days must be >= 1");

    const int ipd = cfg.intervals_per_day;

    // daily double-peak shape, normalized to mean 1 so the series mean tracks
    // base_load
    std::vector<double> shape(ipd);
    double shape_sum = 0.0;
    for (int i = 0; i < ipd; ++i) {
        const double h = 24.0 * i / ipd;
        const double morning = 0.6 * std::exp(-0.5 * std::pow((h - 8.0) / 1.6, 2.0));
        const double evening = 0.9 * std::exp(-0.5 * std::pow((h - 19.0) / 2.0, 2.0));
        shape[i] = 0.5 + morning + evening;
        shape_sum += shape[i];
    }
    for (double& v : shape) v *= ipd / shape_sum;

    std::vector<float> day_price(ipd);
    for (int i = 0; i < ipd; ++i) {
        const double h = 24.0 * i / ipd;
        day_price[i] = static_cast<float>(
            (h >= cfg.peak_start_hour && h < cfg.peak_end_hour) ? cfg.peak_price
                                                                : cfg.offpeak_price);
    }

    std::vector<LoadSeries> out;
    out.reserve(sites);
    for (int site = 0; site < sites; ++site) {
        Rng rng = make_rng(mix_seed(seed, kStreamGen, static_cast<std::uint64_t>(site)));
        std::normal_distribution<double> noise(0.0, cfg.noise * cfg.base_load);
        std::uniform_real_distribution<double> uphase(0.0, 2.0 * 3.14159265358979323846);
        std::uniform_real_distribution<double> uscale(0.85, 1.15);
        const double phase = uphase(rng);
        const double site_scale = uscale(rng);

        LoadSeries s;
        s.site_id = site;
        s.interval_minutes = 24 * 60 / ipd;
        s.readings.resize(static_cast<std::size_t>(days) * ipd);
        s.tou_price.resize(s.readings.size());
        for (int d = 0; d < days; ++d) {
            const double weekly =
                1.0 + cfg.weekly_amplitude * std::sin(2.0 * 3.14159265358979323846 * d / 7.0 + phase);
            for (int i = 0; i < ipd; ++i) {
                double v = cfg.base_load * site_scale * shape[i] * weekly;
                if (cfg.noise > 0.0) v += noise(rng);
                const std::size_t idx = static_cast<std::size_t>(d) * ipd + i;
                s.readings[idx] = static_cast<float>(std::max(v, 0.0));
                s.tou_price[idx] = day_price[i];
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

// epoch seconds or "YYYY-MM-DD HH:MM[:SS]" (separator space or 'T'), UTC
long parse_timestamp(const std::string& field, int line_no) {
    if (field.empty()) throw std::runtime_error("ingest_csv: empty timestamp at line " +
                                                std::to_string(line_no));
    if (field.find('-') == std::string::npos) {
        long v = 0;
        auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
        if (ec != std::errc() || p != field.data() + field.size())
            throw std::runtime_error("ingest_csv: bad timestamp '" + field + "' at line " +
                                     std::to_string(line_no));
        return v;
    }
    std::tm tm = {};
    int y, mo, d, h, mi, sec = 0;
    const int got = std::sscanf(field.c_str(), "%d-%d-%d%*1[ T]%d:%d:%d", &y, &mo, &d, &h, &mi, &sec);
    if (got < 5)
        throw std::runtime_error("ingest_csv: bad timestamp '" + field + "' at line " +
                                 std::to_string(line_no));
    tm.tm_year = y - 1900;
    tm.tm_mon = mo - 1;
    tm.tm_mday = d;
    tm.tm_hour = h;
    tm.tm_min = mi;
    tm.tm_sec = sec;
    return static_cast<long>(timegm(&tm));
}

float parse_float_field(const std::string& field, const char* what, int line_no) {
    try {
        std::size_t used = 0;
        const float v = std::stof(field, &used);
        if (used != field.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error(std::string("ingest_csv: bad ") + what + " '" + field +
                                 "' at line " + std::to_string(line_no));
    }
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

LoadSeries ingest_csv(const std::string& path, const CsvSchema& schema, const GenConfig& cfg) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("ingest_csv: cannot open " + path);

    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("ingest_csv: empty file " + path);
    const std::vector<std::string> header = split_csv_line(line);
    auto col_of = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    };
    const int ts_col = col_of(schema.timestamp_col);
    const int cons_col = col_of(schema.consumption_col);
    if (ts_col < 0)
        throw std::runtime_error("ingest_csv: schema error, missing column '" +
                                 schema.timestamp_col + "'");
    if (cons_col < 0)
        throw std::runtime_error("ingest_csv: schema error, missing column '" +
                                 schema.consumption_col + "'");
    const int price_col = schema.price_col.empty() ? -1 : col_of(schema.price_col);
    if (!schema.price_col.empty() && price_col < 0)
        throw std::runtime_error("ingest_csv: schema error, missing column '" + schema.price_col +
                                 "'");

    std::vector<long> stamps;
    std::vector<float> cons, price;
    int line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_csv_line(line);
        if (static_cast<int>(fields.size()) <= std::max(ts_col, cons_col))
            throw std::runtime_error("ingest_csv: too few columns at line " +
                                     std::to_string(line_no));
        stamps.push_back(parse_timestamp(fields[ts_col], line_no));
        cons.push_back(parse_float_field(fields[cons_col], "consumption", line_no));
        if (price_col >= 0) {
            if (static_cast<int>(fields.size()) <= price_col)
                throw std::runtime_error("ingest_csv: too few columns at line " +
                                         std::to_string(line_no));
            price.push_back(parse_float_field(fields[price_col], "price", line_no));
        }
    }
    if (stamps.empty()) throw std::runtime_error("ingest_csv: no data rows in " + path);

    long interval = 0;
    for (std::size_t i = 1; i < stamps.size(); ++i) {
        const long d = stamps[i] - stamps[i - 1];
        if (d <= 0)
            throw std::runtime_error("ingest_csv: non-increasing timestamp at line " +
                                     std::to_string(i + 2));
        if (interval == 0 || d < interval) interval = d;
    }
    if (interval == 0) interval = 60 * 30;  // single row

    LoadSeries s;
    s.interval_minutes = static_cast<int>(interval / 60);
    const int ipd = std::max(1, static_cast<int>(24 * 60 / std::max(1, s.interval_minutes)));

    auto default_price = [&](long stamp) {
        const double h = static_cast<double>(stamp % 86400) / 3600.0;
        return static_cast<float>((h >= cfg.peak_start_hour && h < cfg.peak_end_hour)
                                      ? cfg.peak_price
                                      : cfg.offpeak_price);
    };
    (void)ipd;

    for (std::size_t i = 0; i < stamps.size(); ++i) {
        if (i > 0) {
            long expect = stamps[i - 1] + interval;
            while (expect < stamps[i]) {  // gap: carry last observation forward
                s.readings.push_back(s.readings.back());
                s.tou_price.push_back(price_col >= 0 ? price[i - 1] : default_price(expect));
                ++s.gap_fill_count;
                expect += interval;
            }
        }
        s.readings.push_back(std::max(cons[i], 0.0f));
        s.tou_price.push_back(price_col >= 0 ? price[i] : default_price(stamps[i]));
    }
    return s;
}

namespace {

LoadSeries apply_malice_once(const LoadSeries& s, Provenance kind, Rng& rng) {
    LoadSeries out = s;
    out.provenance = kind;
    const int ipd = std::max(1, 24 * 60 / std::max(1, s.interval_minutes));
    const std::size_t n = s.readings.size();
    std::uniform_real_distribution<float> ufrac(0.1f, 0.8f);

    switch (kind) {
        case Provenance::f1: {
            const float alpha = ufrac(rng);
            for (std::size_t i = 0; i < n; ++i) out.readings[i] = s.readings[i] * alpha;
            break;
        }
        case Provenance::f2: {
            for (std::size_t i = 0; i < n; ++i) out.readings[i] = s.readings[i] * ufrac(rng);
            break;
        }
        case Provenance::f3: {
            // each day gets its own 4-12h zero-reporting interval
            const int min_iv = std::max(1, ipd * 4 / 24);
            const int max_iv = std::max(min_iv, ipd * 12 / 24);
            std::uniform_int_distribution<int> udur(min_iv, max_iv);
            std::uniform_int_distribution<int> ustart(0, ipd - 1);
            for (std::size_t day0 = 0; day0 < n; day0 += ipd) {
                const int start = ustart(rng);
                const int dur = udur(rng);
                const std::size_t lo = day0 + start;
                const std::size_t hi = std::min(day0 + static_cast<std::size_t>(ipd),
                                                lo + static_cast<std::size_t>(dur));
                for (std::size_t i = lo; i < hi && i < n; ++i) out.readings[i] = 0.0f;
            }
            break;
        }
        case Provenance::f4:
        case Provenance::f5: {
            double mean = 0.0;
            for (float v : s.readings) mean += v;
            mean /= std::max<std::size_t>(1, n);
            if (kind == Provenance::f4) {
                for (std::size_t i = 0; i < n; ++i) out.readings[i] = static_cast<float>(mean);
            } else {
                for (std::size_t i = 0; i < n; ++i)
                    out.readings[i] = static_cast<float>(mean) * ufrac(rng);
            }
            break;
        }
        case Provenance::f6: {
            // within each day, largest readings to the cheapest intervals
            for (std::size_t day0 = 0; day0 + ipd <= n; day0 += ipd) {
                std::vector<int> by_price(ipd);
                std::iota(by_price.begin(), by_price.end(), 0);
                std::stable_sort(by_price.begin(), by_price.end(), [&](int a, int b) {
                    return s.tou_price[day0 + a] < s.tou_price[day0 + b];
                });
                std::vector<float> vals(s.readings.begin() + day0,
                                        s.readings.begin() + day0 + ipd);
                std::stable_sort(vals.begin(), vals.end(), std::greater<float>());
                for (int r = 0; r < ipd; ++r) out.readings[day0 + by_price[r]] = vals[r];
            }
            break;
        }
        default:
            throw std::invalid_argument(std::string("apply_malice: unknown kind ") +
                                        provenance_name(kind));
    }
    return out;
}

}  // namespace

LoadSeries apply_malice(const LoadSeries& s, Provenance kind, std::uint64_t seed) {
    if (!is_malice_kind(kind))
        throw std::invalid_argument(std::string("apply_malice: unknown kind ") +
                                    provenance_name(kind));
    Rng rng = make_rng(mix_seed(seed, kStreamMalice,
                                mix_seed(static_cast<std::uint64_t>(s.site_id),
                                         static_cast<std::uint64_t>(kind))));
    for (int attempt = 0; attempt < 3; ++attempt) {
        LoadSeries out = apply_malice_once(s, kind, rng);
        if (out.readings != s.readings) return out;
    }
    return apply_malice_once(s, kind, rng);  // degenerate input, keep last draw
}

std::vector<MeterWindow> WindowSet::subset(int which) const {
    std::vector<MeterWindow> out;
    for (std::size_t i = 0; i < windows.size(); ++i)
        if (split[i] == which) out.push_back(windows[i]);
    return out;
}

std::size_t WindowSet::count_label(int label) const {
    std::size_t n = 0;
    for (const MeterWindow& w : windows) n += w.label == label ? 1 : 0;
    return n;
}

WindowSet make_windows(const std::vector<LoadSeries>& series, int w, int stride,
                       double malicious_ratio, std::uint64_t seed, const SplitPlan& plan) {
    if (w < 8) throw std::invalid_argument("make_windows: W must be >= 8");
    if (stride < 1) throw std::invalid_argument("make_windows: stride must be >= 1");
    if (malicious_ratio <= 0.0 || malicious_ratio >= 1.0)
        throw std::invalid_argument("make_windows: malicious_ratio must be in (0,1)");
    plan.validate();

    WindowSet ws;
    ws.window_width = w;
    ws.stride = stride;
    ws.malicious_ratio = malicious_ratio;
    ws.seed = seed;

    // benign source lookup for the non-identity filter
    std::vector<const LoadSeries*> benign_of_site;
    for (const LoadSeries& s : series) {
        if (s.provenance != Provenance::benign) continue;
        if (s.site_id >= static_cast<int>(benign_of_site.size()))
            benign_of_site.resize(s.site_id + 1, nullptr);
        benign_of_site[s.site_id] = &s;
    }

    std::vector<MeterWindow> benign, malicious;
    for (const LoadSeries& s : series) {
        if (s.readings.size() < static_cast<std::size_t>(w)) {
            ws.warnings.push_back("series site " + std::to_string(s.site_id) + " (" +
                                  provenance_name(s.provenance) + ") shorter than W, skipped");
            continue;
        }
        const LoadSeries* src = s.site_id < static_cast<int>(benign_of_site.size())
                                    ? benign_of_site[s.site_id]
                                    : nullptr;
        for (std::size_t off = 0; off + w <= s.readings.size();
             off += static_cast<std::size_t>(stride)) {
            MeterWindow mw;
            mw.values.assign(s.readings.begin() + off, s.readings.begin() + off + w);
            mw.provenance = s.provenance;
            mw.label = label_of(s.provenance);
            if (mw.label == 1) {
                if (src != nullptr && src->readings.size() >= off + w &&
                    std::equal(mw.values.begin(), mw.values.end(), src->readings.begin() + off))
                    continue;  // indistinguishable from the benign source
                malicious.push_back(std::move(mw));
            } else {
                benign.push_back(std::move(mw));
            }
        }
    }

    // balance to the requested ratio, keeping as much data as possible
    const double r = malicious_ratio;
    std::size_t nb = benign.size(), nm = malicious.size();
    std::size_t want_m = static_cast<std::size_t>(std::llround(nb * r / (1.0 - r)));
    if (want_m <= nm) {
        nm = want_m;
    } else {
        nb = static_cast<std::size_t>(std::llround(nm * (1.0 - r) / r));
    }

    Rng rng = make_rng(mix_seed(seed, kStreamWindows));
    std::shuffle(benign.begin(), benign.end(), rng);
    std::shuffle(malicious.begin(), malicious.end(), rng);
    benign.resize(std::min(nb, benign.size()));
    malicious.resize(std::min(nm, malicious.size()));

    // stratified split
    Rng split_rng = make_rng(mix_seed(seed, kStreamSplit));
    auto assign = [&](std::vector<MeterWindow>& group) {
        std::shuffle(group.begin(), group.end(), split_rng);
        const std::size_t n = group.size();
        const std::size_t n_train = static_cast<std::size_t>(std::llround(n * plan.train));
        const std::size_t n_val = static_cast<std::size_t>(std::llround(n * plan.val));
        for (std::size_t i = 0; i < n; ++i) {
            ws.windows.push_back(std::move(group[i]));
            ws.split.push_back(i < n_train ? 0 : (i < n_train + n_val ? 1 : 2));
        }
    };
    assign(benign);
    assign(malicious);

    // standardization stats from benign train windows only
    double sum = 0.0, sq = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < ws.windows.size(); ++i) {
        if (ws.split[i] != 0 || ws.windows[i].label != 0) continue;
        for (float v : ws.windows[i].values) {
            sum += v;
            sq += static_cast<double>(v) * v;
            ++cnt;
        }
    }
    if (cnt > 0) {
        const double mean = sum / cnt;
        const double var = std::max(sq / cnt - mean * mean, 1e-12);
        ws.mean = static_cast<float>(mean);
        ws.stdev = static_cast<float>(std::sqrt(var));
    }
    return ws;
}

std::vector<MeterWindow> access_subset(const std::vector<MeterWindow>& train, int p,
                                       std::uint64_t seed) {
    if (p != 20 && p != 40 && p != 60 && p != 80 && p != 100)
        throw std::invalid_argument("access_subset: p must be one of 20/40/60/80/100");
    if (p == 100) return train;

    std::vector<std::size_t> idx0, idx1;
    for (std::size_t i = 0; i < train.size(); ++i)
        (train[i].label == 0 ? idx0 : idx1).push_back(i);

    Rng rng = make_rng(mix_seed(seed, kStreamAccess));
    std::shuffle(idx0.begin(), idx0.end(), rng);
    std::shuffle(idx1.begin(), idx1.end(), rng);

    auto take = [&](const std::vector<std::size_t>& idx) {
        return static_cast<std::size_t>(std::llround(idx.size() * p / 100.0));
    };
    std::vector<std::size_t> keep;
    keep.insert(keep.end(), idx0.begin(), idx0.begin() + take(idx0));
    keep.insert(keep.end(), idx1.begin(), idx1.begin() + take(idx1));
    std::sort(keep.begin(), keep.end());

    std::vector<MeterWindow> out;
    out.reserve(keep.size());
    for (std::size_t i : keep) out.push_back(train[i]);
    return out;
}

namespace {

std::string float_str(float v) {
    char buf[48];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

}  // namespace

void save_snapshot(const WindowSet& ws, const std::string& csv_path,
                   const std::string& manifest_path) {
    std::ofstream f(csv_path);
    if (!f) throw std::runtime_error("save_snapshot: cannot open " + csv_path);
    f << "split,label,provenance";
    for (int i = 0; i < ws.window_width; ++i) f << ",v" << i;
    f << "\n";
    static const char* kSplitNames[] = {"train", "val", "test"};
    for (std::size_t i = 0; i < ws.windows.size(); ++i) {
        const MeterWindow& w = ws.windows[i];
        f << kSplitNames[ws.split[i]] << "," << w.label << "," << provenance_name(w.provenance);
        for (float v : w.values) f << "," << float_str(v);
        f << "\n";
    }
    if (!f) throw std::runtime_error("save_snapshot: write failed " + csv_path);

    json m;
    m["seed"] = ws.seed;
    m["window_width"] = ws.window_width;
    m["stride"] = ws.stride;
    m["malicious_ratio"] = ws.malicious_ratio;
    m["standardization"] = {{"mean", ws.mean}, {"stdev", ws.stdev}};
    m["counts"] = {{"windows", ws.windows.size()},
                   {"benign", ws.count_label(0)},
                   {"malicious", ws.count_label(1)}};
    m["warnings"] = ws.warnings;
    std::ofstream mf(manifest_path);
    if (!mf) throw std::runtime_error("save_snapshot: cannot open " + manifest_path);
    mf << m.dump(2) << "\n";
}

WindowSet load_snapshot(const std::string& csv_path, const std::string& manifest_path) {
    std::ifstream mf(manifest_path);
    if (!mf) throw std::runtime_error("load_snapshot: cannot open " + manifest_path);
    json m = json::parse(mf);

    WindowSet ws;
    ws.seed = m.at("seed").get<std::uint64_t>();
    ws.window_width = m.at("window_width").get<int>();
    ws.stride = m.at("stride").get<int>();
    ws.malicious_ratio = m.at("malicious_ratio").get<double>();
    ws.mean = m.at("standardization").at("mean").get<float>();
    ws.stdev = m.at("standardization").at("stdev").get<float>();
    if (m.contains("warnings"))
        ws.warnings = m.at("warnings").get<std::vector<std::string>>();

    std::ifstream f(csv_path);
    if (!f) throw std::runtime_error("load_snapshot: cannot open " + csv_path);
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_csv_line(line);
        if (fields.size() != static_cast<std::size_t>(ws.window_width) + 3)
            throw std::runtime_error("load_snapshot: bad row width in " + csv_path);
        int split = fields[0] == "train" ? 0 : (fields[0] == "val" ? 1 : 2);
        MeterWindow w;
        w.label = std::stoi(fields[1]);
        w.provenance = parse_provenance(fields[2]);
        w.values.reserve(ws.window_width);
        for (int i = 0; i < ws.window_width; ++i) w.values.push_back(std::stof(fields[3 + i]));
        ws.windows.push_back(std::move(w));
        ws.split.push_back(split);
    }
    return ws;
}

std::vector<float> standardize(const std::vector<MeterWindow>& windows, float mean, float stdev) {
    std::vector<float> out;
    if (windows.empty()) return out;
    out.reserve(windows.size() * windows[0].values.size());
    for (const MeterWindow& w : windows)
        for (float v : w.values) out.push_back((v - mean) / stdev);
    return out;
}

}  // namespace gridshield
