#pragma once

// CSV ingestion and emission. Dates are ISO-8601 (YYYY-MM-DD); doubles are written with
// 17 significant digits so every file round-trips exactly.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "catbond/cir.hpp"
#include "catbond/crm.hpp"
#include "catbond/errors.hpp"

namespace catbond::harness {

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string format_date(const crm::Date& d) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", int(d.year()), unsigned(d.month()), unsigned(d.day()));
    return buf;
}

inline bool parse_int(std::string_view s, int& out) {
    const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

inline bool parse_date(std::string_view s, crm::Date& out) {
    int y = 0, m = 0, d = 0;
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
    if (!parse_int(s.substr(0, 4), y) || !parse_int(s.substr(5, 2), m) || !parse_int(s.substr(8, 2), d)) return false;
    out = crm::Date{std::chrono::year{y}, std::chrono::month{unsigned(m)}, std::chrono::day{unsigned(d)}};
    return out.ok();
}

inline bool parse_double(std::string_view s, double& out) {
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

inline crm::Date parse_date_or_throw(std::string_view s, const std::string& what) {
    crm::Date d;
    if (!parse_date(s, d)) throw ConfigError(what + ": '" + std::string(s) + "' is not a YYYY-MM-DD date");
    return d;
}

inline std::vector<std::string> split_fields(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw InputError("csv: missing column '" + name + "'");
        return std::size_t(it - header.begin());
    }
};

/// Plain comma-separated reader (no quoting), used for the repo's own outputs.
inline CsvTable read_csv(std::istream& in, const std::string& source = "csv") {
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw InputError(source + ": empty file");
    t.header = split_fields(strip_cr(line));
    std::size_t no = 1;
    while (std::getline(in, line)) {
        ++no;
        line = strip_cr(line);
        if (line.empty()) continue;
        auto f = split_fields(line);
        if (f.size() != t.header.size())
            throw InputError(source + ": line " + std::to_string(no) + " has " + std::to_string(f.size()) +
                             " fields, expected " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(f));
    }
    return t;
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    return in;
}

inline CsvTable read_csv(const std::string& path) {
    auto in = open_input(path);
    return read_csv(in, path);
}

inline double cell_double(const CsvTable& t, std::size_t row, std::size_t col) {
    double v = 0.0;
    if (!parse_double(t.rows[row][col], v))
        throw InputError("csv: row " + std::to_string(row + 2) + ", column '" + t.header[col] + "' is not a number");
    return v;
}

class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : out_(path), path_(path) {
        if (!out_) throw ConfigError("cannot write '" + path + "'");
    }

    template <class... Cols>
    void row(const Cols&... cols) {
        bool first = true;
        ((out_ << (first ? "" : ",") << cell(cols), first = false), ...);
        out_ << '\n';
    }

    void row(const std::vector<std::string>& cols) {
        for (std::size_t k = 0; k < cols.size(); ++k) out_ << (k ? "," : "") << cols[k];
        out_ << '\n';
    }

    void close() {
        out_.close();
        if (!out_) throw ConfigError("failed writing '" + path_ + "'");
    }

private:
    static std::string cell(double v) { return format_double(v); }
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    template <class I>
    static std::string cell(I v) requires std::is_integral_v<I> { return std::to_string(v); }

    std::ofstream out_;
    std::string path_;
};

inline const char* events_header = "date,peril,loss_millions";
inline const char* rates_header = "date,yield_percent";

/// Rows of `date,peril,loss_millions`. Malformed rows fail immediately with line and column;
/// nonpositive losses are collected and reported together.
inline std::vector<crm::ClaimEvent> ingest_events(std::istream& in, const std::string& source = "events") {
    std::string line;
    if (!std::getline(in, line)) throw InputError(source + ": empty file");
    if (strip_cr(line) != events_header)
        throw InputError(source + ": header must be exactly '" + std::string(events_header) + "'");
    std::vector<crm::ClaimEvent> out;
    std::vector<std::size_t> rejected;
    std::size_t no = 1;
    while (std::getline(in, line)) {
        ++no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto f = split_fields(line);
        if (f.size() != 3)
            throw InputError(source + ": line " + std::to_string(no) + ": expected 3 fields, found " +
                             std::to_string(f.size()));
        crm::ClaimEvent e;
        e.line = no;
        if (!parse_date(f[0], e.date))
            throw InputError(source + ": line " + std::to_string(no) + ", column 'date': '" + f[0] +
                             "' is not a YYYY-MM-DD date");
        if (f[1].empty()) throw InputError(source + ": line " + std::to_string(no) + ", column 'peril' is empty");
        e.peril = f[1];
        if (!parse_double(f[2], e.loss) || !std::isfinite(e.loss))
            throw InputError(source + ": line " + std::to_string(no) + ", column 'loss_millions': '" + f[2] +
                             "' is not a number");
        if (!(e.loss > 0.0)) {
            rejected.push_back(no);
            continue;
        }
        out.push_back(std::move(e));
    }
    if (!rejected.empty()) {
        std::string list;
        for (auto r : rejected) list += (list.empty() ? "" : ", ") + std::to_string(r);
        throw InputError(source + ": nonpositive loss on line(s) " + list);
    }
    return out;
}

inline std::vector<crm::ClaimEvent> ingest_events(const std::string& path) {
    auto in = open_input(path);
    return ingest_events(in, path);
}

struct RateData {
    std::vector<crm::Date> dates;
    std::vector<double> yields_percent;
    cir::RateSeries series; // decimal rates, times in years from the first date
};

/// Rows of `date,yield_percent`; spacing must be uniform to within one day.
inline RateData ingest_rates(std::istream& in, const std::string& source = "rates") {
    std::string line;
    if (!std::getline(in, line)) throw InputError(source + ": empty file");
    if (strip_cr(line) != rates_header)
        throw InputError(source + ": header must be exactly '" + std::string(rates_header) + "'");
    RateData out;
    std::size_t no = 1;
    while (std::getline(in, line)) {
        ++no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto f = split_fields(line);
        if (f.size() != 2)
            throw InputError(source + ": line " + std::to_string(no) + ": expected 2 fields, found " +
                             std::to_string(f.size()));
        crm::Date d;
        double y = 0.0;
        if (!parse_date(f[0], d))
            throw InputError(source + ": line " + std::to_string(no) + ", column 'date': '" + f[0] +
                             "' is not a YYYY-MM-DD date");
        if (!parse_double(f[1], y) || !std::isfinite(y))
            throw InputError(source + ": line " + std::to_string(no) + ", column 'yield_percent': '" + f[1] +
                             "' is not a number");
        if (!(y > 0.0))
            throw InputError(source + ": line " + std::to_string(no) + ": yield must be positive for the CIR model");
        if (!out.dates.empty() && !(out.dates.back() < d))
            throw InputError(source + ": line " + std::to_string(no) + ": date " + f[0] +
                             (out.dates.back() == d ? " is duplicated" : " is out of order"));
        out.dates.push_back(d);
        out.yields_percent.push_back(y);
    }
    if (out.dates.size() < 3) throw InputError(source + ": needs at least 3 observations");
    std::vector<long> gaps;
    for (std::size_t k = 1; k < out.dates.size(); ++k)
        gaps.push_back(long((std::chrono::sys_days{out.dates[k]} - std::chrono::sys_days{out.dates[k - 1]}).count()));
    auto sorted = gaps;
    std::nth_element(sorted.begin(), sorted.begin() + long(sorted.size() / 2), sorted.end());
    const long typical = sorted[sorted.size() / 2];
    for (std::size_t k = 0; k < gaps.size(); ++k)
        if (std::abs(gaps[k] - typical) > 1)
            throw InputError(source + ": nonuniform spacing, gap of " + std::to_string(gaps[k]) + " days between " +
                             format_date(out.dates[k]) + " and " + format_date(out.dates[k + 1]) + " (typical " +
                             std::to_string(typical) + ")");
    for (std::size_t k = 0; k < out.dates.size(); ++k) {
        out.series.times.push_back(
            double((std::chrono::sys_days{out.dates[k]} - std::chrono::sys_days{out.dates.front()}).count()) / 365.25);
        out.series.rates.push_back(out.yields_percent[k] / 100.0);
    }
    return out;
}

inline RateData ingest_rates(const std::string& path) {
    auto in = open_input(path);
    return ingest_rates(in, path);
}

inline void write_events(const std::string& path, const std::vector<crm::ClaimEvent>& events) {
    CsvWriter w(path);
    w.row(std::vector<std::string>{"date", "peril", "loss_millions"});
    for (const auto& e : events) w.row(format_date(e.date), e.peril, e.loss);
    w.close();
}

inline void write_rates(const std::string& path, const std::vector<crm::Date>& dates,
                        const std::vector<double>& yields_percent) {
    CsvWriter w(path);
    w.row(std::vector<std::string>{"date", "yield_percent"});
    for (std::size_t k = 0; k < dates.size(); ++k) w.row(format_date(dates[k]), yields_percent[k]);
    w.close();
}

} // namespace catbond::harness
