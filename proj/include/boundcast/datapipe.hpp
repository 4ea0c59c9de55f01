#pragma once

/** @file
 * File-based ingestion of half-hourly farm records, operator-intervention
 * correction, capacity estimation, rescaling/thresholding, the outlier-farm
 * filter and rolling train/test scenarios.
 */

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <span>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "boundcast/glogit.hpp"
#include "boundcast/stats.hpp"

namespace boundcast {

inline constexpr std::int64_t half_hour_seconds = 1800;
/// Three months of half-hours.
inline constexpr std::size_t rolling_max_window = 4320;

// ---------------------------------------------------------------------------
// Timestamps (UTC seconds since the epoch)

/// Parses "YYYY-MM-DDTHH:MM:SS" followed by "Z" or a "+HH:MM"/"-HH:MM" offset.
inline std::int64_t parse_rfc3339(const std::string &text) {
	int year = 0, month = 0, day = 0, hour = 0, minute = 0, second = 0;
	int consumed = 0;
	if (std::sscanf(text.c_str(), "%4d-%2d-%2d%*1[Tt ]%2d:%2d:%2d%n", &year, &month, &day, &hour, &minute, &second,
	                &consumed) != 6) {
		throw std::invalid_argument("invalid RFC-3339 timestamp: " + text);
	}
	std::size_t pos = static_cast<std::size_t>(consumed);
	if (pos < text.size() && text[pos] == '.') {
		++pos;
		while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
			++pos;
		}
	}
	std::int64_t offset = 0;
	const std::string zone = text.substr(pos);
	if (zone == "Z" || zone == "z") {
		offset = 0;
	} else if (zone.size() == 6 && (zone[0] == '+' || zone[0] == '-') && zone[3] == ':') {
		const int oh = std::stoi(zone.substr(1, 2));
		const int om = std::stoi(zone.substr(4, 2));
		offset = (zone[0] == '+' ? 1 : -1) * (oh * 3600 + om * 60);
	} else {
		throw std::invalid_argument("invalid RFC-3339 zone: " + text);
	}
	using namespace std::chrono;
	const year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)},
	                         std::chrono::day{static_cast<unsigned>(day)}};
	if (!ymd.ok() || hour > 23 || minute > 59 || second > 60) {
		throw std::invalid_argument("invalid RFC-3339 date: " + text);
	}
	const auto days_since = sys_days{ymd}.time_since_epoch().count();
	return static_cast<std::int64_t>(days_since) * 86400 + hour * 3600 + minute * 60 + second - offset;
}

inline std::string format_rfc3339(std::int64_t t) {
	using namespace std::chrono;
	const auto day_index = static_cast<std::int64_t>(std::floor(static_cast<double>(t) / 86400.0));
	const std::int64_t rem = t - day_index * 86400;
	const year_month_day ymd{sys_days{days{day_index}}};
	char buf[32];
	std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
	              static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(rem / 3600),
	              static_cast<int>((rem % 3600) / 60), static_cast<int>(rem % 60));
	return buf;
}

inline int year_of(std::int64_t t) {
	using namespace std::chrono;
	const auto day_index = static_cast<std::int64_t>(std::floor(static_cast<double>(t) / 86400.0));
	return static_cast<int>(year_month_day{sys_days{days{day_index}}}.year());
}

// ---------------------------------------------------------------------------
// Records and CSV

struct FarmRecord {
	std::int64_t timestamp = 0;
	double power_mw = missing_value();
	double bav_mwh = missing_value();
	double oav_mwh = missing_value();
};

inline constexpr const char *farm_csv_header = "timestamp,power_mw,bav_mwh,oav_mwh";

namespace detail {

inline double parse_field(const std::string &field) {
	if (field.empty() || field == "NaN" || field == "nan" || field == "NA") {
		return missing_value();
	}
	std::size_t used = 0;
	const double v = std::stod(field, &used);
	if (used != field.size()) {
		throw std::invalid_argument("invalid numeric field: " + field);
	}
	return v;
}

inline std::vector<std::string> split_csv_line(const std::string &line) {
	std::vector<std::string> out;
	std::string cur;
	for (char c : line) {
		if (c == ',') {
			out.push_back(cur);
			cur.clear();
		} else if (c != '\r') {
			cur.push_back(c);
		}
	}
	out.push_back(cur);
	return out;
}

inline std::string format_field(double v) {
	if (is_missing(v)) {
		return "";
	}
	char buf[40];
	std::snprintf(buf, sizeof buf, "%.10g", v);
	return buf;
}

} // namespace detail

inline std::vector<FarmRecord> read_farm_csv(std::istream &in) {
	std::string line;
	if (!std::getline(in, line)) {
		throw std::invalid_argument("farm CSV is empty");
	}
	if (!line.empty() && line.back() == '\r') {
		line.pop_back();
	}
	if (line != farm_csv_header) {
		throw std::invalid_argument("farm CSV header must be '" + std::string(farm_csv_header) + "'");
	}
	std::vector<FarmRecord> rows;
	std::size_t line_no = 1;
	while (std::getline(in, line)) {
		++line_no;
		if (line.empty() || line == "\r") {
			continue;
		}
		const auto fields = detail::split_csv_line(line);
		if (fields.size() != 4) {
			throw std::invalid_argument("farm CSV line " + std::to_string(line_no) + ": expected 4 fields");
		}
		FarmRecord r;
		r.timestamp = parse_rfc3339(fields[0]);
		r.power_mw = detail::parse_field(fields[1]);
		r.bav_mwh = detail::parse_field(fields[2]);
		r.oav_mwh = detail::parse_field(fields[3]);
		rows.push_back(r);
	}
	return rows;
}

inline std::vector<FarmRecord> read_farm_csv(const std::filesystem::path &path) {
	std::ifstream in(path);
	if (!in) {
		throw std::runtime_error("cannot open " + path.string());
	}
	return read_farm_csv(in);
}

inline void write_farm_csv(std::ostream &out, const std::vector<FarmRecord> &rows) {
	out << farm_csv_header << '\n';
	for (const auto &r : rows) {
		out << format_rfc3339(r.timestamp) << ',' << detail::format_field(r.power_mw) << ','
		    << detail::format_field(r.bav_mwh) << ',' << detail::format_field(r.oav_mwh) << '\n';
	}
}

inline void write_farm_csv(const std::filesystem::path &path, const std::vector<FarmRecord> &rows) {
	std::ofstream out(path);
	if (!out) {
		throw std::runtime_error("cannot write " + path.string());
	}
	write_farm_csv(out, rows);
}

/**
 * Places records on the contiguous half-hour grid spanning the input; gaps
 * become explicit missing rows. Timestamps must be strictly increasing and on
 * half-hour boundaries.
 */
inline std::vector<FarmRecord> materialize_grid(const std::vector<FarmRecord> &rows) {
	if (rows.empty()) {
		return {};
	}
	for (std::size_t i = 0; i < rows.size(); ++i) {
		if (rows[i].timestamp % half_hour_seconds != 0) {
			throw std::invalid_argument("timestamp not on a half-hour boundary: " + format_rfc3339(rows[i].timestamp));
		}
		if (i > 0 && rows[i].timestamp <= rows[i - 1].timestamp) {
			throw std::invalid_argument("timestamps not strictly increasing at " + format_rfc3339(rows[i].timestamp));
		}
	}
	const std::int64_t start = rows.front().timestamp;
	const auto n = static_cast<std::size_t>((rows.back().timestamp - start) / half_hour_seconds) + 1;
	std::vector<FarmRecord> grid(n);
	for (std::size_t i = 0; i < n; ++i) {
		grid[i].timestamp = start + static_cast<std::int64_t>(i) * half_hour_seconds;
	}
	for (const auto &r : rows) {
		grid[static_cast<std::size_t>((r.timestamp - start) / half_hour_seconds)] = r;
	}
	return grid;
}

// ---------------------------------------------------------------------------
// Correction and rescaling

/// Sign convention and interval length used to remove operator instructions.
struct CorrectionRule {
	double offer_sign = 1.0;
	double bid_sign = 1.0;
	double interval_hours = 0.5;
};

/**
 * Natural output = metered output minus instructed volume converted to MW.
 * Offers (positive) raised output and are subtracted; bids carry negative
 * volume, so subtracting them restores curtailed output. Floored at zero.
 */
inline double correct_power(double avg_power_mw, double bav_mwh, double oav_mwh, const CorrectionRule &rule = {}) {
	if (is_missing(avg_power_mw)) {
		return missing_value();
	}
	const double bav = is_missing(bav_mwh) ? 0.0 : bav_mwh;
	const double oav = is_missing(oav_mwh) ? 0.0 : oav_mwh;
	const double instructed_mw = (rule.offer_sign * oav + rule.bid_sign * bav) / rule.interval_hours;
	return std::max(avg_power_mw - instructed_mw, 0.0);
}

inline std::vector<double> corrected_power(const std::vector<FarmRecord> &rows, const CorrectionRule &rule = {}) {
	std::vector<double> out;
	out.reserve(rows.size());
	for (const auto &r : rows) {
		out.push_back(correct_power(r.power_mw, r.bav_mwh, r.oav_mwh, rule));
	}
	return out;
}

/// Spike-robust maximum: min(max, 1.02 * 99.9th percentile) of non-missing values.
inline double estimate_capacity(std::span<const double> values_mw) {
	std::vector<double> present;
	for (double v : values_mw) {
		if (!is_missing(v)) {
			present.push_back(v);
		}
	}
	if (present.size() < 1000) {
		throw std::invalid_argument("estimate_capacity: need >= 1000 non-missing values");
	}
	const double peak = *std::max_element(present.begin(), present.end());
	const double q = sample_quantile(std::move(present), 0.999);
	return std::min(peak, 1.02 * q);
}

struct BoundedSeries {
	std::string farm_id;
	double capacity = 1.0;
	double eps = 0.005;
	std::vector<std::int64_t> timestamps;
	std::vector<double> values;
};

/// value / capacity, clipped to [0,1], then thresholded into [eps, 1-eps]; missing preserved.
inline std::vector<double> to_bounded(std::span<const double> values_mw, double capacity, double eps) {
	if (!(capacity > 0.0)) {
		throw std::invalid_argument("to_bounded: capacity must be positive");
	}
	std::vector<double> out;
	out.reserve(values_mw.size());
	for (double v : values_mw) {
		out.push_back(is_missing(v) ? missing_value() : clamp_threshold(std::clamp(v / capacity, 0.0, 1.0), eps));
	}
	return out;
}

// ---------------------------------------------------------------------------
// Outlier farms

struct FarmFilterResult {
	bool keep = true;
	/// Variance of the trailing three-month rolling maximum.
	double rolling_max_variance = 0.0;
	/// 3 * (q95 - q05) of the series.
	double quantile_width = 0.0;
	std::size_t points = 0;
};

/**
 * Keep a farm iff 3 (q95 - q05) exceeds the variance of its rolling maximum.
 * Both are computed on the series as supplied (raw MW in the pipeline).
 */
inline FarmFilterResult outlier_farm_filter(std::span<const double> series, std::size_t window = rolling_max_window) {
	if (series.size() < 2 * window) {
		throw std::invalid_argument("outlier_farm_filter: need at least six months of data");
	}
	std::vector<double> present;
	for (double v : series) {
		if (!is_missing(v)) {
			present.push_back(v);
		}
	}
	if (present.empty()) {
		throw std::invalid_argument("outlier_farm_filter: no data");
	}

	// Monotone deque over the trailing window, skipping missing values.
	std::vector<double> rolling;
	std::deque<std::size_t> dq;
	for (std::size_t t = 0; t < series.size(); ++t) {
		if (!is_missing(series[t])) {
			while (!dq.empty() && series[dq.back()] <= series[t]) {
				dq.pop_back();
			}
			dq.push_back(t);
		}
		while (!dq.empty() && dq.front() + window <= t) {
			dq.pop_front();
		}
		if (t + 1 >= window && !dq.empty()) {
			rolling.push_back(series[dq.front()]);
		}
	}

	FarmFilterResult r;
	r.points = present.size();
	r.rolling_max_variance = rolling.empty() ? 0.0 : variance(rolling);
	r.quantile_width = 3.0 * (sample_quantile(present, 0.95) - sample_quantile(present, 0.05));
	r.keep = r.quantile_width > r.rolling_max_variance;
	return r;
}

/// Consecutive (train, test) year pairs.
inline std::vector<std::pair<int, int>> build_scenarios(std::vector<int> years) {
	std::sort(years.begin(), years.end());
	years.erase(std::unique(years.begin(), years.end()), years.end());
	std::vector<std::pair<int, int>> out;
	for (std::size_t i = 0; i + 1 < years.size(); ++i) {
		if (years[i + 1] == years[i] + 1) {
			out.emplace_back(years[i], years[i + 1]);
		}
	}
	return out;
}

// ---------------------------------------------------------------------------
// Manifest

struct FarmEntry {
	std::string id;
	std::string file;
	std::optional<double> rated_power_mw{};
};

inline std::vector<FarmEntry> read_manifest(const std::filesystem::path &path) {
	std::ifstream in(path);
	if (!in) {
		throw std::runtime_error("cannot open manifest " + path.string());
	}
	const auto doc = nlohmann::json::parse(in);
	std::vector<FarmEntry> farms;
	for (const auto &f : doc.at("farms")) {
		FarmEntry e;
		e.id = f.at("id").get<std::string>();
		e.file = f.value("file", e.id + ".csv");
		if (f.contains("rated_power_mw") && !f.at("rated_power_mw").is_null()) {
			e.rated_power_mw = f.at("rated_power_mw").get<double>();
		}
		farms.push_back(std::move(e));
	}
	std::sort(farms.begin(), farms.end(), [](const FarmEntry &a, const FarmEntry &b) { return a.id < b.id; });
	return farms;
}

inline void write_manifest(const std::filesystem::path &path, const std::vector<FarmEntry> &farms,
                           const nlohmann::json &extra = nlohmann::json::object()) {
	nlohmann::json doc = extra;
	doc["farms"] = nlohmann::json::array();
	for (const auto &f : farms) {
		nlohmann::json e{{"id", f.id}, {"file", f.file}};
		e["rated_power_mw"] = f.rated_power_mw ? nlohmann::json(*f.rated_power_mw) : nlohmann::json(nullptr);
		doc["farms"].push_back(std::move(e));
	}
	std::ofstream out(path);
	if (!out) {
		throw std::runtime_error("cannot write manifest " + path.string());
	}
	out << doc.dump(2) << '\n';
}

/// A farm's records loaded, gridded and corrected.
struct FarmData {
	std::string id;
	std::vector<std::int64_t> timestamps;
	std::vector<double> power_mw;
};

inline FarmData load_farm(const std::filesystem::path &data_dir, const FarmEntry &entry, const CorrectionRule &rule = {}) {
	const auto rows = materialize_grid(read_farm_csv(data_dir / entry.file));
	FarmData farm;
	farm.id = entry.id;
	farm.power_mw = corrected_power(rows, rule);
	farm.timestamps.reserve(rows.size());
	for (const auto &r : rows) {
		farm.timestamps.push_back(r.timestamp);
	}
	return farm;
}

/// Index range [begin, end) of the calendar year within a gridded farm series.
inline std::pair<std::size_t, std::size_t> year_range(const std::vector<std::int64_t> &timestamps, int year) {
	std::size_t begin = timestamps.size();
	std::size_t end = timestamps.size();
	for (std::size_t i = 0; i < timestamps.size(); ++i) {
		if (year_of(timestamps[i]) == year) {
			begin = i;
			break;
		}
	}
	for (std::size_t i = begin; i < timestamps.size(); ++i) {
		if (year_of(timestamps[i]) != year) {
			end = i;
			break;
		}
	}
	return {begin, end};
}

} // namespace boundcast
