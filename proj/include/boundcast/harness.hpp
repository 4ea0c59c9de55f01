#pragma once

/** @file
 * Experiment orchestration: run configuration, per-farm rolling train/test
 * evaluation of the seven methods, report files and the parameter-disturbance
 * sensitivity analysis.
 */

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "boundcast/datapipe.hpp"
#include "boundcast/eval.hpp"
#include "boundcast/forecast.hpp"

namespace boundcast {

inline constexpr const char *boundcast_version = "0.1.0";

// ---------------------------------------------------------------------------
// Configuration

struct RunConfig {
	std::filesystem::path data_dir = ".";
	std::filesystem::path out_dir = "run";
	/// Empty means every farm in the manifest.
	std::vector<std::string> farms;
	/// Empty means consecutive year pairs found in each farm's data.
	std::vector<std::pair<int, int>> scenarios;
	std::vector<Method> methods{all_methods.begin(), all_methods.end()};
	ForecastSettings settings = harness_defaults();
	CorrectionRule correction{};
	std::uint64_t seed = 20240601;
	int workers = 1;
	bool write_forecasts = false;

	std::size_t draws = 200;
	double magnitude = 0.1;
	/// Farm used by the sensitivity analysis; first kept farm when empty.
	std::string sensitivity_farm;

	static ForecastSettings harness_defaults() {
		ForecastSettings s;
		s.rls_weighting = VarianceWeighting::swapped;
		s.nu_window = 192;
		s.nu_stride = 48;
		return s;
	}
};

namespace detail {

inline std::vector<std::string> split(const std::string &text, char sep) {
	std::vector<std::string> out;
	std::string cur;
	std::istringstream in(text);
	while (std::getline(in, cur, sep)) {
		const auto b = cur.find_first_not_of(" \t");
		const auto e = cur.find_last_not_of(" \t");
		if (b != std::string::npos) {
			out.push_back(cur.substr(b, e - b + 1));
		}
	}
	return out;
}

inline bool parse_bool(const std::string &v) {
	if (v == "true" || v == "1" || v == "yes" || v == "on") {
		return true;
	}
	if (v == "false" || v == "0" || v == "no" || v == "off") {
		return false;
	}
	throw std::invalid_argument("not a boolean: " + v);
}

inline double parse_real(const std::string &v) {
	std::size_t used = 0;
	const double d = std::stod(v, &used);
	if (used != v.size()) {
		throw std::invalid_argument("not a number: " + v);
	}
	return d;
}

inline long long parse_integer(const std::string &v) {
	std::size_t used = 0;
	const long long i = std::stoll(v, &used);
	if (used != v.size()) {
		throw std::invalid_argument("not an integer: " + v);
	}
	return i;
}

using Setter = std::function<void(RunConfig &, const std::string &)>;
using Getter = std::function<nlohmann::json(const RunConfig &)>;

struct Field {
	Setter set;
	Getter get;
};

inline const std::map<std::string, Field> &config_fields() {
	static const std::map<std::string, Field> fields = [] {
		std::map<std::string, Field> f;
		f["data_dir"] = {[](RunConfig &c, const std::string &v) { c.data_dir = v; },
		                 [](const RunConfig &c) { return nlohmann::json(c.data_dir.generic_string()); }};
		f["out_dir"] = {[](RunConfig &c, const std::string &v) { c.out_dir = v; },
		                [](const RunConfig &c) { return nlohmann::json(c.out_dir.generic_string()); }};
		f["farms"] = {[](RunConfig &c, const std::string &v) { c.farms = v == "all" ? std::vector<std::string>{} : split(v, ','); },
		              [](const RunConfig &c) { return c.farms.empty() ? nlohmann::json("all") : nlohmann::json(c.farms); }};
		f["scenarios"] = {[](RunConfig &c, const std::string &v) {
			                  c.scenarios.clear();
			                  if (v == "all") {
				                  return;
			                  }
			                  for (const auto &pair : split(v, ',')) {
				                  const auto years = split(pair, ':');
				                  if (years.size() != 2) {
					                  throw std::invalid_argument("scenario must be TRAIN:TEST, got " + pair);
				                  }
				                  c.scenarios.emplace_back(static_cast<int>(parse_integer(years[0])),
				                                           static_cast<int>(parse_integer(years[1])));
			                  }
		                  },
		                  [](const RunConfig &c) {
			                  if (c.scenarios.empty()) {
				                  return nlohmann::json("all");
			                  }
			                  std::string s;
			                  for (const auto &[a, b] : c.scenarios) {
				                  s += (s.empty() ? "" : ",") + std::to_string(a) + ":" + std::to_string(b);
			                  }
			                  return nlohmann::json(s);
		                  }};
		f["methods"] = {[](RunConfig &c, const std::string &v) {
			                c.methods.clear();
			                if (v == "all") {
				                c.methods.assign(all_methods.begin(), all_methods.end());
				                return;
			                }
			                for (const auto &name : split(v, ',')) {
				                c.methods.push_back(parse_method(name));
			                }
			                std::sort(c.methods.begin(), c.methods.end());
			                c.methods.erase(std::unique(c.methods.begin(), c.methods.end()), c.methods.end());
		                },
		                [](const RunConfig &c) {
			                std::vector<std::string> names;
			                for (Method m : c.methods) {
				                names.emplace_back(method_name(m));
			                }
			                return nlohmann::json(names);
		                }};
		const auto real = [&f](const std::string &key, auto member) {
			f[key] = {[member](RunConfig &c, const std::string &v) { member(c) = parse_real(v); },
			          [member](const RunConfig &c) { return nlohmann::json(member(const_cast<RunConfig &>(c))); }};
		};
		const auto integer = [&f](const std::string &key, auto member) {
			f[key] = {[member](RunConfig &c, const std::string &v) {
				          member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_integer(v));
			          },
			          [member](const RunConfig &c) { return nlohmann::json(member(const_cast<RunConfig &>(c))); }};
		};
		const auto boolean = [&f](const std::string &key, auto member) {
			f[key] = {[member](RunConfig &c, const std::string &v) { member(c) = parse_bool(v); },
			          [member](const RunConfig &c) { return nlohmann::json(member(const_cast<RunConfig &>(c))); }};
		};
		real("eps", [](RunConfig &c) -> double & { return c.settings.eps; });
		f["lambda"] = {[](RunConfig &c, const std::string &v) { c.settings.rls_lambda = c.settings.nr_lambda = parse_real(v); },
		               [](const RunConfig &c) {
			               return c.settings.rls_lambda == c.settings.nr_lambda ? nlohmann::json(c.settings.rls_lambda)
			                                                                  : nlohmann::json(nullptr);
		               }};
		real("rls_lambda", [](RunConfig &c) -> double & { return c.settings.rls_lambda; });
		real("nr_lambda", [](RunConfig &c) -> double & { return c.settings.nr_lambda; });
		real("guard", [](RunConfig &c) -> double & { return c.settings.rls_guard; });
		real("prior_scale", [](RunConfig &c) -> double & { return c.settings.bayes_prior.prior_scale; });
		real("alpha", [](RunConfig &c) -> double & { return c.settings.bayes_prior.alpha0; });
		real("beta", [](RunConfig &c) -> double & { return c.settings.bayes_prior.beta0; });
		real("lambda_theta", [](RunConfig &c) -> double & { return c.settings.bayes_prior.lambda_theta; });
		real("lambda_z", [](RunConfig &c) -> double & { return c.settings.bayes_prior.lambda_z; });
		real("gamma", [](RunConfig &c) -> double & { return c.settings.nu.gamma; });
		real("nu_lo", [](RunConfig &c) -> double & { return c.settings.nu.nu_lo; });
		real("nu_hi", [](RunConfig &c) -> double & { return c.settings.nu.nu_hi; });
		integer("p_min", [](RunConfig &c) -> int & { return c.settings.p_min; });
		integer("p_max", [](RunConfig &c) -> int & { return c.settings.p_max; });
		integer("nu_window", [](RunConfig &c) -> int & { return c.settings.nu_window; });
		integer("nu_stride", [](RunConfig &c) -> int & { return c.settings.nu_stride; });
		boolean("nr_prime_hessian", [](RunConfig &c) -> bool & { return c.settings.nr_prime_hessian; });
		f["rls_weighting"] = {[](RunConfig &c, const std::string &v) {
			                      if (v == "as_printed") {
				                      c.settings.rls_weighting = VarianceWeighting::as_printed;
			                      } else if (v == "swapped") {
				                      c.settings.rls_weighting = VarianceWeighting::swapped;
			                      } else {
				                      throw std::invalid_argument("rls_weighting must be as_printed or swapped");
			                      }
		                      },
		                      [](const RunConfig &c) {
			                      return nlohmann::json(c.settings.rls_weighting == VarianceWeighting::as_printed ? "as_printed"
			                                                                                                     : "swapped");
		                      }};
		f["predictive"] = {[](RunConfig &c, const std::string &v) {
			                   if (v == "gaussian") {
				                   c.settings.predictive = PredictiveForm::gaussian;
			                   } else if (v == "student_t") {
				                   c.settings.predictive = PredictiveForm::student_t;
			                   } else {
				                   throw std::invalid_argument("predictive must be gaussian or student_t");
			                   }
		                   },
		                   [](const RunConfig &c) {
			                   return nlohmann::json(c.settings.predictive == PredictiveForm::gaussian ? "gaussian" : "student_t");
		                   }};
		real("offer_sign", [](RunConfig &c) -> double & { return c.correction.offer_sign; });
		real("bid_sign", [](RunConfig &c) -> double & { return c.correction.bid_sign; });
		f["seed"] = {[](RunConfig &c, const std::string &v) { c.seed = std::stoull(v); },
		             [](const RunConfig &c) { return nlohmann::json(c.seed); }};
		integer("workers", [](RunConfig &c) -> int & { return c.workers; });
		boolean("write_forecasts", [](RunConfig &c) -> bool & { return c.write_forecasts; });
		integer("draws", [](RunConfig &c) -> std::size_t & { return c.draws; });
		real("magnitude", [](RunConfig &c) -> double & { return c.magnitude; });
		f["sensitivity_farm"] = {[](RunConfig &c, const std::string &v) { c.sensitivity_farm = v; },
		                         [](const RunConfig &c) { return nlohmann::json(c.sensitivity_farm); }};
		return f;
	}();
	return fields;
}

} // namespace detail

inline std::vector<std::string> config_keys() {
	std::vector<std::string> keys;
	for (const auto &[k, _] : detail::config_fields()) {
		keys.push_back(k);
	}
	return keys;
}

inline void apply_setting(RunConfig &config, const std::string &key, const std::string &value) {
	const auto &fields = detail::config_fields();
	const auto it = fields.find(key);
	if (it == fields.end()) {
		throw std::invalid_argument("unknown configuration key: " + key);
	}
	try {
		it->second.set(config, value);
	} catch (const std::invalid_argument &e) {
		throw std::invalid_argument("configuration key '" + key + "': " + e.what());
	} catch (const std::out_of_range &) {
		throw std::invalid_argument("configuration key '" + key + "': value out of range");
	}
}

/// key = value lines; '#' starts a comment.
inline void load_config_file(RunConfig &config, const std::filesystem::path &path) {
	std::ifstream in(path);
	if (!in) {
		throw std::runtime_error("cannot open config " + path.string());
	}
	std::string line;
	std::size_t line_no = 0;
	while (std::getline(in, line)) {
		++line_no;
		line = line.substr(0, line.find('#'));
		const auto eq = line.find('=');
		if (line.find_first_not_of(" \t\r") == std::string::npos) {
			continue;
		}
		if (eq == std::string::npos) {
			throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
		}
		const auto key = detail::split(line.substr(0, eq), '\n');
		const auto value = detail::split(line.substr(eq + 1), '\r');
		apply_setting(config, key.empty() ? "" : key[0], value.empty() ? "" : value[0]);
	}
}

inline void validate(const RunConfig &config) {
	if (config.methods.empty()) {
		throw std::invalid_argument("no methods selected");
	}
	if (config.workers < 1) {
		throw std::invalid_argument("workers must be >= 1");
	}
	if (!(config.magnitude >= 0.0)) {
		throw std::invalid_argument("magnitude must be nonnegative");
	}
	if (config.settings.nu_window < 1 || config.settings.nu_stride < 1) {
		throw std::invalid_argument("nu_window and nu_stride must be >= 1");
	}
	config.settings.nu.validate();
}

inline nlohmann::json config_to_json(const RunConfig &config) {
	nlohmann::json out = nlohmann::json::object();
	for (const auto &[k, field] : detail::config_fields()) {
		out[k] = field.get(config);
	}
	return out;
}

/// Keys whose effective value differs from the defaults.
inline nlohmann::json config_overrides(const RunConfig &config) {
	const auto defaults = config_to_json(RunConfig{});
	const auto current = config_to_json(config);
	nlohmann::json out = nlohmann::json::object();
	for (const auto &[k, v] : current.items()) {
		if (defaults.at(k) != v) {
			out[k] = v;
		}
	}
	return out;
}

// ---------------------------------------------------------------------------
// Per-case evaluation

/// Methods to run: the requested ones plus the persistence benchmark.
inline std::vector<Method> with_benchmark(std::vector<Method> methods) {
	if (std::find(methods.begin(), methods.end(), Method::persistence) == methods.end()) {
		methods.push_back(Method::persistence);
	}
	std::sort(methods.begin(), methods.end());
	return methods;
}

struct MethodStream {
	std::vector<std::optional<PredictiveCdf>> forecasts;
	UpdateCounters counters;
	double final_nu = 1.0;
};

inline MethodStream stream_forecasts(Forecaster forecaster, std::span<const double> test_x) {
	MethodStream out;
	out.forecasts.reserve(test_x.size());
	for (double x : test_x) {
		out.forecasts.push_back(forecaster.step(x));
	}
	out.counters = forecaster.counters();
	out.final_nu = forecaster.nu();
	return out;
}

struct CaseResult {
	std::string farm;
	int train_year = 0;
	int test_year = 0;
	double capacity = 0.0;
	int order = 0;
	std::size_t n_eval = 0;
	/// Indexed by method_index; NaN for methods not run.
	std::array<double, 7> crps{};
	std::array<double, 7> final_nu{};
	std::array<std::vector<double>, 7> reliability{};

	std::string label() const { return farm + "/" + std::to_string(train_year) + "-" + std::to_string(test_year); }
};

/// Indices where every listed stream has a forecast and the observation is present.
inline std::vector<std::size_t> common_times(const std::vector<const MethodStream *> &streams, std::span<const double> obs) {
	std::vector<std::size_t> out;
	for (std::size_t t = 0; t < obs.size(); ++t) {
		if (is_missing(obs[t])) {
			continue;
		}
		bool all = true;
		for (const auto *s : streams) {
			all = all && s->forecasts[t].has_value();
		}
		if (all) {
			out.push_back(t);
		}
	}
	return out;
}

inline double crps_on(const MethodStream &s, std::span<const double> obs, const std::vector<std::size_t> &times) {
	double acc = 0.0;
	for (std::size_t t : times) {
		acc += crps_single(*s.forecasts[t], obs[t]);
	}
	return acc / static_cast<double>(times.size());
}

struct PreparedCase {
	std::vector<double> train;
	std::vector<double> test;
	std::vector<std::int64_t> test_times;
	double capacity = 0.0;
};

inline std::optional<PreparedCase> prepare_case(const FarmData &farm, int train_year, int test_year, double eps) {
	const auto [tr0, tr1] = year_range(farm.timestamps, train_year);
	const auto [te0, te1] = year_range(farm.timestamps, test_year);
	if (tr0 >= tr1 || te0 >= te1) {
		return std::nullopt;
	}
	PreparedCase c;
	const std::span<const double> power{farm.power_mw};
	c.capacity = estimate_capacity(power.subspan(tr0, tr1 - tr0));
	c.train = to_bounded(power.subspan(tr0, tr1 - tr0), c.capacity, eps);
	c.test = to_bounded(power.subspan(te0, te1 - te0), c.capacity, eps);
	c.test_times.assign(farm.timestamps.begin() + static_cast<std::ptrdiff_t>(te0),
	                    farm.timestamps.begin() + static_cast<std::ptrdiff_t>(te1));
	return c;
}

inline void write_forecast_stream(const std::filesystem::path &path, Method method, const MethodStream &s,
                                  const std::vector<std::int64_t> &times, bool append) {
	std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
	if (!append) {
		write_forecast_header(out);
	}
	for (std::size_t t = 0; t < s.forecasts.size(); ++t) {
		if (s.forecasts[t]) {
			write_forecast_row(out, format_rfc3339(times[t]), method, *s.forecasts[t]);
		}
	}
}

inline void write_observations(const std::filesystem::path &path, std::span<const double> obs,
                               const std::vector<std::int64_t> &times) {
	std::ofstream out(path);
	out << "time,value\n";
	for (std::size_t t = 0; t < obs.size(); ++t) {
		out << format_rfc3339(times[t]) << ',' << detail::format_field(obs[t]) << '\n';
	}
}

/// Train on the train year, stream the test year and score every method on the common time set.
inline CaseResult evaluate_case(const std::string &farm_id, int train_year, int test_year, const PreparedCase &prepared,
                                const RunConfig &config, const std::filesystem::path *forecast_dir = nullptr) {
	CaseResult result;
	result.farm = farm_id;
	result.train_year = train_year;
	result.test_year = test_year;
	result.capacity = prepared.capacity;
	result.crps.fill(missing_value());
	result.final_nu.fill(missing_value());

	const auto methods = with_benchmark(config.methods);
	const auto ctx = prepare_training(prepared.train, config.settings);
	result.order = ctx.p;
	std::array<std::optional<MethodStream>, 7> streams;
	for (Method m : methods) {
		streams[method_index(m)] = stream_forecasts(train_forecaster(m, prepared.train, ctx, config.settings), prepared.test);
	}
	std::vector<const MethodStream *> present;
	for (Method m : methods) {
		present.push_back(&*streams[method_index(m)]);
	}
	const auto times = common_times(present, prepared.test);
	if (times.empty()) {
		throw std::runtime_error("no common forecast times in test year " + std::to_string(test_year));
	}
	result.n_eval = times.size();
	const auto levels = reliability_levels();
	for (Method m : methods) {
		const auto &s = *streams[method_index(m)];
		result.crps[method_index(m)] = crps_on(s, prepared.test, times);
		result.final_nu[method_index(m)] = s.final_nu;
		if (times.size() >= 100) {
			std::vector<PredictiveCdf> f;
			std::vector<double> o;
			for (std::size_t t : times) {
				f.push_back(*s.forecasts[t]);
				o.push_back(prepared.test[t]);
			}
			result.reliability[method_index(m)] = reliability_curve(f, o, levels, config.seed);
		}
	}
	if (forecast_dir) {
		const auto stem = farm_id + "_" + std::to_string(train_year) + "_" + std::to_string(test_year);
		bool append = false;
		for (Method m : methods) {
			write_forecast_stream(*forecast_dir / (stem + "_forecasts.csv"), m, *streams[method_index(m)],
			                      prepared.test_times, append);
			append = true;
		}
		write_observations(*forecast_dir / (stem + "_observations.csv"), prepared.test, prepared.test_times);
	}
	return result;
}

// ---------------------------------------------------------------------------
// Experiment

struct FarmOutcome {
	std::string farm;
	std::optional<FarmFilterResult> filter;
	bool kept = true;
	std::vector<CaseResult> cases;
	std::vector<std::string> notes;
	std::optional<std::string> failure;
};

struct EvalReport {
	std::vector<FarmOutcome> farms;
	std::vector<Method> methods;
};

inline std::vector<FarmEntry> selected_farms(const RunConfig &config) {
	auto all = read_manifest(config.data_dir / "manifest.json");
	if (config.farms.empty()) {
		return all;
	}
	std::vector<FarmEntry> out;
	for (const auto &id : config.farms) {
		const auto it = std::find_if(all.begin(), all.end(), [&](const FarmEntry &e) { return e.id == id; });
		if (it == all.end()) {
			throw std::invalid_argument("farm not in manifest: " + id);
		}
		out.push_back(*it);
	}
	std::sort(out.begin(), out.end(), [](const FarmEntry &a, const FarmEntry &b) { return a.id < b.id; });
	return out;
}

inline std::vector<std::pair<int, int>> farm_scenarios(const FarmData &farm, const RunConfig &config) {
	if (!config.scenarios.empty()) {
		return config.scenarios;
	}
	std::vector<int> years;
	for (std::size_t i = 0; i < farm.timestamps.size(); ++i) {
		if (!is_missing(farm.power_mw[i])) {
			years.push_back(year_of(farm.timestamps[i]));
		}
	}
	return build_scenarios(std::move(years));
}

inline FarmOutcome process_farm(const FarmEntry &entry, const RunConfig &config, const std::filesystem::path *forecast_dir) {
	FarmOutcome out;
	out.farm = entry.id;
	try {
		const auto farm = load_farm(config.data_dir, entry, config.correction);
		if (farm.power_mw.size() >= 2 * rolling_max_window) {
			out.filter = outlier_farm_filter(farm.power_mw);
			out.kept = out.filter->keep;
		} else {
			out.notes.push_back("outlier filter not applied: less than six months of data");
		}
		for (const auto &[train_year, test_year] : farm_scenarios(farm, config)) {
			const auto prepared = prepare_case(farm, train_year, test_year, config.settings.eps);
			if (!prepared) {
				out.notes.push_back("scenario " + std::to_string(train_year) + "-" + std::to_string(test_year) +
				                    " skipped: year not present");
				continue;
			}
			out.cases.push_back(evaluate_case(entry.id, train_year, test_year, *prepared, config, forecast_dir));
		}
	} catch (const std::exception &e) {
		out.failure = e.what();
		out.cases.clear();
	}
	return out;
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads; each slot written by exactly one thread.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn &&fn) {
	const auto count = static_cast<std::size_t>(std::max(1, workers));
	if (count == 1 || n <= 1) {
		for (std::size_t i = 0; i < n; ++i) {
			fn(i);
		}
		return;
	}
	std::atomic<std::size_t> next{0};
	std::vector<std::thread> pool;
	for (std::size_t w = 0; w < std::min(count, n); ++w) {
		pool.emplace_back([&] {
			for (std::size_t i = next++; i < n; i = next++) {
				fn(i);
			}
		});
	}
	for (auto &t : pool) {
		t.join();
	}
}

inline EvalReport evaluate_farms(const RunConfig &config, const std::filesystem::path *forecast_dir = nullptr) {
	validate(config);
	const auto farms = selected_farms(config);
	EvalReport report;
	report.methods = with_benchmark(config.methods);
	report.farms.resize(farms.size());
	parallel_for(farms.size(), config.workers,
	             [&](std::size_t i) { report.farms[i] = process_farm(farms[i], config, forecast_dir); });
	return report;
}

// ---------------------------------------------------------------------------
// Reports

inline std::vector<const CaseResult *> report_cases(const EvalReport &report, bool include_outliers) {
	std::vector<const CaseResult *> out;
	for (const auto &f : report.farms) {
		if (f.failure || (!include_outliers && !f.kept)) {
			continue;
		}
		for (const auto &c : f.cases) {
			out.push_back(&c);
		}
	}
	return out;
}

inline double percent(double v) { return 100.0 * v; }

inline void write_crps_table(const std::filesystem::path &path, const EvalReport &report, bool include_outliers) {
	const auto cases = report_cases(report, include_outliers);
	std::vector<std::string> scenarios;
	for (const auto *c : cases) {
		scenarios.push_back(std::to_string(c->train_year) + "-" + std::to_string(c->test_year));
	}
	std::sort(scenarios.begin(), scenarios.end());
	scenarios.erase(std::unique(scenarios.begin(), scenarios.end()), scenarios.end());
	scenarios.push_back("all");

	std::ofstream out(path);
	out << "scenario,method,crps_pct,skill_pct,cases\n";
	const std::size_t bench = method_index(Method::persistence);
	for (const auto &scenario : scenarios) {
		for (Method m : report.methods) {
			double crps = 0.0;
			double sk = 0.0;
			std::size_t n = 0;
			for (const auto *c : cases) {
				const auto label = std::to_string(c->train_year) + "-" + std::to_string(c->test_year);
				if (scenario != "all" && label != scenario) {
					continue;
				}
				crps += c->crps[method_index(m)];
				sk += skill(c->crps[method_index(m)], c->crps[bench]);
				++n;
			}
			if (n == 0) {
				continue;
			}
			out << scenario << ',' << method_name(m) << ',' << detail::format_double(percent(crps / static_cast<double>(n))) << ','
			    << detail::format_double(percent(sk / static_cast<double>(n))) << ',' << n << '\n';
		}
	}
}

inline void write_rank_table(const std::filesystem::path &path, const EvalReport &report) {
	const auto cases = report_cases(report, false);
	std::vector<std::vector<double>> scores;
	for (const auto *c : cases) {
		std::vector<double> row;
		for (Method m : report.methods) {
			row.push_back(c->crps[method_index(m)]);
		}
		scores.push_back(std::move(row));
	}
	const auto counts = rank_table(scores);
	std::ofstream out(path);
	out << "method";
	for (std::size_t r = 1; r <= report.methods.size(); ++r) {
		out << ",rank_" << r;
	}
	out << '\n';
	for (std::size_t m = 0; m < report.methods.size(); ++m) {
		out << method_name(report.methods[m]);
		for (std::size_t r = 0; r < report.methods.size(); ++r) {
			out << ',' << (counts.empty() ? 0 : counts[m][r]);
		}
		out << '\n';
	}
}

inline void write_skill_by_farm(const std::filesystem::path &path, const EvalReport &report) {
	std::ofstream out(path);
	out << "farm,train_year,test_year,method,crps_pct,skill_pct,n_eval,kept\n";
	const std::size_t bench = method_index(Method::persistence);
	for (const auto &f : report.farms) {
		for (const auto &c : f.cases) {
			for (Method m : report.methods) {
				out << f.farm << ',' << c.train_year << ',' << c.test_year << ',' << method_name(m) << ','
				    << detail::format_double(percent(c.crps[method_index(m)])) << ','
				    << detail::format_double(percent(skill(c.crps[method_index(m)], c.crps[bench]))) << ',' << c.n_eval << ','
				    << (f.kept ? "true" : "false") << '\n';
			}
		}
	}
}

inline void write_json(const std::filesystem::path &path, const nlohmann::json &doc) {
	std::ofstream out(path);
	if (!out) {
		throw std::runtime_error("cannot write " + path.string());
	}
	out << doc.dump(2) << '\n';
}

inline void write_reliability(const std::filesystem::path &dir, const EvalReport &report) {
	std::filesystem::create_directories(dir);
	const auto levels = reliability_levels();
	for (const auto &f : report.farms) {
		if (f.failure) {
			continue;
		}
		nlohmann::json doc{{"farm", f.farm}, {"kept", f.kept}, {"levels", levels}, {"cases", nlohmann::json::array()}};
		for (const auto &c : f.cases) {
			nlohmann::json curves = nlohmann::json::object();
			for (Method m : report.methods) {
				if (!c.reliability[method_index(m)].empty()) {
					curves[std::string(method_name(m))] = c.reliability[method_index(m)];
				}
			}
			doc["cases"].push_back(
			    {{"train_year", c.train_year}, {"test_year", c.test_year}, {"n", c.n_eval}, {"curves", curves}});
		}
		write_json(dir / (f.farm + ".json"), doc);
	}
}

inline nlohmann::json envelope_report(const EvalReport &report) {
	const auto cases = report_cases(report, false);
	nlohmann::json doc{{"levels", reliability_levels()}, {"methods", nlohmann::json::object()}};
	for (Method m : report.methods) {
		std::vector<std::vector<double>> curves;
		std::vector<std::string> labels;
		for (const auto *c : cases) {
			if (!c->reliability[method_index(m)].empty()) {
				curves.push_back(c->reliability[method_index(m)]);
				labels.push_back(c->label());
			}
		}
		if (curves.size() < 5) {
			continue;
		}
		const auto env = functional_envelope(curves);
		std::vector<std::string> outliers;
		for (std::size_t i : env.outliers) {
			outliers.push_back(labels[i]);
		}
		doc["methods"][std::string(method_name(m))] = {{"curves", curves.size()},
		                                              {"median", env.median},
		                                              {"lower_quartile", env.lower_quartile},
		                                              {"upper_quartile", env.upper_quartile},
		                                              {"outer_lower", env.outer_lower},
		                                              {"outer_upper", env.outer_upper},
		                                              {"outliers", outliers}};
	}
	return doc;
}

inline nlohmann::json run_manifest(const RunConfig &config, const EvalReport &report) {
	nlohmann::json farms = nlohmann::json::array();
	for (const auto &f : report.farms) {
		nlohmann::json entry{{"id", f.farm}, {"kept", f.kept}, {"notes", f.notes}};
		if (f.filter) {
			entry["filter"] = {{"rolling_max_variance", f.filter->rolling_max_variance},
			                   {"quantile_width", f.filter->quantile_width},
			                   {"points", f.filter->points}};
		}
		if (f.failure) {
			entry["failure"] = *f.failure;
		}
		nlohmann::json cases = nlohmann::json::array();
		for (const auto &c : f.cases) {
			nlohmann::json nu = nlohmann::json::object();
			for (Method m : report.methods) {
				nu[std::string(method_name(m))] = c.final_nu[method_index(m)];
			}
			cases.push_back({{"train_year", c.train_year},
			                 {"test_year", c.test_year},
			                 {"capacity_mw", c.capacity},
			                 {"order", c.order},
			                 {"n_eval", c.n_eval},
			                 {"final_nu", nu}});
		}
		entry["cases"] = cases;
		farms.push_back(entry);
	}
	return {{"tool", "boundcast"},
	        {"version", boundcast_version},
	        {"config", config_to_json(config)},
	        {"overrides", config_overrides(config)},
	        {"seed", config.seed},
	        {"farms", farms}};
}

/**
 * Full experiment: evaluates every selected farm and writes the report files
 * under config.out_dir. Throws when no farm-scenario could be evaluated.
 */
inline EvalReport run_experiment(const RunConfig &config) {
	std::filesystem::create_directories(config.out_dir);
	std::optional<std::filesystem::path> forecast_dir;
	if (config.write_forecasts) {
		forecast_dir = config.out_dir / "forecasts";
		std::filesystem::create_directories(*forecast_dir);
	}
	auto report = evaluate_farms(config, forecast_dir ? &*forecast_dir : nullptr);
	for (const auto &f : report.farms) {
		if (f.failure) {
			std::cerr << "farm " << f.farm << " failed: " << *f.failure << '\n';
		}
	}
	write_json(config.out_dir / "manifest.json", run_manifest(config, report));
	if (report_cases(report, true).empty()) {
		throw std::runtime_error("empty evaluation: no farm had both a training and a test year");
	}
	write_crps_table(config.out_dir / "crps_table.csv", report, false);
	write_crps_table(config.out_dir / "crps_table_all.csv", report, true);
	write_rank_table(config.out_dir / "rank_table.csv", report);
	write_skill_by_farm(config.out_dir / "skill_by_farm.csv", report);
	write_reliability(config.out_dir / "reliability", report);
	write_json(config.out_dir / "reliability_envelopes.json", envelope_report(report));
	return report;
}

// ---------------------------------------------------------------------------
// Stand-alone evaluation of written forecasts

struct ForecastRow {
	std::string time;
	Method method = Method::persistence;
	PredictiveCdf cdf;
};

/**
 * Reads a forecast CSV and rebuilds each Gaussian predictive from its mu,
 * sigma and nu columns (Persistence rows are on the identity scale).
 */
inline std::vector<ForecastRow> read_forecast_csv(const std::filesystem::path &path, double eps) {
	std::ifstream in(path);
	if (!in) {
		throw std::runtime_error("cannot open " + path.string());
	}
	std::string line;
	if (!std::getline(in, line)) {
		throw std::invalid_argument("empty forecast file " + path.string());
	}
	const auto header = detail::split_csv_line(line);
	const auto column = [&](const std::string &name) {
		const auto it = std::find(header.begin(), header.end(), name);
		if (it == header.end()) {
			throw std::invalid_argument("forecast file lacks column " + name);
		}
		return static_cast<std::size_t>(it - header.begin());
	};
	const std::size_t c_time = column("time"), c_method = column("method"), c_mu = column("mu"),
	                  c_sigma = column("sigma"), c_nu = column("nu");
	std::vector<ForecastRow> rows;
	while (std::getline(in, line)) {
		if (line.empty()) {
			continue;
		}
		const auto f = detail::split_csv_line(line);
		if (f.size() != header.size()) {
			throw std::invalid_argument("forecast file row has wrong field count: " + line.substr(0, 40));
		}
		const Method m = parse_method(f[c_method]);
		const double mu = detail::parse_field(f[c_mu]);
		const double sigma = detail::parse_field(f[c_sigma]);
		const double nu = detail::parse_field(f[c_nu]);
		rows.push_back({f[c_time], m,
		                m == Method::persistence ? PredictiveCdf::identity(eps, mu, sigma)
		                                         : PredictiveCdf{GlogitMap{nu, eps}, mu, sigma}});
	}
	return rows;
}

/// time,value file of bounded observations.
inline std::map<std::string, double> read_observation_csv(const std::filesystem::path &path) {
	std::ifstream in(path);
	if (!in) {
		throw std::runtime_error("cannot open " + path.string());
	}
	std::string line;
	std::getline(in, line);
	std::map<std::string, double> out;
	while (std::getline(in, line)) {
		if (line.empty()) {
			continue;
		}
		const auto f = detail::split_csv_line(line);
		if (f.size() != 2) {
			throw std::invalid_argument("observation row must be time,value");
		}
		out[f[0]] = detail::parse_field(f[1]);
	}
	return out;
}

struct FileScore {
	Method method = Method::persistence;
	double crps = 0.0;
	/// NaN when the file has no Persistence rows.
	double skill = 0.0;
	std::size_t n = 0;
};

/// Mean CRPS per method over the times every method forecast and the observation is present.
inline std::vector<FileScore> score_forecast_rows(const std::vector<ForecastRow> &rows,
                                                  const std::map<std::string, double> &obs) {
	std::map<Method, std::map<std::string, const PredictiveCdf *>> by_method;
	for (const auto &r : rows) {
		by_method[r.method][r.time] = &r.cdf;
	}
	if (by_method.empty()) {
		throw std::invalid_argument("no forecasts to evaluate");
	}
	std::vector<std::string> times;
	for (const auto &[t, y] : by_method.begin()->second) {
		const auto o = obs.find(t);
		if (o == obs.end() || is_missing(o->second)) {
			continue;
		}
		bool all = true;
		for (const auto &[m, f] : by_method) {
			all = all && f.count(t) > 0;
		}
		if (all) {
			times.push_back(t);
		}
	}
	if (times.empty()) {
		throw std::runtime_error("empty evaluation: forecasts and observations share no times");
	}
	std::vector<FileScore> out;
	for (const auto &[m, f] : by_method) {
		double acc = 0.0;
		for (const auto &t : times) {
			acc += crps_single(*f.at(t), obs.at(t));
		}
		out.push_back({m, acc / static_cast<double>(times.size()), missing_value(), times.size()});
	}
	const auto bench = std::find_if(out.begin(), out.end(), [](const FileScore &s) { return s.method == Method::persistence; });
	if (bench != out.end()) {
		for (auto &s : out) {
			s.skill = skill(s.crps, bench->crps);
		}
	}
	return out;
}

/// Fitted parameters of a trained forecaster.
inline nlohmann::json forecaster_summary(const Forecaster &f) {
	nlohmann::json out{{"method", method_name(f.method())}, {"order", f.order()}, {"nu", f.nu()}};
	std::visit(
	    [&](const auto &m) {
		    using T = std::decay_t<decltype(m)>;
		    const auto vec = [](const VectorXd &v) { return std::vector<double>(v.data(), v.data() + v.size()); };
		    if constexpr (std::is_same_v<T, PersistenceModel>) {
			    out["sigma2"] = m.sigma2;
		    } else if constexpr (std::is_same_v<T, StaticArModel>) {
			    out["theta"] = vec(m.ar.theta);
			    out["sigma2"] = m.ar.sigma2;
		    } else if constexpr (std::is_same_v<T, RlsModel>) {
			    out["theta"] = vec(m.rls.theta);
			    out["sigma2"] = m.rls.sigma2;
		    } else if constexpr (std::is_same_v<T, NrModel>) {
			    out["theta"] = vec(m.nr.theta());
			    out["sigma2"] = m.nr.sigma2();
		    } else if constexpr (std::is_same_v<T, BayesModel>) {
			    out["theta"] = vec(m.bayes.mu);
			    out["sigma2"] = m.bayes.sigma2();
			    out["alpha"] = m.bayes.alpha;
			    out["beta"] = m.bayes.beta;
		    }
	    },
	    f.model());
	return out;
}

// ---------------------------------------------------------------------------
// Sensitivity

enum class Target { mu, sigma2, P, nu };
inline constexpr std::array<Target, 4> all_targets{Target::mu, Target::sigma2, Target::P, Target::nu};

inline std::string_view target_name(Target t) noexcept {
	switch (t) {
	case Target::mu: return "mu";
	case Target::sigma2: return "sigma2";
	case Target::P: return "P";
	case Target::nu: return "nu";
	}
	return "unknown";
}

inline Target parse_target(std::string_view name) {
	for (Target t : all_targets) {
		if (target_name(t) == name) {
			return t;
		}
	}
	throw std::invalid_argument("unknown sensitivity target: " + std::string(name));
}

/// Whether the method carries a parameter corresponding to the target.
inline bool has_target(Method m, Target t) {
	switch (m) {
	case Method::persistence: return false;
	case Method::ar_l: return t == Target::mu || t == Target::sigma2;
	case Method::ar_lnu: return t != Target::P;
	default: return true;
	}
}

namespace detail {

inline double jitter(double v, double magnitude, CounterRng &rng) { return v * (1.0 + magnitude * rng.normal()); }

inline VectorXd jitter(const VectorXd &v, double magnitude, CounterRng &rng) {
	VectorXd out = v;
	for (Eigen::Index i = 0; i < out.size(); ++i) {
		out(i) = jitter(out(i), magnitude, rng);
	}
	return out;
}

/// Perturbs the Cholesky factor element-wise so the result stays symmetric positive semi-definite.
inline MatrixXd jitter_spd(const MatrixXd &P, double magnitude, CounterRng &rng) {
	const Eigen::LDLT<MatrixXd> ldlt(P);
	MatrixXd L = ldlt.matrixL();
	const VectorXd d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
	L = ldlt.transpositionsP().transpose() * (L * d.asDiagonal());
	for (Eigen::Index j = 0; j < L.cols(); ++j) {
		for (Eigen::Index i = 0; i < L.rows(); ++i) {
			if (L(i, j) != 0.0) {
				L(i, j) = jitter(L(i, j), magnitude, rng);
			}
		}
	}
	return L * L.transpose();
}

} // namespace detail

/// Multiplicative Gaussian disturbance of one parameter group of a trained forecaster.
inline void perturb(Forecaster &f, Target target, double magnitude, CounterRng &rng) {
	const double nu_lo = f.settings().nu.nu_lo;
	const double nu_hi = f.settings().nu.nu_hi;
	const auto clamp_nu = [&](double v) { return std::clamp(v, nu_lo, nu_hi); };
	const auto floor_var = [](double v) { return std::max(v, min_variance); };
	std::visit(
	    [&](auto &m) {
		    using T = std::decay_t<decltype(m)>;
		    if constexpr (std::is_same_v<T, StaticArModel>) {
			    if (target == Target::mu) {
				    m.ar.theta = detail::jitter(m.ar.theta, magnitude, rng);
			    } else if (target == Target::sigma2) {
				    m.ar.sigma2 = floor_var(detail::jitter(m.ar.sigma2, magnitude, rng));
			    } else if (target == Target::nu) {
				    m.nu = clamp_nu(detail::jitter(m.nu, magnitude, rng));
			    }
		    } else if constexpr (std::is_same_v<T, RlsModel>) {
			    if (target == Target::mu) {
				    m.rls.theta = detail::jitter(m.rls.theta, magnitude, rng);
			    } else if (target == Target::sigma2) {
				    m.rls.sigma2 = floor_var(detail::jitter(m.rls.sigma2, magnitude, rng));
			    } else if (target == Target::P) {
				    m.rls.P = detail::jitter_spd(m.rls.P, magnitude, rng);
			    } else {
				    m.nu = clamp_nu(detail::jitter(m.nu, magnitude, rng));
			    }
		    } else if constexpr (std::is_same_v<T, NrModel>) {
			    auto &w = m.nr.w;
			    const Eigen::Index n = w.size();
			    if (target == Target::mu) {
				    w.head(n - 2) = detail::jitter(VectorXd(w.head(n - 2)), magnitude, rng);
			    } else if (target == Target::sigma2) {
				    w(n - 2) = std::max(detail::jitter(w(n - 2), magnitude, rng), m.nr.sigma2_floor);
			    } else if (target == Target::P) {
				    m.nr.hess = detail::jitter_spd(m.nr.hess, magnitude, rng);
			    } else {
				    w(n - 1) = clamp_nu(detail::jitter(w(n - 1), magnitude, rng));
			    }
		    } else if constexpr (std::is_same_v<T, BayesModel>) {
			    if (target == Target::mu) {
				    m.bayes.mu = detail::jitter(m.bayes.mu, magnitude, rng);
			    } else if (target == Target::sigma2) {
				    m.bayes.beta = std::max(detail::jitter(m.bayes.beta, magnitude, rng), min_variance);
			    } else if (target == Target::P) {
				    m.bayes.P = detail::jitter_spd(m.bayes.P, magnitude, rng);
			    } else {
				    m.bayes.nu = clamp_nu(detail::jitter(m.bayes.nu, magnitude, rng));
			    }
		    }
	    },
	    f.model());
}

struct SensitivityResult {
	Method method = Method::bayes_nu;
	Target target = Target::nu;
	/// Skill (percent) of the undisturbed forecaster.
	double baseline = 0.0;
	std::vector<double> skills;
};

/**
 * Disturb the trained state `draws` times, stream the test series each time and
 * record skill (percent) against persistence over the times both forecast.
 */
inline SensitivityResult sensitivity_on_series(std::span<const double> train_x, std::span<const double> test_x,
                                               const TrainingContext &ctx, Method method, Target target,
                                               std::size_t draws, double magnitude, std::uint64_t seed,
                                               const ForecastSettings &settings) {
	if (!has_target(method, target)) {
		throw std::invalid_argument("method " + std::string(method_name(method)) + " has no parameter " +
		                            std::string(target_name(target)));
	}
	const auto bench = stream_forecasts(train_forecaster(Method::persistence, train_x, ctx, settings), test_x);
	const Forecaster trained = train_forecaster(method, train_x, ctx, settings);
	const auto score = [&](const Forecaster &f) {
		const auto s = stream_forecasts(f, test_x);
		const auto times = common_times({&bench, &s}, test_x);
		if (times.empty()) {
			throw std::runtime_error("sensitivity: no common forecast times");
		}
		return percent(skill(crps_on(s, test_x, times), crps_on(bench, test_x, times)));
	};
	SensitivityResult out;
	out.method = method;
	out.target = target;
	out.baseline = score(trained);
	CounterRng rng{seed, 0x5e5u * 16 + method_index(method) * 4 + static_cast<std::uint64_t>(target)};
	for (std::size_t d = 0; d < draws; ++d) {
		Forecaster f = trained;
		perturb(f, target, magnitude, rng);
		out.skills.push_back(score(f));
	}
	return out;
}

inline double spread(const std::vector<double> &v) {
	if (v.empty()) {
		return 0.0;
	}
	const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
	return *hi - *lo;
}

inline void write_sensitivity_csv(const std::filesystem::path &path, const SensitivityResult &r) {
	std::ofstream out(path);
	out << "draw,skill_pct\n";
	out << "baseline," << detail::format_double(r.baseline) << '\n';
	for (std::size_t d = 0; d < r.skills.size(); ++d) {
		out << d << ',' << detail::format_double(r.skills[d]) << '\n';
	}
}

/**
 * Disturbance analysis on one farm and its first scenario for every selected
 * adaptive or static method and every applicable target; writes
 * sensitivity/<method>_<target>.csv and a manifest under out_dir.
 */
inline std::vector<SensitivityResult> run_sensitivity(const RunConfig &config, std::vector<Target> targets = {
                                                                                    all_targets.begin(),
                                                                                    all_targets.end()}) {
	validate(config);
	const auto farms = selected_farms(config);
	if (farms.empty()) {
		throw std::invalid_argument("sensitivity: no farms");
	}
	const FarmEntry *entry = &farms.front();
	if (!config.sensitivity_farm.empty()) {
		const auto it = std::find_if(farms.begin(), farms.end(), [&](const FarmEntry &e) { return e.id == config.sensitivity_farm; });
		if (it == farms.end()) {
			throw std::invalid_argument("sensitivity farm not selected: " + config.sensitivity_farm);
		}
		entry = &*it;
	}
	const auto farm = load_farm(config.data_dir, *entry, config.correction);
	const auto scenarios = farm_scenarios(farm, config);
	if (scenarios.empty()) {
		throw std::runtime_error("sensitivity: farm " + entry->id + " has no train/test scenario");
	}
	const auto [train_year, test_year] = scenarios.front();
	const auto prepared = prepare_case(farm, train_year, test_year, config.settings.eps);
	if (!prepared) {
		throw std::runtime_error("sensitivity: scenario years not present for farm " + entry->id);
	}
	const auto ctx = prepare_training(prepared->train, config.settings);

	std::vector<std::pair<Method, Target>> jobs;
	for (Method m : config.methods) {
		for (Target t : targets) {
			if (has_target(m, t)) {
				jobs.emplace_back(m, t);
			}
		}
	}
	std::vector<SensitivityResult> results(jobs.size());
	parallel_for(jobs.size(), config.workers, [&](std::size_t i) {
		results[i] = sensitivity_on_series(prepared->train, prepared->test, ctx, jobs[i].first, jobs[i].second,
		                                   config.draws, config.magnitude, config.seed, config.settings);
	});

	const auto dir = config.out_dir / "sensitivity";
	std::filesystem::create_directories(dir);
	nlohmann::json summary = nlohmann::json::array();
	for (const auto &r : results) {
		const auto name = std::string(method_name(r.method)) + "_" + std::string(target_name(r.target));
		write_sensitivity_csv(dir / (name + ".csv"), r);
		summary.push_back({{"method", method_name(r.method)},
		                   {"target", target_name(r.target)},
		                   {"baseline_skill_pct", r.baseline},
		                   {"spread_pct", spread(r.skills)},
		                   {"draws", r.skills.size()}});
	}
	write_json(dir / "manifest.json", {{"tool", "boundcast"},
	                                   {"version", boundcast_version},
	                                   {"config", config_to_json(config)},
	                                   {"overrides", config_overrides(config)},
	                                   {"farm", entry->id},
	                                   {"train_year", train_year},
	                                   {"test_year", test_year},
	                                   {"magnitude", config.magnitude},
	                                   {"results", summary}});
	return results;
}

} // namespace boundcast
