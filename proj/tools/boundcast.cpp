// boundcast command-line front end.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "boundcast/datapipe.hpp"
#include "boundcast/harness.hpp"
#include "boundcast/synth.hpp"

namespace fs = std::filesystem;
using namespace boundcast;

namespace {

/// Config-file path plus one string option per RunConfig key; applied after the file.
struct ConfigOptions {
	std::string config_file;
	std::map<std::string, std::string> values;

	void attach(CLI::App *app) {
		app->add_option("--config", config_file, "key = value configuration file")->check(CLI::ExistingFile);
		for (const auto &key : config_keys()) {
			app->add_option("--" + key, values[key], "RunConfig field " + key);
		}
	}

	RunConfig build(const CLI::App *app) const {
		RunConfig config;
		if (!config_file.empty()) {
			load_config_file(config, config_file);
		}
		for (const auto &[key, value] : values) {
			if (app->count("--" + key) > 0) {
				apply_setting(config, key, value);
			}
		}
		validate(config);
		return config;
	}
};

int cmd_synth(const fs::path &out, int farms, std::uint64_t seed, const std::string &start, std::size_t length,
              double capacity, bool stationary, double missing_rate) {
	fs::create_directories(out);
	const auto t0 = parse_rfc3339(start);
	std::vector<FarmEntry> entries;
	nlohmann::json truth = nlohmann::json::array();
	for (int i = 0; i < farms; ++i) {
		auto spec = synthetic_farm(seed, static_cast<std::uint64_t>(i), FarmDraw{!stationary, length});
		spec.missing_rate = missing_rate;
		const auto series = generate(spec);
		char id[32];
		std::snprintf(id, sizeof id, "farm_%03d", i);
		const std::string file = std::string(id) + ".csv";
		write_farm_csv(out / file, synth_records(series.x, capacity, t0));
		entries.push_back({id, file, capacity});
		const auto vec = [](const VectorXd &v) { return std::vector<double>(v.data(), v.data() + v.size()); };
		truth.push_back({{"id", id},
		                 {"p", spec.p},
		                 {"theta_start", vec(spec.theta)},
		                 {"theta_end", vec(spec.theta_end.value_or(spec.theta))},
		                 {"sigma2", spec.sigma2},
		                 {"nu_start", spec.nu.start},
		                 {"nu_end", spec.nu.end},
		                 {"seed", spec.seed}});
	}
	write_manifest(out / "manifest.json", entries,
	               {{"generator", {{"tool", "boundcast"}, {"version", boundcast_version}, {"seed", seed},
	                               {"start", format_rfc3339(t0)}, {"length", length}, {"stationary", stationary},
	                               {"missing_rate", missing_rate}}},
	                {"truth", truth}});
	std::cout << "wrote " << farms << " synthetic farms to " << out.string() << '\n';
	return 0;
}

int cmd_ingest(const RunConfig &config) {
	const auto farms = selected_farms(config);
	fs::create_directories(config.out_dir);
	nlohmann::json report = nlohmann::json::array();
	for (const auto &entry : farms) {
		const auto raw = read_farm_csv(config.data_dir / entry.file);
		const auto grid = materialize_grid(raw);
		std::size_t missing = 0;
		for (const auto &r : grid) {
			missing += is_missing(r.power_mw) ? 1 : 0;
		}
		write_farm_csv(config.out_dir / entry.file, grid);
		report.push_back({{"id", entry.id}, {"rows_in", raw.size()}, {"rows_out", grid.size()}, {"missing_power", missing}});
		std::cout << entry.id << ": " << raw.size() << " rows in, " << grid.size() << " rows out, " << missing
		          << " missing\n";
	}
	write_manifest(config.out_dir / "manifest.json", farms, {{"ingest", report}});
	return 0;
}

int cmd_filter(const RunConfig &config) {
	const auto farms = selected_farms(config);
	fs::create_directories(config.out_dir);
	std::ofstream out(config.out_dir / "farm_filter.csv");
	out << "farm,keep,rolling_max_variance,quantile_width,points\n";
	for (const auto &entry : farms) {
		const auto farm = load_farm(config.data_dir, entry, config.correction);
		const auto r = outlier_farm_filter(farm.power_mw);
		out << entry.id << ',' << (r.keep ? "true" : "false") << ',' << detail::format_double(r.rolling_max_variance) << ','
		    << detail::format_double(r.quantile_width) << ',' << r.points << '\n';
		std::cout << entry.id << (r.keep ? " keep" : " drop") << '\n';
	}
	return 0;
}

int cmd_train(const RunConfig &config, const std::string &farm_id, int year) {
	const auto farms = selected_farms(config);
	const auto it = std::find_if(farms.begin(), farms.end(), [&](const FarmEntry &e) { return farm_id.empty() || e.id == farm_id; });
	if (it == farms.end()) {
		throw std::invalid_argument("farm not found: " + farm_id);
	}
	const auto farm = load_farm(config.data_dir, *it, config.correction);
	if (year == 0) {
		year = year_of(farm.timestamps.front());
	}
	const auto [b, e] = year_range(farm.timestamps, year);
	if (b >= e) {
		throw std::invalid_argument("year " + std::to_string(year) + " not present for farm " + it->id);
	}
	const std::span<const double> power{farm.power_mw};
	const double capacity = estimate_capacity(power.subspan(b, e - b));
	const auto train = to_bounded(power.subspan(b, e - b), capacity, config.settings.eps);
	const auto ctx = prepare_training(train, config.settings);
	nlohmann::json methods = nlohmann::json::array();
	for (Method m : config.methods) {
		methods.push_back(forecaster_summary(train_forecaster(m, train, ctx, config.settings)));
	}
	fs::create_directories(config.out_dir);
	const auto path = config.out_dir / ("train_" + it->id + "_" + std::to_string(year) + ".json");
	write_json(path, {{"farm", it->id},
	                  {"train_year", year},
	                  {"capacity_mw", capacity},
	                  {"config", config_to_json(config)},
	                  {"methods", methods}});
	std::cout << "wrote " << path.string() << '\n';
	return 0;
}

int cmd_evaluate(const fs::path &forecasts, const fs::path &observations, double eps, const fs::path &out) {
	const auto scores = score_forecast_rows(read_forecast_csv(forecasts, eps), read_observation_csv(observations));
	std::ofstream file;
	std::ostream *sink = &std::cout;
	if (!out.empty()) {
		file.open(out);
		sink = &file;
	}
	*sink << "method,crps_pct,skill_pct,n\n";
	for (const auto &s : scores) {
		*sink << method_name(s.method) << ',' << detail::format_double(percent(s.crps)) << ','
		      << detail::format_double(percent(s.skill)) << ',' << s.n << '\n';
	}
	return 0;
}

} // namespace

int main(int argc, char **argv) {
	CLI::App app{"Adaptive probabilistic forecasting of bounded series"};
	app.require_subcommand(1);

	ConfigOptions ingest_opts, filter_opts, train_opts, run_opts, sens_opts;

	auto *synth = app.add_subcommand("synth", "Write a synthetic farm corpus with ground truth");
	std::string synth_out = "synthetic", synth_start = "2021-01-01T00:00:00Z";
	int synth_farms = 5;
	std::uint64_t synth_seed = 1;
	std::size_t synth_length = 35040;
	double synth_capacity = 100.0, synth_missing = 0.0;
	bool synth_stationary = false;
	synth->add_option("--out_dir", synth_out, "Output directory");
	synth->add_option("--farms", synth_farms, "Number of farms")->check(CLI::PositiveNumber);
	synth->add_option("--seed", synth_seed, "Corpus seed");
	synth->add_option("--start", synth_start, "First timestamp (UTC, on the half hour)");
	synth->add_option("--length", synth_length, "Half-hour steps per farm")->check(CLI::PositiveNumber);
	synth->add_option("--capacity", synth_capacity, "Rated power in MW")->check(CLI::PositiveNumber);
	synth->add_option("--missing_rate", synth_missing, "Fraction of missing observations")->check(CLI::Range(0.0, 0.99));
	synth->add_flag("--stationary", synth_stationary, "Constant theta and nu");

	auto *ingest = app.add_subcommand("ingest", "Materialize the half-hour grid for each manifest farm");
	ingest_opts.attach(ingest);

	auto *filter = app.add_subcommand("filter-farms", "Outlier-farm filter diagnostics");
	filter_opts.attach(filter);

	auto *train = app.add_subcommand("train", "Fit every method on one farm-year and print its parameters");
	train_opts.attach(train);
	std::string train_farm;
	int train_year = 0;
	train->add_option("--farm", train_farm, "Farm id (default: first)");
	train->add_option("--train_year", train_year, "Training year (default: first year in the data)");

	auto *run = app.add_subcommand("run", "Rolling train/test evaluation and reports");
	run_opts.attach(run);

	auto *evaluate = app.add_subcommand("evaluate", "Score a forecast CSV against observations");
	std::string eval_forecasts, eval_obs, eval_out;
	double eval_eps = 0.005;
	evaluate->add_option("--forecasts", eval_forecasts, "Forecast CSV")->required()->check(CLI::ExistingFile);
	evaluate->add_option("--observations", eval_obs, "time,value CSV")->required()->check(CLI::ExistingFile);
	evaluate->add_option("--eps", eval_eps, "Threshold used by the forecasts");
	evaluate->add_option("--out", eval_out, "Write the score table here instead of stdout");

	auto *sensitivity = app.add_subcommand("sensitivity", "Parameter-disturbance analysis");
	sens_opts.attach(sensitivity);
	std::vector<std::string> targets{"mu", "sigma2", "P", "nu"};
	sensitivity->add_option("--targets", targets, "Subset of mu, sigma2, P, nu");

	CLI11_PARSE(app, argc, argv);

	try {
		if (synth->parsed()) {
			return cmd_synth(synth_out, synth_farms, synth_seed, synth_start, synth_length, synth_capacity,
			                 synth_stationary, synth_missing);
		}
		if (ingest->parsed()) {
			return cmd_ingest(ingest_opts.build(ingest));
		}
		if (filter->parsed()) {
			return cmd_filter(filter_opts.build(filter));
		}
		if (train->parsed()) {
			return cmd_train(train_opts.build(train), train_farm, train_year);
		}
		if (run->parsed()) {
			const auto config = run_opts.build(run);
			const auto report = run_experiment(config);
			std::size_t failed = 0;
			for (const auto &f : report.farms) {
				failed += f.failure ? 1 : 0;
			}
			std::cout << "evaluated " << report_cases(report, true).size() << " farm-scenarios, " << failed
			          << " farm failures; reports in " << config.out_dir.string() << '\n';
			return 0;
		}
		if (evaluate->parsed()) {
			return cmd_evaluate(eval_forecasts, eval_obs, eval_eps, eval_out);
		}
		if (sensitivity->parsed()) {
			std::vector<Target> parsed;
			for (const auto &t : targets) {
				parsed.push_back(parse_target(t));
			}
			const auto results = run_sensitivity(sens_opts.build(sensitivity), parsed);
			for (const auto &r : results) {
				std::cout << method_name(r.method) << ' ' << target_name(r.target) << ": baseline "
				          << detail::format_double(r.baseline) << "%, spread " << detail::format_double(spread(r.skills))
				          << " pp\n";
			}
			return 0;
		}
	} catch (const std::exception &e) {
		std::cerr << "error: " << e.what() << '\n';
		return 1;
	}
	return 0;
}
