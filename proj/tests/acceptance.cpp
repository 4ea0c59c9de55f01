// End-to-end acceptance checks on synthetic data. One PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include <boost/math/distributions/normal.hpp>

#include "boundcast/bayes.hpp"
#include "boundcast/eval.hpp"
#include "boundcast/harness.hpp"
#include "boundcast/nr.hpp"
#include "boundcast/rls.hpp"
#include "boundcast/synth.hpp"
#include "support.hpp"

using namespace boundcast;
using boundcast::testing::Gen;
namespace fs = std::filesystem;

namespace {

struct Verdict {
	bool pass = true;
	std::string detail;
};

std::string fmt(const char *f, double a) {
	char buf[128];
	std::snprintf(buf, sizeof buf, f, a);
	return buf;
}

LagDesign slice(const LagDesign &d, Eigen::Index from, Eigen::Index count) {
	LagDesign out;
	out.targets = d.targets.segment(from, count);
	out.predictors = d.predictors.middleCols(from, count);
	out.pair_index.assign(d.pair_index.begin() + from, d.pair_index.begin() + from + count);
	return out;
}

// ---------------------------------------------------------------------------

Verdict ac1_round_trip() {
	Gen g{101};
	double worst = 0.0;
	for (int i = 0; i < 10000; ++i) {
		const double eps = g.uniform(1e-4, 0.05);
		const double nu = g.uniform(0.1, 3.0);
		const double x = g.uniform(eps, 1.0 - eps);
		worst = std::max(worst, std::abs(glogit_inverse(glogit_forward(x, nu), nu) - x));
	}
	return {worst <= 1e-10, fmt("max error %.3g", worst)};
}

Verdict ac2_rls_ols() {
	Gen g{102};
	double worst = 0.0;
	for (int rep = 0; rep < 100; ++rep) {
		const int p = g.integer(1, 6);
		std::vector<double> phi(static_cast<std::size_t>(p), 0.0);
		phi[0] = g.uniform(0.2, 0.8);
		const auto y = boundcast::testing::ar_series(500 + static_cast<std::size_t>(p), g.uniform(-1, 1), phi, 1.0, 1000 + rep);
		const auto d = build_lag_design(y, p);
		const Eigen::Index init = 2 * (p + 1) + g.integer(0, 20);
		auto state = rls_init(slice(d, 0, init), 1.0, 1e300);
		Eigen::Index at = init;
		while (at < d.size()) {
			const Eigen::Index m = std::min<Eigen::Index>(g.integer(1, 25), d.size() - at);
			state = rls_update(state, slice(d, at, m)).state;
			at += m;
		}
		worst = std::max(worst, (state.theta - ols_fit(d).theta).cwiseAbs().maxCoeff());
	}
	return {worst <= 1e-8, fmt("max |dtheta| %.3g", worst)};
}

Verdict ac3_woodbury() {
	Gen g{103};
	double worst = 0.0;
	bool coincide = true;
	for (int i = 0; i < 100; ++i) {
		const int p = g.integer(1, 6);
		const Eigen::Index m = g.integer(1, 8);
		BayesState s = bayes_init(p);
		s.mu = g.vector(p + 1);
		s.P = g.spd(p + 1);
		s.alpha = g.uniform(2.0, 200.0);
		s.beta = g.uniform(0.5, 5.0);
		LagDesign batch;
		batch.predictors = g.matrix(p + 1, m);
		batch.predictors.row(0).setOnes();
		batch.targets = g.vector(m);
		for (Eigen::Index k = 0; k < m; ++k) {
			batch.pair_index.push_back(static_cast<std::size_t>(k));
		}
		const Eigen::MatrixXd Pz = g.spd(m);
		const auto direct = bayes_update(s, batch, Pz);
		worst = std::max(worst, (direct.state.mu - bayes_mean_innovation_form(s, batch, Pz)).cwiseAbs().maxCoeff());
		RlsState rls;
		rls.theta = s.mu;
		rls.P = s.P;
		rls.lambda = 1.0;
		coincide = coincide && coincides_with_rls(s, rls, batch, 1e-8);
	}
	return {worst <= 1e-9 && coincide, fmt("max |dmu| %.3g", worst) + (coincide ? ", coincides with RLS" : ", RLS mismatch")};
}

Verdict ac4_nr_gradient() {
	Gen g{104};
	double worst = 0.0;
	for (int i = 0; i < 200; ++i) {
		const int p = g.integer(1, 6);
		Eigen::VectorXd w(p + 3);
		w(0) = g.normal(0.0, 0.5);
		for (int k = 1; k <= p; ++k) {
			w(k) = g.uniform(-0.4, 0.4);
		}
		w(p + 1) = g.uniform(0.1, 1.0);
		w(p + 2) = g.uniform(0.4, 2.5);
		std::vector<double> lags(static_cast<std::size_t>(p));
		for (auto &l : lags) {
			l = g.uniform(0.02, 0.98);
		}
		const double x = g.uniform(0.02, 0.98);
		const auto grad = nr_gradient(x, lags, w);
		for (Eigen::Index k = 0; k < w.size(); ++k) {
			const double h = 1e-6 * std::max(1.0, std::abs(w(k)));
			Eigen::VectorXd up = w, down = w;
			up(k) += h;
			down(k) -= h;
			const double fd = (nr_obs_loglik(x, lags, up) - nr_obs_loglik(x, lags, down)) / (2.0 * h);
			worst = std::max(worst, std::abs(grad(k) - fd) / std::max({std::abs(fd), std::abs(grad(k)), 1e-3}));
		}
	}
	return {worst <= 1e-5, fmt("max relative error %.3g", worst)};
}

Verdict ac5_crps() {
	Gen g{105};
	const double eps = 0.005;
	double point = 0.0;
	for (int i = 0; i < 200; ++i) {
		const double yhat = g.uniform(eps, 1 - eps);
		const double y = g.uniform(eps, 1 - eps);
		point = std::max(point, std::abs(crps_single(PredictiveCdf::identity(eps, yhat, 0.0), y) - std::abs(yhat - y)));
	}
	const boost::math::normal_distribution<> n01;
	double gauss = 0.0;
	for (int i = 0; i < 200; ++i) {
		const double mu = g.uniform(0.4, 0.6);
		const double sigma = g.uniform(0.005, 0.04);
		const double y = g.uniform(mu - 3 * sigma, mu + 3 * sigma);
		const double z = (y - mu) / sigma;
		const double exact = sigma * (z * (2 * boost::math::cdf(n01, z) - 1) + 2 * boost::math::pdf(n01, z) - 1 / std::sqrt(M_PI));
		gauss = std::max(gauss, std::abs(crps_single(PredictiveCdf::identity(eps, mu, sigma), y) - exact));
	}
	int inside = 0;
	CounterRng draw{105, 9};
	for (int i = 0; i < 20; ++i) {
		const PredictiveCdf f{GlogitMap{g.uniform(0.5, 2.5), eps}, g.normal(0.0, 1.5), g.uniform(0.2, 1.5)};
		const double y = f.quantile(g.uniform(0.05, 0.95));
		const int n = 100000;
		double sum = 0.0, sq = 0.0;
		for (int k = 0; k < n; ++k) {
			const double a = f.quantile(std::clamp(draw.uniform(), 1e-15, 1 - 1e-15));
			const double b = f.quantile(std::clamp(draw.uniform(), 1e-15, 1 - 1e-15));
			const double h = std::abs(a - y) - 0.5 * std::abs(a - b);
			sum += h;
			sq += h * h;
		}
		const double mean = sum / n;
		const double se = std::sqrt((sq / n - mean * mean) / n);
		inside += std::abs(crps_single(f, y) - mean) <= 3 * se ? 1 : 0;
	}
	const bool pass = point <= 1e-12 && gauss <= 1e-6 && inside == 20;
	return {pass, fmt("point-mass err %.3g", point) + fmt(", Gaussian err %.3g", gauss) + ", MC within 3 SE " +
	                  std::to_string(inside) + "/20"};
}

SynthSpec recovery_spec(double nu_start, double nu_end, std::uint64_t seed) {
	SynthSpec s;
	s.p = 2;
	s.theta = Eigen::Vector3d{0.0, 0.7, 0.2};
	s.theta(0) = centred_intercept(s.theta.tail(2), nu_start, 0.35);
	s.sigma2 = 0.25;
	s.nu.start = nu_start;
	s.nu.end = nu_end;
	s.nu.kind = nu_start == nu_end ? NuProfile::Kind::constant : NuProfile::Kind::ramp;
	s.length = 20000;
	s.seed = seed;
	return s;
}

double streamed_nu(const std::vector<double> &x, const ForecastSettings &settings) {
	const std::span<const double> all{x};
	const auto train = all.first(2000);
	const auto ctx = prepare_training(train, settings);
	auto f = train_forecaster(Method::bayes_nu, train, ctx, settings);
	for (double v : all.subspan(2000)) {
		f.step(v);
	}
	return f.nu();
}

Verdict ac6_nu_recovery() {
	const auto settings = RunConfig::harness_defaults();
	Verdict v;
	std::ostringstream detail;
	for (double nu : {0.5, 1.0, 1.5, 2.5}) {
		const auto x = generate(recovery_spec(nu, nu, 11)).x;
		const double batch = fit_glogit_ar(x, 2).nu;
		const double stream = streamed_nu(x, settings);
		v.pass = v.pass && std::abs(batch - nu) <= 0.1 && std::abs(stream - nu) <= 0.15;
		detail << "nu*=" << nu << " batch " << fmt("%+.3f", batch - nu) << " stream " << fmt("%+.3f", stream - nu) << "; ";
	}
	for (auto [a, b] : {std::pair{1.0, 1.6}, std::pair{1.6, 1.0}}) {
		const double end = streamed_nu(generate(recovery_spec(a, b, 12)).x, settings);
		v.pass = v.pass && std::abs(end - b) <= 0.15;
		detail << "ramp " << a << "->" << b << " endpoint " << fmt("%+.3f", end - b) << "; ";
	}
	v.detail = detail.str();
	return v;
}

Verdict ac7_calibration() {
	const auto spec = synthetic_farm(107, 0, FarmDraw{false, 3000});
	const auto x = generate(spec).x;
	const auto settings = RunConfig::harness_defaults();
	const auto ctx = prepare_training(x, settings);
	auto f = train_forecaster(Method::bayes_nu, x, ctx, settings);
	CounterRng rng{107, 1};
	std::vector<PredictiveCdf> forecasts;
	std::vector<double> obs;
	auto next = f.forecast();
	while (forecasts.size() < 10000) {
		const double y = next->quantile(std::clamp(rng.uniform(), 1e-12, 1 - 1e-12));
		forecasts.push_back(*next);
		obs.push_back(y);
		next = f.step(y);
	}
	const auto levels = reliability_levels();
	const auto curve = reliability_curve(forecasts, obs, levels, 107);
	const double z = boost::math::quantile(boost::math::normal_distribution<>{}, 0.995);
	double worst = 0.0;
	bool pass = true;
	for (std::size_t i = 0; i < levels.size(); ++i) {
		const double band = z * std::sqrt(levels[i] * (1 - levels[i]) / 10000.0);
		worst = std::max(worst, std::abs(curve[i] - levels[i]) / band);
		pass = pass && std::abs(curve[i] - levels[i]) <= band;
	}
	return {pass, fmt("worst deviation %.2f band widths", worst) + " over " + std::to_string(levels.size()) + " levels"};
}

Verdict ac8_ordering() {
	const auto settings = RunConfig::harness_defaults();
	const std::array<Method, 4> adaptive{Method::rls, Method::nr, Method::bayes, Method::bayes_nu};
	Verdict v;
	int nr_failures = 0;
	std::ostringstream detail;
	for (std::uint64_t seed = 1; seed <= 3; ++seed) {
		std::array<double, 7> crps{}, sk{};
		for (std::uint64_t farm = 0; farm < 20; ++farm) {
			const auto x = generate(synthetic_farm(seed, farm, FarmDraw{true, 8000})).x;
			const std::span<const double> all{x};
			const auto train = all.first(4000);
			const auto test = all.subspan(4000);
			const auto ctx = prepare_training(train, settings);
			std::array<MethodStream, 7> streams;
			std::vector<const MethodStream *> present;
			for (Method m : all_methods) {
				streams[method_index(m)] = stream_forecasts(train_forecaster(m, train, ctx, settings), test);
				present.push_back(&streams[method_index(m)]);
			}
			const auto times = common_times(present, test);
			const double bench = crps_on(streams[0], test, times);
			for (Method m : all_methods) {
				const double c = crps_on(streams[method_index(m)], test, times);
				crps[method_index(m)] += c / 20.0;
				sk[method_index(m)] += skill(c, bench) / 20.0;
			}
		}
		const auto c = [&](Method m) { return crps[method_index(m)]; };
		bool ok = c(Method::bayes_nu) <= c(Method::bayes) && c(Method::bayes) <= c(Method::ar_lnu) &&
		          c(Method::ar_lnu) <= c(Method::persistence);
		for (Method m : adaptive) {
			if (sk[method_index(m)] > 0.0) {
				continue;
			}
			if (m == Method::nr) {
				++nr_failures;
			} else {
				ok = false;
			}
		}
		v.pass = v.pass && ok;
		detail << "seed " << seed << ": crps%";
		for (Method m : {Method::bayes_nu, Method::bayes, Method::ar_lnu, Method::persistence}) {
			detail << ' ' << method_name(m) << ' ' << fmt("%.3f", percent(c(m)));
		}
		detail << ", skill%";
		for (Method m : adaptive) {
			detail << ' ' << method_name(m) << ' ' << fmt("%.2f", percent(sk[method_index(m)]));
		}
		detail << "; ";
	}
	v.pass = v.pass && nr_failures <= 1;
	v.detail = detail.str();
	return v;
}

Verdict ac9_sensitivity() {
	const auto x = generate(synthetic_farm(109, 0, FarmDraw{false, 4000})).x;
	const std::span<const double> all{x};
	const auto train = all.first(2000);
	const auto test = all.subspan(2000);
	const auto settings = RunConfig::harness_defaults();
	const auto ctx = prepare_training(train, settings);
	const auto run = [&](Method m, Target t) { return spread(sensitivity_on_series(train, test, ctx, m, t, 200, 0.1, 109, settings).skills); };
	const double nr_mu = run(Method::nr, Target::mu);
	const double bnu_nu = run(Method::bayes_nu, Target::nu);
	const double bnu_p = run(Method::bayes_nu, Target::P);
	const bool pass = nr_mu > 0.0 && bnu_nu * 10.0 <= nr_mu && bnu_p * 10.0 <= nr_mu;
	return {pass, fmt("spread pp: NR mu %.4g", nr_mu) + fmt(", Bayes-nu nu %.4g", bnu_nu) + fmt(", Bayes-nu P %.4g", bnu_p)};
}

std::map<std::string, std::string> tree(const fs::path &root) {
	std::map<std::string, std::string> out;
	for (const auto &e : fs::recursive_directory_iterator(root)) {
		if (e.is_regular_file()) {
			std::ifstream in(e.path(), std::ios::binary);
			std::stringstream ss;
			ss << in.rdbuf();
			out[fs::relative(e.path(), root).generic_string()] = ss.str();
		}
	}
	return out;
}

Verdict ac10_determinism() {
	const auto root = fs::temp_directory_path() / "boundcast_acceptance_ac10";
	fs::remove_all(root);
	fs::create_directories(root / "data");
	std::vector<FarmEntry> entries;
	for (int i = 0; i < 2; ++i) {
		const auto x = generate(synthetic_farm(110, static_cast<std::uint64_t>(i), FarmDraw{true, 8736})).x;
		const std::string id = "farm_" + std::to_string(i);
		write_farm_csv(root / "data" / (id + ".csv"), synth_records(x, 75.0, parse_rfc3339("2021-10-01T00:00:00Z")));
		entries.push_back({id, id + ".csv", std::nullopt});
	}
	write_manifest(root / "data" / "manifest.json", entries);
	const auto run_into = [&](const fs::path &out, int workers) {
		fs::remove_all(out);
		RunConfig config;
		config.data_dir = root / "data";
		config.out_dir = out;
		config.write_forecasts = true;
		config.workers = workers;
		config.draws = 3;
		config.methods = {Method::ar_lnu, Method::nr, Method::bayes_nu};
		run_experiment(config);
		run_sensitivity(config, {Target::mu, Target::nu});
		return tree(out);
	};
	const auto first = run_into(root / "out", 1);
	const auto again = run_into(root / "out", 1);
	const auto parallel = run_into(root / "out_parallel", 2);
	std::size_t identical = 0;
	std::size_t differing = 0;
	for (const auto &[name, body] : first) {
		const auto it = again.find(name);
		identical += it != again.end() && it->second == body ? 1 : 0;
		// manifests record out_dir and workers
		if (name.find("manifest.json") == std::string::npos) {
			const auto p = parallel.find(name);
			differing += p == parallel.end() || p->second != body ? 1 : 0;
		}
	}
	const bool pass = identical == first.size() && again.size() == first.size() && differing == 0 && !first.empty();
	fs::remove_all(root);
	return {pass, std::to_string(first.size()) + " files, " + std::to_string(identical) + " identical on rerun, " +
	                  std::to_string(differing) + " differing with 2 workers"};
}

} // namespace

int main() {
	const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
	    {"AC1 transform round trip", ac1_round_trip},
	    {"AC2 RLS equals OLS under any batching", ac2_rls_ols},
	    {"AC3 Woodbury forms and RLS coincidence", ac3_woodbury},
	    {"AC4 NR gradient vs finite differences", ac4_nr_gradient},
	    {"AC5 CRPS oracles", ac5_crps},
	    {"AC6 shape recovery", ac6_nu_recovery},
	    {"AC7 calibration closure", ac7_calibration},
	    {"AC8 qualitative ordering", ac8_ordering},
	    {"AC9 sensitivity robustness", ac9_sensitivity},
	    {"AC10 determinism", ac10_determinism},
	};
	int failed = 0;
	for (const auto &[name, check] : criteria) {
		const auto t0 = std::chrono::steady_clock::now();
		Verdict v;
		try {
			v = check();
		} catch (const std::exception &e) {
			v = {false, std::string("exception: ") + e.what()};
		}
		const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
		std::printf("%s %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str(), secs);
		std::fflush(stdout);
		failed += v.pass ? 0 : 1;
	}
	return failed == 0 ? 0 : 1;
}
