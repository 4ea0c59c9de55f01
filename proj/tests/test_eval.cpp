#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "boundcast/eval.hpp"
#include "support.hpp"

using namespace boundcast;
using boundcast::testing::Gen;

namespace {

double gaussian_crps(double mu, double sigma, double y) {
	const double z = (y - mu) / sigma;
	return sigma * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) - 1.0 / std::sqrt(std::numbers::pi));
}

double draw(const PredictiveCdf &f, CounterRng &rng) { return f.quantile(rng.uniform()); }

} // namespace

TEST(Eval, PointMassCrpsIsAbsoluteError) {
	Gen g{71};
	for (int i = 0; i < 200; ++i) {
		const double yhat = g.uniform(0.005, 0.995);
		const double y = g.uniform(0.005, 0.995);
		EXPECT_NEAR(crps_single(PredictiveCdf::identity(0.005, yhat, 0.0), y), std::abs(yhat - y), 1e-12);
	}
	EXPECT_EQ(crps_single(PredictiveCdf::identity(0.005, 0.4, 0.0), 0.4), 0.0);
}

TEST(Eval, InteriorGaussianClosedForm) {
	Gen g{72};
	EXPECT_NEAR(crps_single(PredictiveCdf::identity(0.005, 0.5, 0.02), 0.5), 0.02 * 0.23369497725510913, 1e-8);
	for (int i = 0; i < 50; ++i) {
		const double mu = g.uniform(0.3, 0.7);
		const double sigma = g.uniform(0.005, 0.03);
		const double y = mu + g.normal(0.0, 2.0 * sigma);
		EXPECT_NEAR(crps_single(PredictiveCdf::identity(0.005, mu, sigma), y), gaussian_crps(mu, sigma, y), 1e-6);
	}
}

TEST(Eval, MonteCarloEnergyForm) {
	Gen g{73};
	for (int i = 0; i < 20; ++i) {
		const GlogitMap map{g.uniform(0.3, 2.5), 0.005};
		const PredictiveCdf f{map, g.uniform(map.lo() + 1.0, map.hi() - 1.0), g.uniform(0.3, 2.5)};
		const double y = g.uniform(0.005, 0.995);
		CounterRng rng{1000 + static_cast<std::uint64_t>(i)};
		const int n = 200000;
		double sum = 0.0, sum2 = 0.0;
		for (int k = 0; k < n; ++k) {
			const double a = draw(f, rng), b = draw(f, rng);
			const double term = std::abs(a - y) - 0.5 * std::abs(a - b);
			sum += term;
			sum2 += term * term;
		}
		const double m = sum / n;
		const double se = std::sqrt((sum2 / n - m * m) / n);
		EXPECT_NEAR(crps_single(f, y), m, 3.0 * se + 1e-9) << i;
	}
}

TEST(Eval, CrpsNonnegativeAndDomain) {
	Gen g{74};
	for (int i = 0; i < 200; ++i) {
		const GlogitMap map{g.uniform(0.1, 3.0), 0.005};
		const PredictiveCdf f{map, g.uniform(map.lo() - 2, map.hi() + 2), g.uniform(0.01, 4.0)};
		EXPECT_GE(crps_single(f, g.uniform(0.005, 0.995)), 0.0);
	}
	EXPECT_THROW(crps_single(PredictiveCdf::identity(0.005, 0.5, 0.1), 0.999), std::domain_error);
}

TEST(Eval, CrpsMeanExamples) {
	const auto f = PredictiveCdf::identity(0.005, 0.5, 0.0);
	std::vector<std::optional<PredictiveCdf>> one{f};
	std::vector<double> y1{0.52};
	EXPECT_NEAR(crps_mean(one, y1), crps_single(f, 0.52), 1e-15);

	std::vector<std::optional<PredictiveCdf>> two{f, f, std::nullopt};
	std::vector<double> y2{0.52, 0.54, 0.1};
	EXPECT_NEAR(crps_mean(two, y2), 0.03, 1e-12);

	std::vector<std::optional<PredictiveCdf>> dup{f, f, f, f};
	std::vector<double> y4{0.52, 0.54, 0.52, 0.54};
	EXPECT_NEAR(crps_mean(dup, y4), 0.03, 1e-12);

	std::vector<std::optional<PredictiveCdf>> none{std::nullopt};
	EXPECT_THROW(crps_mean(none, std::vector<double>{0.5}), std::invalid_argument);
}

TEST(Eval, SkillExamples) {
	EXPECT_EQ(skill(4.0, 4.0), 0.0);
	EXPECT_NEAR(skill(3.8, 4.0), 0.05, 1e-15);
	EXPECT_LT(skill(4.2, 4.0), 0.0);
	EXPECT_NEAR(skill(3.8 * 7.0, 4.0 * 7.0), skill(3.8, 4.0), 1e-15);
	EXPECT_THROW(skill(1.0, 0.0), std::invalid_argument);
}

TEST(Eval, RankTableExamples) {
	const std::vector<double> s{0.5, 0.2, 0.9, 0.1, 0.3, 0.7, 0.4};
	const auto one = rank_table({s});
	for (std::size_t m = 0; m < 7; ++m) {
		int total = 0;
		for (int c : one[m]) {
			total += c;
		}
		EXPECT_EQ(total, 1);
	}
	for (std::size_t r = 0; r < 7; ++r) {
		int total = 0;
		for (std::size_t m = 0; m < 7; ++m) {
			total += one[m][r];
		}
		EXPECT_EQ(total, 1);
	}
	const auto two = rank_table({s, s});
	for (std::size_t m = 0; m < 7; ++m) {
		for (std::size_t r = 0; r < 7; ++r) {
			EXPECT_EQ(two[m][r], 2 * one[m][r]);
		}
	}
	const std::vector<double> tied{0.3, 0.3, 0.1};
	EXPECT_EQ(rank_scores(tied), (std::vector<int>{2, 3, 1}));
}

TEST(Eval, ReliabilityCalibratedWithinBinomialBand) {
	Gen g{75};
	const auto levels = std::vector<double>{0.05, 0.25, 0.5, 0.75, 0.95};
	std::vector<PredictiveCdf> forecasts;
	std::vector<double> obs;
	CounterRng rng{76};
	for (int i = 0; i < 10000; ++i) {
		const GlogitMap map{g.uniform(0.5, 2.0), 0.005};
		const PredictiveCdf f{map, g.uniform(map.lo(), map.hi()), g.uniform(0.5, 2.5)};
		forecasts.push_back(f);
		obs.push_back(draw(f, rng));
	}
	const auto curve = reliability_curve(forecasts, obs, levels);
	for (std::size_t j = 0; j < levels.size(); ++j) {
		const double band = 2.576 * std::sqrt(levels[j] * (1 - levels[j]) / 10000.0);
		EXPECT_LE(std::abs(curve[j] - levels[j]), band) << levels[j];
	}
	for (std::size_t j = 1; j < curve.size(); ++j) {
		EXPECT_GE(curve[j], curve[j - 1]);
	}
}

TEST(Eval, OverDispersionFlattensTheCurve) {
	const GlogitMap map{1.0, 0.005};
	std::vector<PredictiveCdf> wide;
	std::vector<double> obs;
	CounterRng rng{77};
	for (int i = 0; i < 5000; ++i) {
		const PredictiveCdf truth{map, 0.0, 0.5};
		wide.emplace_back(map, 0.0, 1.0);
		obs.push_back(draw(truth, rng));
	}
	const std::vector<double> levels{0.1, 0.3, 0.7, 0.9};
	const auto curve = reliability_curve(wide, obs, levels);
	EXPECT_LT(curve[0], 0.1);
	EXPECT_LT(curve[1], 0.3);
	EXPECT_GT(curve[2], 0.7);
	EXPECT_GT(curve[3], 0.9);
}

TEST(Eval, DegenerateForecastsJumpAtMedian) {
	const auto f = PredictiveCdf::identity(0.005, 0.5, 1e-9);
	std::vector<PredictiveCdf> fs(200, f);
	std::vector<double> obs(200, 0.5);
	const std::vector<double> levels{0.1, 0.49, 0.51, 0.9};
	const auto curve = reliability_curve(fs, obs, levels);
	EXPECT_EQ(curve[0], 0.0);
	EXPECT_EQ(curve[1], 0.0);
	EXPECT_EQ(curve[2], 1.0);
	EXPECT_EQ(curve[3], 1.0);
	EXPECT_THROW(reliability_curve(std::span(fs).first(50), std::span<const double>(obs).first(50), levels),
	             std::invalid_argument);
}

TEST(Eval, BoundaryObservationsUseRandomizedPit) {
	const GlogitMap map{1.0, 0.005};
	const PredictiveCdf f{map, map.lo(), 1.0};
	CounterRng rng{78};
	double lo = 1.0, hi = 0.0;
	for (int i = 0; i < 1000; ++i) {
		const double u = randomized_pit(f, 0.005, rng);
		lo = std::min(lo, u);
		hi = std::max(hi, u);
	}
	EXPECT_GE(lo, 0.0);
	EXPECT_LE(hi, f.mass_lo());
	EXPECT_GT(hi - lo, 0.4);
}

TEST(Eval, EnvelopeExamples) {
	const std::vector<double> base{0.1, 0.3, 0.5, 0.7, 0.9};
	std::vector<std::vector<double>> same(6, base);
	const auto flat = functional_envelope(same);
	EXPECT_EQ(flat.lower_quartile, flat.upper_quartile);
	EXPECT_EQ(flat.outer_lower, flat.outer_upper);
	EXPECT_TRUE(flat.outliers.empty());

	std::vector<std::vector<double>> crowd(20, base);
	for (auto &v : crowd.back()) {
		v += 0.2;
	}
	const auto env = functional_envelope(crowd);
	EXPECT_EQ(env.outliers, (std::vector<std::size_t>{19}));
	EXPECT_EQ(env.outer_upper, base);

	std::vector<std::vector<double>> sym{base};
	for (double d : {0.01, 0.02, 0.03}) {
		auto up = base, down = base;
		for (std::size_t j = 0; j < base.size(); ++j) {
			up[j] += d;
			down[j] -= d;
		}
		sym.push_back(up);
		sym.push_back(down);
	}
	const auto med = functional_envelope(sym);
	for (std::size_t j = 0; j < base.size(); ++j) {
		EXPECT_NEAR(med.median[j], base[j], 1e-15);
	}
	EXPECT_THROW(functional_envelope(std::vector<std::vector<double>>(4, base)), std::invalid_argument);
}
