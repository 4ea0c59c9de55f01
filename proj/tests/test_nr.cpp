#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "boundcast/nr.hpp"
#include "boundcast/synth.hpp"
#include "support.hpp"

using namespace boundcast;
using boundcast::testing::Gen;

namespace {

Eigen::VectorXd random_w(Gen &g, int p) {
	Eigen::VectorXd w(p + 3);
	for (int i = 0; i <= p; ++i) {
		w(i) = g.uniform(-0.8, 0.8) / (i == 0 ? 1.0 : p);
	}
	w(p + 1) = g.uniform(0.05, 2.0);
	w(p + 2) = g.uniform(0.2, 2.8);
	return w;
}

} // namespace

TEST(Nr, PerfectPredictionLoglik) {
	Eigen::VectorXd w(4);
	w << 0.0, 0.0, 1.0, 1.0;
	const std::vector<double> lags{0.5};
	EXPECT_NEAR(nr_obs_loglik(0.5, lags, w), std::log(4.0 / std::sqrt(2.0 * std::numbers::pi)), 1e-12);
	EXPECT_NEAR(nr_obs_loglik(0.5, lags, w), 0.467356, 1e-6);
}

TEST(Nr, LoglikDecreasesWithResidual) {
	const std::vector<double> lags{0.4};
	const double x = 0.55;
	Eigen::VectorXd w(4);
	w << 0.0, 0.5, 0.3, 1.2;
	w(0) = glogit_forward(x, 1.2) - 0.5 * glogit_forward(0.4, 1.2);
	double prev = nr_obs_loglik(x, lags, w);
	for (int k = 1; k <= 8; ++k) {
		w(0) += 0.1;
		const double cur = nr_obs_loglik(x, lags, w);
		EXPECT_LT(cur, prev);
		prev = cur;
	}
}

TEST(Nr, LoglikMatchesLogitNormalDensity) {
	Gen g{41};
	for (int i = 0; i < 100; ++i) {
		const int p = g.integer(1, 4);
		const auto w = random_w(g, p);
		std::vector<double> lags(static_cast<std::size_t>(p));
		for (auto &l : lags) {
			l = g.uniform(0.01, 0.99);
		}
		const double x = g.uniform(0.01, 0.99);
		const double nu = w(p + 2);
		double mu = w(0);
		for (int k = 1; k <= p; ++k) {
			mu += w(k) * glogit_forward(lags[static_cast<std::size_t>(k - 1)], nu);
		}
		EXPECT_NEAR(nr_obs_loglik(x, lags, w), std::log(logit_normal_pdf(x, mu, std::sqrt(w(p + 1)), nu)), 1e-10);
	}
}

TEST(Nr, GradientMatchesCentralDifferences) {
	Gen g{42};
	int checked = 0;
	for (int i = 0; i < 200; ++i) {
		const int p = g.integer(1, 6);
		const auto w = random_w(g, p);
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
			const double scale = std::max({std::abs(fd), std::abs(grad(k)), 1e-3});
			EXPECT_LE(std::abs(grad(k) - fd) / scale, 1e-5) << "component " << k;
			++checked;
		}
	}
	EXPECT_GT(checked, 200);
}

TEST(Nr, GradientZeroPoints) {
	Eigen::VectorXd w(4);
	w << 0.1, 0.5, 0.3, 1.3;
	const std::vector<double> lags{0.4};
	const double mu = 0.1 + 0.5 * glogit_forward(0.4, 1.3);
	const auto at_mean = nr_gradient(glogit_inverse(mu, 1.3), lags, w);
	EXPECT_NEAR(at_mean(0), 0.0, 1e-12);
	EXPECT_NEAR(at_mean(1), 0.0, 1e-12);
	const auto at_sd = nr_gradient(glogit_inverse(mu + std::sqrt(0.3), 1.3), lags, w);
	EXPECT_NEAR(at_sd(2), 0.0, 1e-12);
}

TEST(Nr, ZeroHessianSkipsFirstStep) {
	const auto state = nr_init(Eigen::Vector2d{0.0, 0.5}, 0.3, 1.0, 0.9999);
	EXPECT_EQ(state.w.size(), 4);
	EXPECT_EQ(state.hess, Eigen::MatrixXd::Zero(4, 4));
	const std::vector<double> lags{0.4};
	const auto next = nr_update(state, 0.6, lags);
	EXPECT_EQ(next.status, UpdateStatus::skipped_singular);
	EXPECT_EQ(next.state.w, state.w);
	EXPECT_GT(next.state.hess.norm(), 0.0);
}

TEST(Nr, BoundsAreEnforced) {
	Gen g{43};
	auto state = nr_init(Eigen::Vector2d{0.0, 0.5}, 0.3, 1.0, 0.99);
	for (int i = 0; i < 2000; ++i) {
		const std::vector<double> lags{g.uniform(0.005, 0.995)};
		state = nr_update(state, g.uniform(0.005, 0.995), lags).state;
		ASSERT_GE(state.nu(), 0.1);
		ASSERT_LE(state.nu(), 3.0);
		ASSERT_GE(state.sigma2(), 1e-8);
		ASSERT_TRUE(state.w.allFinite());
		ASSERT_LE((state.hess - state.hess.transpose()).cwiseAbs().maxCoeff(), 1e-10);
	}
}

TEST(Nr, ConvergesOnStationarySynthetic) {
	SynthSpec spec;
	spec.p = 1;
	spec.theta = Eigen::Vector2d{-0.3, 0.8};
	spec.sigma2 = 0.25;
	spec.nu.start = spec.nu.end = 1.3;
	spec.length = 50000;
	spec.seed = 44;
	const auto series = generate(spec);
	// Start away from the truth with a Hessian primed on a short warm-up stretch.
	auto state = nr_init(Eigen::Vector2d{-0.2, 0.7}, 0.3, 1.2, 0.9999);
	state = nr_prime_hessian(state, std::span<const double>(series.x).first(2000));
	for (std::size_t t = 2000; t < series.x.size(); ++t) {
		const std::vector<double> lags{series.x[t - 1]};
		state = nr_update(state, series.x[t], lags).state;
	}
	EXPECT_LT((state.theta() - spec.theta).cwiseAbs().maxCoeff(), 0.05);
	EXPECT_NEAR(state.nu(), 1.3, 0.15);
}
