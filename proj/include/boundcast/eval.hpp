#pragma once

/** @file
 * Probabilistic forecast evaluation: CRPS on the bounded support, skill
 * against persistence, rank tables, reliability curves and a pointwise
 * functional-boxplot envelope for sets of reliability curves.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "boundcast/glogit.hpp"
#include "boundcast/stats.hpp"

namespace boundcast {

/**
 * CRPS(F, y) = integral over [eps, 1-eps] of (F(z) - 1{z >= y})^2 dz.
 *
 * The support is split at y and at the images of mu - 4 sigma, mu and mu + 4 sigma
 * (the step location when sigma = 0); each piece uses 64-point Gauss-Legendre.
 * Boundary point masses only change F at the endpoints, which have measure zero.
 */
inline double crps_single(const PredictiveCdf &cdf, double y) {
	const double lo = cdf.lower();
	const double hi = cdf.upper();
	constexpr double slack = 1e-12;
	if (!(y >= lo - slack && y <= hi + slack)) {
		throw std::domain_error("crps_single: observation outside the forecast support");
	}
	y = std::clamp(y, lo, hi);

	std::vector<double> cuts{lo, hi, y};
	const auto &base = cdf.base();
	const auto add_cut = [&](double b) {
		if (b > base.lo && b < base.hi) {
			const double x = cdf.from_base(b);
			if (x > lo && x < hi) {
				cuts.push_back(x);
			}
		}
	};
	if (base.sigma == 0.0) {
		add_cut(base.mu);
	} else {
		for (double k : {-4.0, 0.0, 4.0}) {
			add_cut(base.mu + k * base.sigma);
		}
	}
	std::sort(cuts.begin(), cuts.end());
	cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

	const auto &rule = gauss_legendre_64();
	double total = 0.0;
	for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
		const double a = cuts[i];
		const double b = cuts[i + 1];
		const double step = 0.5 * (a + b) >= y ? 1.0 : 0.0;
		if (base.sigma == 0.0) {
			const double f = cdf.cdf(0.5 * (a + b));
			total += (f - step) * (f - step) * (b - a);
			continue;
		}
		total += rule.integrate(
		    [&](double z) {
			    const double d = cdf.cdf(z) - step;
			    return d * d;
		    },
		    a, b);
	}
	return total;
}

/// Mean CRPS over aligned pairs; pairs with no forecast or a missing observation are skipped.
inline double crps_mean(std::span<const std::optional<PredictiveCdf>> forecasts, std::span<const double> observations) {
	if (forecasts.size() != observations.size()) {
		throw std::invalid_argument("crps_mean: forecasts and observations differ in length");
	}
	double acc = 0.0;
	std::size_t n = 0;
	for (std::size_t i = 0; i < forecasts.size(); ++i) {
		if (forecasts[i] && !is_missing(observations[i])) {
			acc += crps_single(*forecasts[i], observations[i]);
			++n;
		}
	}
	if (n == 0) {
		throw std::invalid_argument("crps_mean: no evaluated pairs");
	}
	return acc / static_cast<double>(n);
}

/// Relative CRPS improvement over the benchmark (ideal score 0).
inline double skill(double crps_method, double crps_persistence) {
	if (!(crps_persistence > 0.0)) {
		throw std::invalid_argument("skill: benchmark CRPS must be positive");
	}
	return (crps_persistence - crps_method) / crps_persistence;
}

/// Ranks 1..n of one scenario's scores (lower is better); ties go to the lower index.
inline std::vector<int> rank_scores(std::span<const double> scores) {
	std::vector<std::size_t> order(scores.size());
	for (std::size_t i = 0; i < order.size(); ++i) {
		order[i] = i;
	}
	std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
	std::vector<int> rank(scores.size());
	for (std::size_t r = 0; r < order.size(); ++r) {
		rank[order[r]] = static_cast<int>(r) + 1;
	}
	return rank;
}

/// counts[m][r-1] = number of scenarios in which method m ranked r.
inline std::vector<std::vector<int>> rank_table(const std::vector<std::vector<double>> &per_scenario_scores) {
	if (per_scenario_scores.empty()) {
		return {};
	}
	const std::size_t n = per_scenario_scores.front().size();
	std::vector<std::vector<int>> counts(n, std::vector<int>(n, 0));
	for (const auto &scores : per_scenario_scores) {
		if (scores.size() != n) {
			throw std::invalid_argument("rank_table: scenarios differ in method count");
		}
		const auto ranks = rank_scores(scores);
		for (std::size_t m = 0; m < n; ++m) {
			++counts[m][static_cast<std::size_t>(ranks[m] - 1)];
		}
	}
	return counts;
}

/**
 * Probability integral transform of y under F, randomized uniformly over the
 * jump [F(y-), F(y)] when y sits on a point mass.
 */
inline double randomized_pit(const PredictiveCdf &cdf, double y, CounterRng &rng) {
	const double upper = cdf.cdf(y);
	const double lower = cdf.cdf_left(y);
	if (upper - lower > 0.0) {
		return lower + rng.uniform() * (upper - lower);
	}
	return upper;
}

/// Observed proportion of outcomes at or below each nominal quantile level.
inline std::vector<double> reliability_curve(std::span<const PredictiveCdf> forecasts, std::span<const double> observations,
                                             std::span<const double> levels, std::uint64_t seed = 20240601) {
	if (forecasts.size() != observations.size()) {
		throw std::invalid_argument("reliability_curve: forecasts and observations differ in length");
	}
	if (forecasts.size() < 100) {
		throw std::invalid_argument("reliability_curve: insufficient data (need >= 100 pairs)");
	}
	CounterRng rng{seed};
	std::vector<double> pits;
	pits.reserve(forecasts.size());
	for (std::size_t i = 0; i < forecasts.size(); ++i) {
		pits.push_back(randomized_pit(forecasts[i], observations[i], rng));
	}
	std::sort(pits.begin(), pits.end());
	std::vector<double> curve;
	curve.reserve(levels.size());
	for (double tau : levels) {
		const auto below = std::upper_bound(pits.begin(), pits.end(), tau) - pits.begin();
		curve.push_back(static_cast<double>(below) / static_cast<double>(pits.size()));
	}
	return curve;
}

struct FunctionalEnvelope {
	std::vector<double> median;
	std::vector<double> lower_quartile;
	std::vector<double> upper_quartile;
	/// Pointwise min/max over non-outlying curves.
	std::vector<double> outer_lower;
	std::vector<double> outer_upper;
	std::vector<std::size_t> outliers;
};

/**
 * Pointwise surrogate of a functional boxplot. A curve is flagged as an outlier
 * when it leaves the central band inflated by 1.5 times its width at more than
 * 10% of the levels.
 */
inline FunctionalEnvelope functional_envelope(const std::vector<std::vector<double>> &curves) {
	if (curves.size() < 5) {
		throw std::invalid_argument("functional_envelope: need at least 5 curves");
	}
	const std::size_t n_levels = curves.front().size();
	for (const auto &c : curves) {
		if (c.size() != n_levels) {
			throw std::invalid_argument("functional_envelope: curves differ in length");
		}
	}
	FunctionalEnvelope env;
	std::vector<double> column(curves.size());
	for (std::size_t j = 0; j < n_levels; ++j) {
		for (std::size_t i = 0; i < curves.size(); ++i) {
			column[i] = curves[i][j];
		}
		env.median.push_back(sample_quantile(column, 0.5));
		env.lower_quartile.push_back(sample_quantile(column, 0.25));
		env.upper_quartile.push_back(sample_quantile(column, 0.75));
	}
	for (std::size_t i = 0; i < curves.size(); ++i) {
		std::size_t exits = 0;
		for (std::size_t j = 0; j < n_levels; ++j) {
			const double width = env.upper_quartile[j] - env.lower_quartile[j];
			const double lo = env.lower_quartile[j] - 1.5 * width;
			const double hi = env.upper_quartile[j] + 1.5 * width;
			if (curves[i][j] < lo || curves[i][j] > hi) {
				++exits;
			}
		}
		if (static_cast<double>(exits) > 0.1 * static_cast<double>(n_levels)) {
			env.outliers.push_back(i);
		}
	}
	env.outer_lower.assign(n_levels, std::numeric_limits<double>::infinity());
	env.outer_upper.assign(n_levels, -std::numeric_limits<double>::infinity());
	for (std::size_t i = 0; i < curves.size(); ++i) {
		if (std::find(env.outliers.begin(), env.outliers.end(), i) != env.outliers.end()) {
			continue;
		}
		for (std::size_t j = 0; j < n_levels; ++j) {
			env.outer_lower[j] = std::min(env.outer_lower[j], curves[i][j]);
			env.outer_upper[j] = std::max(env.outer_upper[j], curves[i][j]);
		}
	}
	return env;
}

} // namespace boundcast
