#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>
#include <algorithm>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace boundcast {

inline double normal_pdf(double z) {
	return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double z) {
	return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

/// Standard normal quantile. Requires 0 < p < 1.
inline double normal_quantile(double p) {
	if (!(p > 0.0 && p < 1.0)) {
		throw std::domain_error("normal_quantile: probability must lie in (0,1)");
	}
	static const boost::math::normal_distribution<double> standard{};
	return boost::math::quantile(standard, p);
}

inline double student_cdf(double t, double dof) {
	const boost::math::students_t_distribution<double> dist{dof};
	return boost::math::cdf(dist, t);
}

inline double student_quantile(double p, double dof) {
	const boost::math::students_t_distribution<double> dist{dof};
	return boost::math::quantile(dist, p);
}

/**
 * Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
 *
 * Roots of P_n are refined by Newton iteration from the Chebyshev-like initial
 * guess; for n <= 128 this converges to machine precision in a handful of steps.
 */
template <std::size_t N>
struct GaussLegendre {
	std::array<double, N> nodes{};
	std::array<double, N> weights{};

	GaussLegendre() {
		const std::size_t half = (N + 1) / 2;
		for (std::size_t i = 0; i < half; ++i) {
			double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(N) + 0.5));
			double dp = 0.0;
			for (int iter = 0; iter < 100; ++iter) {
				double p0 = 1.0;
				double p1 = x;
				for (std::size_t k = 2; k <= N; ++k) {
					const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
					p0 = p1;
					p1 = pk;
				}
				dp = static_cast<double>(N) * (x * p1 - p0) / (x * x - 1.0);
				const double dx = p1 / dp;
				x -= dx;
				if (std::abs(dx) < 1e-16) {
					break;
				}
			}
			nodes[i] = -x;
			nodes[N - 1 - i] = x;
			const double w = 2.0 / ((1.0 - x * x) * dp * dp);
			weights[i] = w;
			weights[N - 1 - i] = w;
		}
	}

	template <class F>
	double integrate(F &&f, double a, double b) const {
		if (b <= a) {
			return 0.0;
		}
		const double mid = 0.5 * (a + b);
		const double half = 0.5 * (b - a);
		double acc = 0.0;
		for (std::size_t i = 0; i < N; ++i) {
			acc += weights[i] * f(mid + half * nodes[i]);
		}
		return acc * half;
	}
};

inline const GaussLegendre<64> &gauss_legendre_64() {
	static const GaussLegendre<64> rule{};
	return rule;
}

/**
 * Counter-based 64-bit generator: the k-th draw is SplitMix64(seed + k * golden).
 *
 * Draw streams are therefore a pure function of (seed, counter), identical on
 * every platform, and substreams can be split off by hashing a stream id into
 * the seed.
 */
class CounterRng {
public:
	explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
	    : key_{mix(seed ^ mix(stream + 0x632BE59BD9B4E019ULL))} {}

	std::uint64_t next_u64() noexcept {
		++counter_;
		return mix(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
	}

	/// Uniform on the open interval (0, 1).
	double uniform() noexcept {
		return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
	}

	/// Standard normal via Box-Muller; the second variate is cached.
	double normal() noexcept {
		if (has_spare_) {
			has_spare_ = false;
			return spare_;
		}
		const double u1 = uniform();
		const double u2 = uniform();
		const double r = std::sqrt(-2.0 * std::log(u1));
		const double angle = 2.0 * std::numbers::pi * u2;
		spare_ = r * std::sin(angle);
		has_spare_ = true;
		return r * std::cos(angle);
	}

	std::uint64_t counter() const noexcept { return counter_; }

private:
	static std::uint64_t mix(std::uint64_t z) noexcept {
		z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
		z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
		return z ^ (z >> 31);
	}

	std::uint64_t key_;
	std::uint64_t counter_ = 0;
	double spare_ = 0.0;
	bool has_spare_ = false;
};

/// Linear-interpolation sample quantile (Hyndman-Fan type 7) of finite values.
inline double sample_quantile(std::vector<double> values, double q) {
	if (values.empty()) {
		throw std::invalid_argument("sample_quantile: empty sample");
	}
	std::sort(values.begin(), values.end());
	const double pos = q * static_cast<double>(values.size() - 1);
	const auto lo = static_cast<std::size_t>(std::floor(pos));
	const auto hi = std::min(lo + 1, values.size() - 1);
	const double frac = pos - static_cast<double>(lo);
	return values[lo] + frac * (values[hi] - values[lo]);
}

inline double mean(std::span<const double> v) {
	if (v.empty()) {
		throw std::invalid_argument("mean: empty sample");
	}
	double acc = 0.0;
	for (double x : v) {
		acc += x;
	}
	return acc / static_cast<double>(v.size());
}

inline double variance(std::span<const double> v) {
	const double m = mean(v);
	double acc = 0.0;
	for (double x : v) {
		acc += (x - m) * (x - m);
	}
	return acc / static_cast<double>(v.size());
}

inline bool is_missing(double x) noexcept { return std::isnan(x); }

inline constexpr double missing_value() noexcept { return std::numeric_limits<double>::quiet_NaN(); }

} // namespace boundcast
