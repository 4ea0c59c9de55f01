#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

#include <boost/math/tools/minima.hpp>

namespace boundcast {

struct ScalarMinimum {
	double x = 0.0;
	double value = 0.0;
	std::uintmax_t iterations = 0;
	bool converged = false;
};

/**
 * Bounded 1-D minimization: a coarse grid scan locates the best bracket, then
 * Brent's golden-section/parabolic search refines inside it.
 *
 * The grid guards against the objective being multi-modal near the bounds;
 * `tol` is an absolute tolerance on x.
 */
template <class F>
ScalarMinimum minimize_bounded(F &&f, double lo, double hi, double tol = 1e-4, std::uintmax_t max_iter = 200,
                               int grid_points = 30) {
	if (!(lo < hi)) {
		throw std::invalid_argument("minimize_bounded: empty interval");
	}
	grid_points = std::max(grid_points, 3);
	const double step = (hi - lo) / static_cast<double>(grid_points - 1);
	int best = 0;
	double best_value = std::numeric_limits<double>::infinity();
	for (int i = 0; i < grid_points; ++i) {
		const double v = f(lo + step * i);
		if (v < best_value) {
			best_value = v;
			best = i;
		}
	}
	if (!std::isfinite(best_value)) {
		return ScalarMinimum{lo + step * best, best_value, 0, false};
	}
	const double a = lo + step * std::max(best - 1, 0);
	const double b = lo + step * std::min(best + 1, grid_points - 1);

	// Brent's tolerance is relative: choose bits so that 2^-bits * |x| stays below tol.
	const double scale = std::max(std::abs(a), std::abs(b));
	int bits = static_cast<int>(std::ceil(std::log2(std::max(scale, 1e-300) / tol))) + 1;
	bits = std::clamp(bits, 4, std::numeric_limits<double>::digits / 2);
	std::uintmax_t iterations = max_iter;
	const auto [x, value] = boost::math::tools::brent_find_minima(f, a, b, bits, iterations);
	ScalarMinimum result{x, value, iterations, iterations < max_iter};
	if (best_value < value) {
		result.x = lo + step * best;
		result.value = best_value;
	}
	return result;
}

} // namespace boundcast
