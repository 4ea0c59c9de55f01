#pragma once

// Seeded generators shared by the property tests.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "boundcast/stats.hpp"

namespace boundcast::testing {

struct Gen {
	CounterRng rng;
	explicit Gen(std::uint64_t seed, std::uint64_t stream = 0) : rng{seed, stream} {}

	double uniform(double a, double b) { return a + (b - a) * rng.uniform(); }
	double normal(double mu = 0.0, double sd = 1.0) { return mu + sd * rng.normal(); }
	int integer(int lo, int hi) { return lo + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(hi - lo + 1)); }

	Eigen::VectorXd vector(Eigen::Index n, double sd = 1.0) {
		Eigen::VectorXd v(n);
		for (Eigen::Index i = 0; i < n; ++i) {
			v(i) = normal(0.0, sd);
		}
		return v;
	}

	Eigen::MatrixXd matrix(Eigen::Index r, Eigen::Index c, double sd = 1.0) {
		Eigen::MatrixXd m(r, c);
		for (Eigen::Index j = 0; j < c; ++j) {
			for (Eigen::Index i = 0; i < r; ++i) {
				m(i, j) = normal(0.0, sd);
			}
		}
		return m;
	}

	/// Well-conditioned SPD matrix A A^T + n I.
	Eigen::MatrixXd spd(Eigen::Index n) {
		const Eigen::MatrixXd a = matrix(n, n);
		return a * a.transpose() + static_cast<double>(n) * Eigen::MatrixXd::Identity(n, n);
	}
};

/// Stationary AR(p) in the transformed domain with intercept c, returned untransformed.
inline std::vector<double> ar_series(std::size_t n, double c, const std::vector<double> &phi, double sd, std::uint64_t seed) {
	Gen g{seed, 77};
	std::vector<double> y;
	std::vector<double> state(phi.size(), 0.0);
	for (std::size_t t = 0; t < n + 500; ++t) {
		double v = c + sd * g.normal();
		for (std::size_t i = 0; i < phi.size(); ++i) {
			v += phi[i] * state[state.size() - 1 - i];
		}
		state.erase(state.begin());
		state.push_back(v);
		if (t >= 500) {
			y.push_back(v);
		}
	}
	return y;
}

} // namespace boundcast::testing
