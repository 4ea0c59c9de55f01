#pragma once

/** @file
 * Synthetic bounded series with known ground truth: an AR(p) process in the
 * transformed domain, mapped back through the inverse transform with a
 * (possibly time-varying) shape parameter and thresholded.
 */

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "boundcast/armodel.hpp"
#include "boundcast/datapipe.hpp"
#include "boundcast/glogit.hpp"
#include "boundcast/stats.hpp"

namespace boundcast {

struct NuProfile {
	enum class Kind { constant, ramp, step };
	Kind kind = Kind::constant;
	double start = 1.0;
	double end = 1.0;
	/// Fraction of the series at which a step occurs.
	double change_at = 0.5;

	double at(std::size_t t, std::size_t length) const {
		const double frac = length > 1 ? static_cast<double>(t) / static_cast<double>(length - 1) : 0.0;
		switch (kind) {
		case Kind::constant: return start;
		case Kind::ramp: return start + (end - start) * frac;
		case Kind::step: return frac < change_at ? start : end;
		}
		return start;
	}
};

struct SynthSpec {
	int p = 1;
	/// theta_0..theta_p at the first retained step.
	VectorXd theta;
	/// When set, theta drifts linearly to this value at the last step.
	std::optional<VectorXd> theta_end{};
	double sigma2 = 0.1;
	NuProfile nu{};
	double eps = 0.005;
	std::size_t length = 1000;
	std::uint64_t seed = 0;
	double missing_rate = 0.0;
	std::size_t burn_in = 1000;
};

/// Largest modulus among the roots of z^p - phi_1 z^{p-1} - ... - phi_p (must be < 1).
inline double ar_spectral_radius(const VectorXd &theta) {
	const auto p = theta.size() - 1;
	MatrixXd companion = MatrixXd::Zero(p, p);
	companion.row(0) = theta.tail(p).transpose();
	for (Eigen::Index i = 1; i < p; ++i) {
		companion(i, i - 1) = 1.0;
	}
	return Eigen::EigenSolver<MatrixXd>(companion, false).eigenvalues().cwiseAbs().maxCoeff();
}

inline void validate(const SynthSpec &spec) {
	if (spec.p < 1 || spec.theta.size() != spec.p + 1) {
		throw std::invalid_argument("synth: theta must have p+1 entries");
	}
	if (!(spec.sigma2 >= 0.0)) {
		throw std::invalid_argument("synth: sigma2 must be nonnegative");
	}
	if (!(spec.eps > 0.0 && spec.eps < 0.5)) {
		throw std::invalid_argument("synth: eps must lie in (0, 0.5)");
	}
	if (!(spec.missing_rate >= 0.0 && spec.missing_rate < 1.0)) {
		throw std::invalid_argument("synth: missing rate must lie in [0,1)");
	}
	if (!(spec.nu.start > 0.0) || !(spec.nu.end > 0.0)) {
		throw std::invalid_argument("synth: nu must be positive");
	}
	const auto stationary = [](const VectorXd &th) { return ar_spectral_radius(th) < 1.0; };
	if (!stationary(spec.theta)) {
		throw std::invalid_argument("synth: AR polynomial is not stationary");
	}
	if (spec.theta_end) {
		if (spec.theta_end->size() != spec.theta.size()) {
			throw std::invalid_argument("synth: theta_end must match theta");
		}
		for (double f : {0.25, 0.5, 0.75, 1.0}) {
			if (!stationary(spec.theta + f * (*spec.theta_end - spec.theta))) {
				throw std::invalid_argument("synth: drifting AR polynomial leaves the stationary region");
			}
		}
	}
}

struct SynthSeries {
	/// Observations in [eps, 1-eps]; NaN where missing.
	std::vector<double> x;
	/// Latent transformed values before inversion and clamping.
	std::vector<double> y;
	std::vector<double> nu_path;
	/// theta at each step, one column per step.
	MatrixXd theta_path;
};

inline SynthSeries generate(const SynthSpec &spec) {
	validate(spec);
	CounterRng noise{spec.seed, 1};
	CounterRng mask{spec.seed, 2};
	const double sd = std::sqrt(spec.sigma2);
	const auto p = static_cast<std::size_t>(spec.p);
	const std::size_t total = spec.burn_in + spec.length;

	SynthSeries out;
	out.x.reserve(spec.length);
	out.y.reserve(spec.length);
	out.nu_path.reserve(spec.length);
	out.theta_path.resize(spec.p + 1, static_cast<Eigen::Index>(spec.length));

	// Start the recursion at the unconditional mean of the initial process.
	const double mean0 = spec.theta(0) / (1.0 - spec.theta.tail(spec.p).sum());
	std::vector<double> latent(p, mean0);
	for (std::size_t step = 0; step < total; ++step) {
		const std::size_t t = step < spec.burn_in ? 0 : step - spec.burn_in;
		VectorXd theta = spec.theta;
		if (spec.theta_end && step >= spec.burn_in) {
			const double frac = spec.length > 1 ? static_cast<double>(t) / static_cast<double>(spec.length - 1) : 0.0;
			theta = spec.theta + frac * (*spec.theta_end - spec.theta);
		}
		double y = theta(0);
		for (std::size_t i = 1; i <= p; ++i) {
			y += theta(static_cast<Eigen::Index>(i)) * latent[latent.size() - i];
		}
		y += sd * noise.normal();
		latent.push_back(y);
		if (latent.size() > p) {
			latent.erase(latent.begin());
		}
		if (step < spec.burn_in) {
			continue;
		}
		const double nu = spec.nu.at(t, spec.length);
		const double x = clamp_threshold(glogit_inverse(y, nu), spec.eps);
		const bool missing = spec.missing_rate > 0.0 && mask.uniform() < spec.missing_rate;
		out.x.push_back(missing ? missing_value() : x);
		out.y.push_back(y);
		out.nu_path.push_back(nu);
		out.theta_path.col(static_cast<Eigen::Index>(t)) = theta;
	}
	return out;
}

/// Intercept that centres the stationary mean of the transformed process at L_nu(x_centre).
inline double centred_intercept(const VectorXd &phi, double nu, double x_centre = 0.5) {
	return glogit_forward(x_centre, nu) * (1.0 - phi.sum());
}

/// AR coefficients phi_1..phi_p from partial autocorrelations in (-1, 1); always stationary.
inline VectorXd ar_from_pacf(const std::vector<double> &kappa) {
	VectorXd phi(0);
	for (double k : kappa) {
		if (!(std::abs(k) < 1.0)) {
			throw std::invalid_argument("ar_from_pacf: partial autocorrelations must lie in (-1, 1)");
		}
		VectorXd next(phi.size() + 1);
		for (Eigen::Index j = 0; j < phi.size(); ++j) {
			next(j) = phi(j) - k * phi(phi.size() - 1 - j);
		}
		next(phi.size()) = k;
		phi = next;
	}
	return phi;
}

struct FarmDraw {
	bool drift = true;
	std::size_t length = 8000;
};

/**
 * A randomized synthetic farm indexed by (seed, farm). With drift, theta moves
 * linearly between two draws and nu ramps between a left-skewed and a
 * right-skewed shape; otherwise both stay at the first draw.
 */
inline SynthSpec synthetic_farm(std::uint64_t seed, std::uint64_t farm, const FarmDraw &draw = {}) {
	CounterRng rng{seed, 1000 + farm};
	const auto between = [&](double a, double b) { return a + (b - a) * rng.uniform(); };
	SynthSpec spec;
	spec.p = 1 + static_cast<int>(rng.next_u64() % 3);
	spec.seed = seed * 7919 + farm;
	spec.length = draw.length;
	spec.sigma2 = between(0.15, 0.4);

	const auto draw_theta = [&](double nu) {
		std::vector<double> kappa{between(0.85, 0.97)};
		for (int k = 1; k < spec.p; ++k) {
			kappa.push_back(between(-0.3, 0.3));
		}
		const VectorXd phi = ar_from_pacf(kappa);
		VectorXd theta(spec.p + 1);
		theta(0) = centred_intercept(phi, nu, between(0.2, 0.45));
		theta.tail(spec.p) = phi;
		return theta;
	};

	const double nu_a = between(0.5, 0.9);
	const double nu_b = between(1.4, 2.2);
	const bool rising = rng.uniform() < 0.5;
	spec.nu.start = rising ? nu_a : nu_b;
	spec.nu.end = rising ? nu_b : nu_a;
	if (draw.drift) {
		spec.nu.kind = NuProfile::Kind::ramp;
		spec.theta = draw_theta(spec.nu.start);
		spec.theta_end = draw_theta(spec.nu.end);
	} else {
		spec.nu.end = spec.nu.start;
		spec.theta = draw_theta(spec.nu.start);
	}
	return spec;
}

/// Farm records for a synthetic series: power = x * capacity MW, no interventions.
inline std::vector<FarmRecord> synth_records(const std::vector<double> &x, double capacity_mw, std::int64_t start) {
	std::vector<FarmRecord> rows(x.size());
	for (std::size_t i = 0; i < x.size(); ++i) {
		rows[i].timestamp = start + static_cast<std::int64_t>(i) * half_hour_seconds;
		rows[i].power_mw = is_missing(x[i]) ? missing_value() : x[i] * capacity_mw;
		rows[i].bav_mwh = 0.0;
		rows[i].oav_mwh = 0.0;
	}
	return rows;
}

} // namespace boundcast
