#pragma once

/** @file
 * Online Newton-Raphson on the exponentially forgotten negative log-likelihood
 * of w = [theta, sigma^2, nu], with an outer-product Hessian approximation.
 */

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>

#include <Eigen/Dense>

#include "boundcast/armodel.hpp"
#include "boundcast/rls.hpp"

namespace boundcast {

struct NrState {
	/// [theta_0 .. theta_p, sigma^2, nu]
	VectorXd w;
	MatrixXd hess;
	double lambda = 0.9999;
	double sigma2_floor = 1e-8;
	double nu_lo = 0.1;
	double nu_hi = 3.0;

	int order() const noexcept { return static_cast<int>(w.size()) - 3; }
	double sigma2() const { return w(w.size() - 2); }
	double nu() const { return w(w.size() - 1); }
	VectorXd theta() const { return w.head(w.size() - 2); }
};

inline NrState nr_init(const VectorXd &theta, double sigma2, double nu, double lambda) {
	if (!(lambda > 0.0 && lambda < 1.0)) {
		throw std::invalid_argument("nr_init: lambda must lie in (0,1)");
	}
	NrState state;
	const Eigen::Index n = theta.size() + 2;
	state.w.resize(n);
	state.w.head(theta.size()) = theta;
	state.w(n - 2) = sigma2;
	state.w(n - 1) = nu;
	state.hess = MatrixXd::Zero(n, n);
	state.lambda = lambda;
	return state;
}

namespace detail {

inline void check_nr_inputs(double x_new, std::span<const double> x_lags, const VectorXd &w) {
	if (x_lags.size() + 3 != static_cast<std::size_t>(w.size())) {
		throw std::invalid_argument("nr: lag count does not match parameter vector");
	}
	if (!(x_new > 0.0 && x_new < 1.0)) {
		throw std::domain_error("nr: observation must lie in (0,1)");
	}
	for (double v : x_lags) {
		if (!(v > 0.0 && v < 1.0)) {
			throw std::domain_error("nr: lag must lie in (0,1)");
		}
	}
	if (!(w(w.size() - 2) > 0.0) || !(w(w.size() - 1) > 0.0)) {
		throw std::domain_error("nr: sigma^2 and nu must be positive");
	}
}

} // namespace detail

/// ln p(x_new | lags, w): Gaussian log-density in the L_nu domain plus the log-Jacobian.
inline double nr_obs_loglik(double x_new, std::span<const double> x_lags, const VectorXd &w) {
	detail::check_nr_inputs(x_new, x_lags, w);
	const Eigen::Index n = w.size();
	const double sigma2 = w(n - 2);
	const double nu = w(n - 1);
	double pred = w(0);
	for (std::size_t i = 0; i < x_lags.size(); ++i) {
		pred += w(static_cast<Eigen::Index>(i) + 1) * glogit_forward(x_lags[i], nu);
	}
	const double r = glogit_forward(x_new, nu) - pred;
	return -0.5 * std::log(2.0 * std::numbers::pi * sigma2) - r * r / (2.0 * sigma2) + glogit_log_jacobian(x_new, nu);
}

/// Analytic gradient of nr_obs_loglik with respect to w.
inline VectorXd nr_gradient(double x_new, std::span<const double> x_lags, const VectorXd &w) {
	detail::check_nr_inputs(x_new, x_lags, w);
	const Eigen::Index n = w.size();
	const double sigma2 = w(n - 2);
	const double nu = w(n - 1);

	double pred = w(0);
	double dpred_dnu = 0.0;
	VectorXd z(n - 2);
	z(0) = 1.0;
	for (std::size_t i = 0; i < x_lags.size(); ++i) {
		const auto k = static_cast<Eigen::Index>(i) + 1;
		z(k) = glogit_forward(x_lags[i], nu);
		pred += w(k) * z(k);
		dpred_dnu += w(k) * glogit_dnu(x_lags[i], nu);
	}
	const double r = glogit_forward(x_new, nu) - pred;

	VectorXd g(n);
	g.head(n - 2) = (r / sigma2) * z;
	g(n - 2) = -0.5 / sigma2 + r * r / (2.0 * sigma2 * sigma2);
	const double lx = std::log(x_new);
	const double one_minus = -std::expm1(nu * lx);
	const double dr_dnu = glogit_dnu(x_new, nu) - dpred_dnu;
	g(n - 1) = -(r / sigma2) * dr_dnu + 1.0 / nu + std::exp(nu * lx) * lx / one_minus;
	return g;
}

inline constexpr double max_hessian_condition = 1e12;

/**
 * One-observation Newton step: hess <- lambda hess + (1 - lambda) h h^T, then
 * w <- w - hess^-1 grad with grad = -(1 - lambda) h the forgotten negative score.
 *
 * The step is skipped (hess still advances) when hess is singular or ill-conditioned;
 * afterwards sigma^2 is floored and nu clamped into its bounds.
 */
inline Updated<NrState> nr_update(const NrState &state, double x_new, std::span<const double> x_lags) {
	const VectorXd h = nr_gradient(x_new, x_lags, state.w);
	NrState next = state;
	next.hess = state.lambda * state.hess + (1.0 - state.lambda) * h * h.transpose();
	next.hess = 0.5 * (next.hess + next.hess.transpose()).eval();
	if (!h.allFinite()) {
		return {state, UpdateStatus::rolled_back};
	}
	if (h.isZero(0.0)) {
		return {next, UpdateStatus::ok};
	}

	const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(next.hess);
	const VectorXd &ev = eig.eigenvalues();
	const double largest = ev.cwiseAbs().maxCoeff();
	const double smallest = ev.cwiseAbs().minCoeff();
	if (!(largest > 0.0) || !(smallest > 0.0) || largest / smallest > max_hessian_condition) {
		return {next, UpdateStatus::skipped_singular};
	}
	const VectorXd grad = -(1.0 - state.lambda) * h;
	const VectorXd step = eig.eigenvectors() * (ev.cwiseInverse().asDiagonal() * (eig.eigenvectors().transpose() * grad));
	if (!step.allFinite()) {
		return {next, UpdateStatus::skipped_singular};
	}
	next.w -= step;
	const Eigen::Index n = next.w.size();
	next.w(n - 2) = std::max(next.w(n - 2), state.sigma2_floor);
	next.w(n - 1) = std::clamp(next.w(n - 1), state.nu_lo, state.nu_hi);
	return {next, UpdateStatus::ok};
}

/**
 * Accumulate hess <- lambda hess + (1 - lambda) h h^T over the complete
 * (target, lags) pairs of a training series with w held fixed.
 */
inline NrState nr_prime_hessian(const NrState &state, std::span<const double> x) {
	const auto p = static_cast<std::size_t>(state.order());
	NrState next = state;
	std::vector<double> lags(p);
	for (std::size_t t = p; t < x.size(); ++t) {
		bool complete = !is_missing(x[t]);
		for (std::size_t i = 1; i <= p && complete; ++i) {
			lags[i - 1] = x[t - i];
			complete = !is_missing(lags[i - 1]);
		}
		if (!complete) {
			continue;
		}
		const VectorXd h = nr_gradient(x[t], lags, next.w);
		if (h.allFinite()) {
			next.hess = next.lambda * next.hess + (1.0 - next.lambda) * h * h.transpose();
		}
	}
	next.hess = 0.5 * (next.hess + next.hess.transpose()).eval();
	return next;
}

} // namespace boundcast
