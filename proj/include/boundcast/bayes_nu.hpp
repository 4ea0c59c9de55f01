#pragma once

/** @file
 * Adaptive shape-parameter step for the Bayesian AR model.
 *
 * The posterior precision of theta is factored as P = k^2 L L^T. The columns of
 * L act as p+1 representative predictor vectors with responses y* = L^T mu,
 * which reproduce mu exactly under least squares. Mapping them back through the
 * inverse transform at the current nu gives representative original-domain
 * data; re-transforming at a candidate nu and scoring the fit of mu measures
 * how far that candidate moves away from what the posterior has learned. The
 * sum of that score and the new batch's negative log-likelihood is minimized
 * over nu, and the result is blended into the current nu with rate gamma.
 */

#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>

#include <Eigen/Dense>

#include "boundcast/bayes.hpp"
#include "boundcast/glogit.hpp"
#include "boundcast/optimize.hpp"

namespace boundcast {

inline constexpr double nu_lower_bound = 0.1;
inline constexpr double nu_upper_bound = 3.0;

struct NuUpdateConfig {
	double gamma = 0.05;
	double nu_lo = nu_lower_bound;
	double nu_hi = nu_upper_bound;
	/// Cholesky regularization scalar; when unset, k^2 = max diag(P) / l_scale^2 so that max diag(L) = l_scale.
	std::optional<double> k{};
	double l_scale = 1.0;
	double optimizer_tol = 1e-4;
	std::uintmax_t max_iter = 200;
	double max_condition = 1e12;

	void validate() const {
		if (!(gamma > 0.0 && gamma < 1.0)) {
			throw std::invalid_argument("NuUpdateConfig: gamma must lie in (0,1)");
		}
		if (!(nu_lo > 0.0 && nu_lo < nu_hi)) {
			throw std::invalid_argument("NuUpdateConfig: nu bounds must be positive and ordered");
		}
		if (!(l_scale > 0.0)) {
			throw std::invalid_argument("NuUpdateConfig: l_scale must be positive");
		}
		if (k && !(*k > 0.0)) {
			throw std::invalid_argument("NuUpdateConfig: k must be positive");
		}
	}
};

struct Reconstruction {
	/// Responses L^T mu in the transformed domain.
	VectorXd y_star;
	/// Lower-triangular factor with k^2 L L^T = P.
	MatrixXd L;
	/// Responses mapped back to the original domain at the current nu.
	VectorXd x_star;
	/// Predictors L mapped back element-wise to the original domain at the current nu.
	MatrixXd X_star;
	double k = 1.0;
};

/// Returns nullopt when P is not safely positive definite (condition above max_condition).
inline std::optional<Reconstruction> reconstruct_representative(const BayesState &state, const GlogitMap &map,
                                                                std::optional<double> k = std::nullopt,
                                                                double max_condition = 1e12, double l_scale = 1.0) {
	const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(state.P, Eigen::EigenvaluesOnly);
	const double smallest = eig.eigenvalues().minCoeff();
	const double largest = eig.eigenvalues().maxCoeff();
	if (!(smallest > 0.0) || largest / smallest > max_condition) {
		return std::nullopt;
	}
	Reconstruction rec;
	rec.k = k ? *k : std::sqrt(state.P.diagonal().maxCoeff()) / l_scale;
	const Eigen::LLT<MatrixXd> chol(state.P / (rec.k * rec.k));
	if (chol.info() != Eigen::Success) {
		return std::nullopt;
	}
	rec.L = chol.matrixL();
	rec.y_star = rec.L.transpose() * state.mu;

	const auto back = [&](double y) { return map.inverse(std::clamp(y, map.lo(), map.hi())); };
	rec.x_star = rec.y_star.unaryExpr(back);
	rec.X_star = rec.L.unaryExpr(back);
	return rec;
}

/**
 * Negative log-likelihood of a raw (original-domain) batch at shape nu, with theta
 * and sigma^2 held at the posterior point estimates; Jacobian terms included.
 * Row 0 of the batch predictors is the intercept and is not transformed.
 */
inline double nu_batch_nll(double nu, const LagDesign &raw_batch, const BayesState &state) {
	const double sigma2 = state.sigma2();
	const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi * sigma2);
	double total = 0.0;
	for (Eigen::Index c = 0; c < raw_batch.size(); ++c) {
		const double x = raw_batch.targets(c);
		double pred = state.mu(0);
		for (Eigen::Index i = 1; i < raw_batch.predictors.rows(); ++i) {
			pred += state.mu(i) * glogit_forward(raw_batch.predictors(i, c), nu);
		}
		const double r = glogit_forward(x, nu) - pred;
		total += log_norm + r * r / (2.0 * sigma2) - glogit_log_jacobian(x, nu);
	}
	return total;
}

/// Gaussian negative log-likelihood of the reconstructed data re-transformed at nu (p+1 terms, no Jacobian).
inline double nu_reconstruction_nll(double nu, const Reconstruction &rec, const BayesState &state) {
	const double sigma2 = state.sigma2();
	const VectorXd y_nu = rec.x_star.unaryExpr([nu](double x) { return glogit_forward(x, nu); });
	const MatrixXd Y_nu = rec.X_star.unaryExpr([nu](double x) { return glogit_forward(x, nu); });
	const VectorXd resid = y_nu - Y_nu.transpose() * state.mu;
	const auto n = static_cast<double>(resid.size());
	return 0.5 * n * std::log(2.0 * std::numbers::pi * sigma2) + resid.squaredNorm() / (2.0 * sigma2);
}

inline double nu_objective(double nu, const LagDesign &raw_batch, const Reconstruction &rec, const BayesState &state,
                           double nu_lo = nu_lower_bound, double nu_hi = nu_upper_bound) {
	if (!(nu >= nu_lo && nu <= nu_hi)) {
		throw std::domain_error("nu_objective: nu outside its bounds");
	}
	return nu_batch_nll(nu, raw_batch, state) + nu_reconstruction_nll(nu, rec, state);
}

struct NuStepResult {
	BayesState state;
	UpdateStatus status = UpdateStatus::ok;
	double nu_hat = 0.0;
};

/// Minimize the combined objective over [nu_lo, nu_hi] and blend: nu <- (1 - gamma) nu + gamma nu_hat.
inline NuStepResult nu_step(const BayesState &state, const LagDesign &raw_batch, double eps, const NuUpdateConfig &config = {}) {
	config.validate();
	NuStepResult out{state, UpdateStatus::ok, state.nu};
	if (raw_batch.size() == 0) {
		return out;
	}
	const GlogitMap map{state.nu, eps};
	const auto rec = reconstruct_representative(state, map, config.k, config.max_condition, config.l_scale);
	if (!rec) {
		out.status = UpdateStatus::skipped_singular;
		return out;
	}
	const auto best = minimize_bounded(
	    [&](double nu) { return nu_objective(nu, raw_batch, *rec, state, config.nu_lo, config.nu_hi); }, config.nu_lo,
	    config.nu_hi, config.optimizer_tol, config.max_iter);
	if (!best.converged || !std::isfinite(best.value)) {
		out.status = UpdateStatus::skipped_singular;
		return out;
	}
	out.nu_hat = best.x;
	out.state.nu = std::clamp((1.0 - config.gamma) * state.nu + config.gamma * best.x, config.nu_lo, config.nu_hi);
	return out;
}

} // namespace boundcast
