#pragma once

/** @file
 * Conjugate Bayesian AR(p) updating at fixed shape parameter: Gaussian prior
 * on theta (mean, precision), Gamma prior on the error precision, and decay
 * factors that widen the carried-over prior between batches.
 */

#include <cmath>
#include <optional>
#include <stdexcept>

#include <Eigen/Dense>

#include "boundcast/armodel.hpp"
#include "boundcast/glogit.hpp"
#include "boundcast/rls.hpp"

namespace boundcast {

struct BayesState {
	VectorXd mu;
	/// Precision of theta (inverse covariance).
	MatrixXd P;
	double alpha = 101.0;
	double beta = 1.0;
	double nu = 1.0;
	double lambda_theta = 0.995;
	double lambda_z = 0.995;

	int order() const noexcept { return static_cast<int>(mu.size()) - 1; }
	/// Point estimate of the error variance, beta / alpha.
	double sigma2() const noexcept { return beta / alpha; }
};

struct BayesPrior {
	double prior_scale = 1e-4;
	double alpha0 = 101.0;
	double beta0 = 1.0;
	double nu0 = 1.0;
	double lambda_theta = 0.995;
	double lambda_z = 0.995;
};

inline BayesState bayes_init(int p, const BayesPrior &prior = {}) {
	if (p < 1) {
		throw std::invalid_argument("bayes_init: order must be >= 1");
	}
	if (!(prior.prior_scale > 0.0) || !(prior.alpha0 > 0.0) || !(prior.beta0 > 0.0) || !(prior.nu0 > 0.0)) {
		throw std::invalid_argument("bayes_init: prior scalars must be positive");
	}
	if (!(prior.lambda_theta > 0.0 && prior.lambda_theta <= 1.0) || !(prior.lambda_z > 0.0 && prior.lambda_z <= 1.0)) {
		throw std::invalid_argument("bayes_init: decay factors must lie in (0,1]");
	}
	BayesState state;
	state.mu = VectorXd::Zero(p + 1);
	state.P = prior.prior_scale * MatrixXd::Identity(p + 1, p + 1);
	state.alpha = prior.alpha0;
	state.beta = prior.beta0;
	state.nu = prior.nu0;
	state.lambda_theta = prior.lambda_theta;
	state.lambda_z = prior.lambda_z;
	return state;
}

/// Prior for the next batch: covariance widened by lambda_theta^-M, Gamma parameters scaled by lambda_z.
inline BayesState bayes_decay(const BayesState &state, int m) {
	if (m < 1) {
		throw std::invalid_argument("bayes_decay: batch size must be >= 1");
	}
	BayesState next = state;
	next.P *= std::pow(state.lambda_theta, static_cast<double>(m));
	next.alpha *= state.lambda_z;
	next.beta *= state.lambda_z;
	return next;
}

inline MatrixXd default_noise_precision(const BayesState &state, Eigen::Index m) {
	return (state.alpha / state.beta) * MatrixXd::Identity(m, m);
}

/// Mean update in innovation form: mu + P^-1 Y (Pz^-1 + Y^T P^-1 Y)^-1 (y - Y^T mu).
inline VectorXd bayes_mean_innovation_form(const BayesState &state, const LagDesign &batch, const MatrixXd &noise_precision) {
	const Eigen::LLT<MatrixXd> prior(state.P);
	const MatrixXd gain_in = prior.solve(batch.predictors);
	const MatrixXd core = noise_precision.inverse() + batch.predictors.transpose() * gain_in;
	const VectorXd innovation = batch.targets - batch.predictors.transpose() * state.mu;
	return state.mu + gain_in * core.ldlt().solve(innovation);
}

namespace detail {

inline Updated<BayesState> finish_bayes_update(const BayesState &state, BayesState next, const VectorXd &weighted_targets,
                                               const LagDesign &batch, double s, double target_quad) {
	next.P = 0.5 * (next.P + next.P.transpose()).eval();
	const Eigen::LLT<MatrixXd> post(next.P);
	if (post.info() != Eigen::Success) {
		return {state, UpdateStatus::rolled_back};
	}
	next.mu = post.solve(weighted_targets + state.P * state.mu);
	next.alpha = state.alpha + 0.5 * static_cast<double>(batch.size());
	const double prior_quad = state.mu.dot(state.P * state.mu) / s;
	const double post_quad = next.mu.dot(next.P * next.mu) / s;
	next.beta = state.beta + 0.5 * (target_quad / s + prior_quad - post_quad);
	if (!(next.beta > 0.0) || !next.mu.allFinite()) {
		return {state, UpdateStatus::rolled_back};
	}
	return {next, UpdateStatus::ok};
}

inline void check_bayes_batch(const BayesState &state, const LagDesign &batch) {
	if (batch.predictors.rows() != state.mu.size()) {
		throw std::invalid_argument("bayes_update: design order does not match state");
	}
}

} // namespace detail

/**
 * Posterior update for a batch of M columns with noise precision Pz (M x M):
 * P* = P + Y Pz Y^T, mu* = P*^-1 (Y Pz y + P mu), alpha* = alpha + M/2 and
 * beta* = beta + (y^T Pz y / s + mu^T P_K mu - mu*^T P*_K mu*) / 2 with P_K = P / s,
 * where s = M / tr(Pz^-1) is the scalar noise precision (exact for Pz = s I).
 */
inline Updated<BayesState> bayes_update(const BayesState &state, const LagDesign &batch, const MatrixXd &noise_precision) {
	const Eigen::Index m = batch.size();
	if (m == 0) {
		return {state, UpdateStatus::ok};
	}
	detail::check_bayes_batch(state, batch);
	if (noise_precision.rows() != m || noise_precision.cols() != m) {
		throw std::invalid_argument("bayes_update: noise precision must be M x M");
	}
	BayesState next = state;
	next.P = state.P + batch.predictors * noise_precision * batch.predictors.transpose();
	const double s = static_cast<double>(m) / noise_precision.inverse().trace();
	const VectorXd weighted = noise_precision * batch.targets;
	return detail::finish_bayes_update(state, std::move(next), batch.predictors * weighted, batch, s,
	                                   batch.targets.dot(weighted));
}

/// Scalar noise precision Pz = s I; when unset, s = alpha / beta (the current posterior mean precision).
inline Updated<BayesState> bayes_update(const BayesState &state, const LagDesign &batch,
                                        std::optional<double> noise_precision = std::nullopt) {
	if (batch.size() == 0) {
		return {state, UpdateStatus::ok};
	}
	detail::check_bayes_batch(state, batch);
	const double s = noise_precision ? *noise_precision : state.alpha / state.beta;
	if (!(s > 0.0)) {
		throw std::invalid_argument("bayes_update: noise precision must be positive");
	}
	BayesState next = state;
	next.P = state.P + s * batch.predictors * batch.predictors.transpose();
	return detail::finish_bayes_update(state, std::move(next), s * (batch.predictors * batch.targets), batch, s,
	                                   s * batch.targets.squaredNorm());
}

/**
 * True when the Bayes mean update with Pz = I reproduces the RLS parameter
 * update (lambda = 1, no guard) from the given states on the same batch.
 */
inline bool coincides_with_rls(const BayesState &bayes, const RlsState &rls, const LagDesign &batch, double tol = 1e-8) {
	if (batch.size() == 0) {
		return (bayes.mu - rls.theta).cwiseAbs().maxCoeff() <= tol;
	}
	const MatrixXd identity = MatrixXd::Identity(batch.size(), batch.size());
	const VectorXd bayes_mean = bayes_mean_innovation_form(bayes, batch, identity);
	RlsState exact = rls;
	exact.lambda = 1.0;
	exact.guard = std::numeric_limits<double>::infinity();
	const auto updated = rls_update(exact, batch);
	if (updated.status != UpdateStatus::ok) {
		return false;
	}
	return (bayes_mean - updated.state.theta).cwiseAbs().maxCoeff() <= tol;
}

enum class PredictiveForm { gaussian, student_t };

/**
 * One-step predictive from regressor z = [1, L_nu(x_{t-1}), ...]: location
 * z^T mu, variance beta/alpha + z^T P^-1 z, inflated onto [L_nu(eps), L_nu(1-eps)].
 */
inline PredictiveCdf bayes_predictive(const BayesState &state, const VectorXd &z, double eps,
                                      PredictiveForm form = PredictiveForm::gaussian) {
	const GlogitMap map{state.nu, eps};
	const double location = z.dot(state.mu);
	const double param_var = z.dot(state.P.llt().solve(z));
	const double scale = std::sqrt(state.sigma2() + std::max(param_var, 0.0));
	if (form == PredictiveForm::student_t) {
		return PredictiveCdf{map, location, scale, 2.0 * state.alpha};
	}
	return PredictiveCdf{map, location, scale};
}

} // namespace boundcast
