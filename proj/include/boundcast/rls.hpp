#pragma once

/** @file
 * Recursive least squares in information form with exponential forgetting,
 * plus the adaptive error-variance update driven by the deterministic forecast.
 */

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "boundcast/armodel.hpp"

namespace boundcast {

struct RlsState {
	VectorXd theta;
	/// Information matrix P = sum of lambda-weighted outer products of predictor columns.
	MatrixXd P;
	double sigma2 = 1.0;
	double lambda = 0.9999;
	double guard = 0.1;
};

enum class UpdateStatus {
	ok,
	/// Parameter step rejected (update norm too large); information still advanced.
	guarded,
	/// Step skipped because a matrix was singular; auxiliary state still advanced.
	skipped_singular,
	/// Update would break positive-definiteness; previous state kept.
	rolled_back,
};

inline const char *to_string(UpdateStatus s) noexcept {
	switch (s) {
	case UpdateStatus::ok: return "ok";
	case UpdateStatus::guarded: return "guarded";
	case UpdateStatus::skipped_singular: return "skipped_singular";
	case UpdateStatus::rolled_back: return "rolled_back";
	}
	return "unknown";
}

template <class State>
struct Updated {
	State state;
	UpdateStatus status = UpdateStatus::ok;
};

/// Forgetting factor with n_eff effective observations: lambda = 1 - 2/(n_eff + 1).
inline double lambda_from_effective(double n_eff) { return 1.0 - 2.0 / (n_eff + 1.0); }
inline double effective_from_lambda(double lambda) { return (1.0 + lambda) / (1.0 - lambda); }

inline RlsState rls_init(const LagDesign &design, double lambda, double guard = 0.1) {
	if (!(lambda > 0.0 && lambda <= 1.0)) {
		throw std::invalid_argument("rls_init: lambda must lie in (0,1]");
	}
	const ArState ols = ols_fit(design);
	RlsState state;
	state.theta = ols.theta;
	state.P = design.predictors * design.predictors.transpose();
	state.sigma2 = ols.sigma2;
	state.lambda = lambda;
	state.guard = guard;
	return state;
}

/**
 * Batch update with M new columns: P <- lambda^M P + Yn Yn^T and
 * theta <- theta + Pb^-1 Yn (I_M + Yn^T Pb^-1 Yn)^-1 (yn - Yn^T theta), where
 * Pb = lambda^M P is the forgotten prior information. With lambda = 1 this is
 * the exact least-squares recursion.
 */
inline Updated<RlsState> rls_update(const RlsState &state, const LagDesign &batch) {
	const Eigen::Index m = batch.size();
	if (m == 0) {
		return {state, UpdateStatus::ok};
	}
	if (batch.predictors.rows() != state.theta.size()) {
		throw std::invalid_argument("rls_update: design order does not match state");
	}
	const double decay = std::pow(state.lambda, static_cast<double>(m));
	const MatrixXd prior = decay * state.P;
	const Eigen::LLT<MatrixXd> prior_chol(prior);
	if (prior_chol.info() != Eigen::Success) {
		return {state, UpdateStatus::rolled_back};
	}

	RlsState next = state;
	next.P = prior + batch.predictors * batch.predictors.transpose();
	next.P = 0.5 * (next.P + next.P.transpose()).eval();
	const Eigen::LLT<MatrixXd> post_chol(next.P);
	if (post_chol.info() != Eigen::Success) {
		return {state, UpdateStatus::rolled_back};
	}

	const MatrixXd gain_in = prior_chol.solve(batch.predictors);
	const MatrixXd core = MatrixXd::Identity(m, m) + batch.predictors.transpose() * gain_in;
	const VectorXd innovation = batch.targets - batch.predictors.transpose() * state.theta;
	const VectorXd step = gain_in * core.ldlt().solve(innovation);

	if (!step.allFinite()) {
		return {state, UpdateStatus::rolled_back};
	}
	if (step.lpNorm<1>() >= state.guard) {
		return {next, UpdateStatus::guarded};
	}
	next.theta += step;
	return {next, UpdateStatus::ok};
}

/// Which term of the variance recursion receives the weight w*.
enum class VarianceWeighting {
	/// sigma2 <- (1 - w) sigma2 + w e^2, with w = 1 - (1 - lambda) 4 yhat (1 - yhat).
	as_printed,
	/// sigma2 <- w sigma2 + (1 - w) e^2: conventional exponential smoothing.
	swapped,
};

inline double variance_weight(double lambda, double yhat_original) {
	return 1.0 - (1.0 - lambda) * 4.0 * yhat_original * (1.0 - yhat_original);
}

inline RlsState rls_variance_update(const RlsState &state, double yhat_original, double y_obs, double y_pred,
                                    VarianceWeighting weighting = VarianceWeighting::as_printed) {
	if (!(yhat_original >= 0.0 && yhat_original <= 1.0)) {
		throw std::domain_error("rls_variance_update: forecast must lie in [0,1]");
	}
	const double w = variance_weight(state.lambda, yhat_original);
	const double e2 = (y_obs - y_pred) * (y_obs - y_pred);
	RlsState next = state;
	if (weighting == VarianceWeighting::as_printed) {
		next.sigma2 = (1.0 - w) * state.sigma2 + w * e2;
	} else {
		next.sigma2 = w * state.sigma2 + (1.0 - w) * e2;
	}
	next.sigma2 = std::max(next.sigma2, min_variance);
	return next;
}

} // namespace boundcast
