#pragma once

/** @file
 * AR(p) data shaping on transformed series: lag designs with pair-dropping for
 * missing values, batch least squares, PACF order selection, and the profile
 * likelihood fit of the glogit shape parameter.
 */

#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "boundcast/glogit.hpp"
#include "boundcast/optimize.hpp"
#include "boundcast/stats.hpp"

namespace boundcast {

using Eigen::MatrixXd;
using Eigen::VectorXd;

class SingularDesignError : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

/// Targets y and predictor matrix with one column [1, y_{t-1}, ..., y_{t-p}] per complete pair.
struct LagDesign {
	VectorXd targets;
	MatrixXd predictors;
	std::vector<std::size_t> pair_index;

	int order() const noexcept { return static_cast<int>(predictors.rows()) - 1; }
	Eigen::Index size() const noexcept { return targets.size(); }
};

struct ArState {
	int p = 1;
	VectorXd theta;
	double sigma2 = 1.0;
};

/// Regressor [1, s[t-1], ..., s[t-p]]; NaN-free only if every lag is present.
inline VectorXd lag_vector(std::span<const double> series, std::size_t t, int p) {
	VectorXd z(p + 1);
	z(0) = 1.0;
	for (int i = 1; i <= p; ++i) {
		z(i) = series[t - static_cast<std::size_t>(i)];
	}
	return z;
}

inline LagDesign build_lag_design(std::span<const double> series, int p) {
	if (p < 1) {
		throw std::invalid_argument("build_lag_design: order must be >= 1");
	}
	const auto order = static_cast<std::size_t>(p);
	std::vector<std::size_t> keep;
	for (std::size_t t = order; t < series.size(); ++t) {
		bool complete = !is_missing(series[t]);
		for (std::size_t i = 1; complete && i <= order; ++i) {
			complete = !is_missing(series[t - i]);
		}
		if (complete) {
			keep.push_back(t);
		}
	}
	if (keep.empty()) {
		throw std::invalid_argument("build_lag_design: no complete observation-predictor pair");
	}
	LagDesign design;
	design.targets.resize(static_cast<Eigen::Index>(keep.size()));
	design.predictors.resize(p + 1, static_cast<Eigen::Index>(keep.size()));
	for (std::size_t c = 0; c < keep.size(); ++c) {
		const auto col = static_cast<Eigen::Index>(c);
		design.targets(col) = series[keep[c]];
		design.predictors.col(col) = lag_vector(series, keep[c], p);
	}
	design.pair_index = std::move(keep);
	return design;
}

/// Element-wise L_nu with missing markers propagated.
inline std::vector<double> transform_series(std::span<const double> x, double nu) {
	std::vector<double> y(x.size());
	for (std::size_t i = 0; i < x.size(); ++i) {
		y[i] = is_missing(x[i]) ? missing_value() : glogit_forward(x[i], nu);
	}
	return y;
}

inline constexpr double max_design_condition = 1e12;

/// Throws SingularDesignError when the information matrix is too ill-conditioned to invert.
inline void check_information_matrix(const MatrixXd &info) {
	const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(info, Eigen::EigenvaluesOnly);
	const double smallest = eig.eigenvalues().minCoeff();
	const double largest = eig.eigenvalues().maxCoeff();
	if (!(smallest > 0.0) || largest / smallest > max_design_condition) {
		Eigen::Index deficient = 0;
		for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
			if (!(eig.eigenvalues()(i) > largest / max_design_condition)) {
				++deficient;
			}
		}
		std::ostringstream msg;
		msg << "singular design: " << deficient << " of " << info.rows()
		    << " directions are rank deficient (eigenvalue range [" << smallest << ", " << largest << "])";
		throw SingularDesignError(msg.str());
	}
}

inline constexpr double min_variance = 1e-12;

inline ArState ols_fit(const LagDesign &design) {
	const MatrixXd info = design.predictors * design.predictors.transpose();
	check_information_matrix(info);
	ArState state;
	state.p = design.order();
	state.theta = info.ldlt().solve(design.predictors * design.targets);
	const VectorXd resid = design.targets - design.predictors.transpose() * state.theta;
	state.sigma2 = std::max(resid.squaredNorm() / static_cast<double>(resid.size()), min_variance);
	return state;
}

/// Partial autocorrelations at lags 1..max_lag by Durbin-Levinson on the sample autocovariance.
inline std::vector<double> pacf(std::span<const double> series, int max_lag) {
	std::vector<double> present;
	for (double v : series) {
		if (!is_missing(v)) {
			present.push_back(v);
		}
	}
	if (present.size() < static_cast<std::size_t>(max_lag) + 2) {
		throw std::invalid_argument("pacf: series too short");
	}
	const double m = mean(present);
	const auto n = static_cast<double>(present.size());
	std::vector<double> gamma(static_cast<std::size_t>(max_lag) + 1, 0.0);
	for (int k = 0; k <= max_lag; ++k) {
		double acc = 0.0;
		for (std::size_t t = static_cast<std::size_t>(k); t < series.size(); ++t) {
			const double a = series[t];
			const double b = series[t - static_cast<std::size_t>(k)];
			if (!is_missing(a) && !is_missing(b)) {
				acc += (a - m) * (b - m);
			}
		}
		gamma[static_cast<std::size_t>(k)] = acc / n;
	}
	if (!(gamma[0] > 0.0)) {
		throw std::invalid_argument("pacf: series has zero variance");
	}

	std::vector<double> out;
	std::vector<double> phi;
	double v = gamma[0];
	for (int k = 1; k <= max_lag; ++k) {
		double num = gamma[static_cast<std::size_t>(k)];
		for (int j = 1; j < k; ++j) {
			num -= phi[static_cast<std::size_t>(j - 1)] * gamma[static_cast<std::size_t>(k - j)];
		}
		const double kappa = num / v;
		std::vector<double> next(static_cast<std::size_t>(k));
		for (int j = 1; j < k; ++j) {
			next[static_cast<std::size_t>(j - 1)] =
			    phi[static_cast<std::size_t>(j - 1)] - kappa * phi[static_cast<std::size_t>(k - j - 1)];
		}
		next[static_cast<std::size_t>(k - 1)] = kappa;
		phi = std::move(next);
		v *= (1.0 - kappa * kappa);
		out.push_back(kappa);
	}
	return out;
}

/// Largest lag in [p_min, p_max] whose PACF leaves the 95% band 1.96/sqrt(n); p_min if none does.
inline int select_order(std::span<const double> series, int p_min = 1, int p_max = 6) {
	if (p_min < 1 || p_max < p_min) {
		throw std::invalid_argument("select_order: invalid order range");
	}
	std::size_t n = 0;
	for (double v : series) {
		n += is_missing(v) ? 0 : 1;
	}
	if (n < 50) {
		throw std::invalid_argument("select_order: insufficient data (need >= 50 points)");
	}
	const auto partial = pacf(series, p_max);
	const double band = 1.96 / std::sqrt(static_cast<double>(n));
	int chosen = p_min;
	for (int k = p_min; k <= p_max; ++k) {
		if (std::abs(partial[static_cast<std::size_t>(k - 1)]) > band) {
			chosen = k;
		}
	}
	return chosen;
}

struct GlogitArFit {
	ArState ar;
	double nu = 1.0;
	double neg_loglik = 0.0;
	std::size_t pairs = 0;
};

/// Negative log-likelihood of original-domain data under AR(p) in the L_nu domain, with theta and
/// sigma^2 profiled out by least squares. Returns +inf when the design is singular.
inline double glogit_profile_nll(std::span<const double> x, int p, double nu, ArState *fitted = nullptr) {
	const auto y = transform_series(x, nu);
	const LagDesign design = build_lag_design(y, p);
	ArState ar;
	try {
		ar = ols_fit(design);
	} catch (const SingularDesignError &) {
		return std::numeric_limits<double>::infinity();
	}
	double jac = 0.0;
	for (std::size_t t : design.pair_index) {
		jac += glogit_log_jacobian(x[t], nu);
	}
	const auto n = static_cast<double>(design.size());
	if (fitted) {
		*fitted = ar;
	}
	return 0.5 * n * (std::log(2.0 * std::numbers::pi * ar.sigma2) + 1.0) - jac;
}

/// AR-L_nu estimation: minimize the profile likelihood over nu in [nu_lo, nu_hi].
inline GlogitArFit fit_glogit_ar(std::span<const double> x, int p, double nu_lo = 0.1, double nu_hi = 3.0,
                                 double tol = 1e-4) {
	const auto result = minimize_bounded([&](double nu) { return glogit_profile_nll(x, p, nu); }, nu_lo, nu_hi, tol);
	GlogitArFit fit;
	fit.nu = result.x;
	fit.neg_loglik = glogit_profile_nll(x, p, fit.nu, &fit.ar);
	if (!std::isfinite(fit.neg_loglik)) {
		throw SingularDesignError("fit_glogit_ar: design singular at every shape parameter");
	}
	fit.pairs = build_lag_design(transform_series(x, fit.nu), p).pair_index.size();
	return fit;
}

/// AR fit at a fixed shape parameter (AR-L uses nu = 1).
inline GlogitArFit fit_fixed_glogit_ar(std::span<const double> x, int p, double nu) {
	GlogitArFit fit;
	fit.nu = nu;
	const auto y = transform_series(x, nu);
	const auto design = build_lag_design(y, p);
	fit.ar = ols_fit(design);
	fit.pairs = design.pair_index.size();
	fit.neg_loglik = glogit_profile_nll(x, p, nu);
	return fit;
}

} // namespace boundcast
