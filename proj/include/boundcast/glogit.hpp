#pragma once

/** @file
 * Generalized logit transform L_nu(x) = ln(x^nu / (1 - x^nu)), its inverse,
 * thresholding into [eps, 1 - eps], and the distributions induced on both
 * domains: the logit-normal density and the inflated normal whose tail mass is
 * relocated to point masses at the transformed bounds.
 */

#include <cmath>
#include <optional>
#include <stdexcept>

#include "boundcast/stats.hpp"

namespace boundcast {

/// Forward transform, evaluated as nu*ln(x) - ln(1 - x^nu) with 1 - x^nu = -expm1(nu*ln(x)).
inline double glogit_forward(double x, double nu) {
	if (!(x > 0.0 && x < 1.0)) {
		throw std::domain_error("glogit_forward: x must lie in (0,1)");
	}
	if (!(nu > 0.0)) {
		throw std::domain_error("glogit_forward: nu must be positive");
	}
	const double a = nu * std::log(x);
	return a - std::log(-std::expm1(a));
}

/// Inverse transform (e^y / (1 + e^y))^(1/nu), computed through log-sigmoid so |y| up to 700 is safe.
inline double glogit_inverse(double y, double nu) {
	if (!(nu > 0.0)) {
		throw std::domain_error("glogit_inverse: nu must be positive");
	}
	if (std::isnan(y)) {
		throw std::domain_error("glogit_inverse: y must be finite");
	}
	const double log_sigmoid = y >= 0.0 ? -std::log1p(std::exp(-y)) : y - std::log1p(std::exp(y));
	return std::exp(log_sigmoid / nu);
}

/// d L_nu(x) / d nu = ln(x) / (1 - x^nu).
inline double glogit_dnu(double x, double nu) {
	const double lx = std::log(x);
	return lx / (-std::expm1(nu * lx));
}

/// Squeeze [0,1] into [eps, 1 - eps].
inline double clamp_threshold(double x, double eps) {
	if (!(x >= 0.0 && x <= 1.0)) {
		throw std::domain_error("clamp_threshold: x must lie in [0,1]");
	}
	if (x < eps) {
		return eps;
	}
	if (x > 1.0 - eps) {
		return 1.0 - eps;
	}
	return x;
}

/// ln of the Jacobian |dL_nu/dx| = nu / (x (1 - x^nu)).
inline double glogit_log_jacobian(double x, double nu) {
	const double lx = std::log(x);
	return std::log(nu) - lx - std::log(-std::expm1(nu * lx));
}

inline double logit_normal_pdf(double x, double mu, double sigma, double nu) {
	if (!(x > 0.0 && x < 1.0) || !(sigma > 0.0) || !(nu > 0.0)) {
		throw std::domain_error("logit_normal_pdf: invalid arguments");
	}
	const double z = (glogit_forward(x, nu) - mu) / sigma;
	return normal_pdf(z) / sigma * std::exp(glogit_log_jacobian(x, nu));
}

/// Shape/threshold pair defining the transform between [eps, 1-eps] and [lo(), hi()].
class GlogitMap {
public:
	GlogitMap(double nu, double eps) : nu_{nu}, eps_{eps} {
		if (!(nu > 0.0)) {
			throw std::domain_error("GlogitMap: nu must be positive");
		}
		if (!(eps > 0.0 && eps < 0.5)) {
			throw std::domain_error("GlogitMap: eps must lie in (0, 0.5)");
		}
		lo_ = glogit_forward(eps, nu);
		hi_ = glogit_forward(1.0 - eps, nu);
	}

	double nu() const noexcept { return nu_; }
	double eps() const noexcept { return eps_; }
	double lo() const noexcept { return lo_; }
	double hi() const noexcept { return hi_; }

	double forward(double x) const { return glogit_forward(x, nu_); }
	double inverse(double y) const { return glogit_inverse(y, nu_); }

	GlogitMap with_nu(double nu) const { return GlogitMap{nu, eps_}; }

private:
	double nu_;
	double eps_;
	double lo_;
	double hi_;
};

/**
 * Gaussian (or, when dof is set, Student-t location-scale) distribution whose
 * mass below lo and above hi is collapsed onto point masses at lo and hi.
 *
 * sigma == 0 is accepted and denotes a point mass at mu.
 */
struct InflatedNormal {
	double mu = 0.0;
	double sigma = 1.0;
	double lo = -1.0;
	double hi = 1.0;
	std::optional<double> dof{};

	InflatedNormal() = default;
	InflatedNormal(double mu_, double sigma_, double lo_, double hi_, std::optional<double> dof_ = std::nullopt)
	    : mu{mu_}, sigma{sigma_}, lo{lo_}, hi{hi_}, dof{dof_} {
		if (!(sigma >= 0.0) || !(lo < hi) || std::isnan(mu)) {
			throw std::domain_error("InflatedNormal: require sigma >= 0 and lo < hi");
		}
		if (dof && !(*dof > 0.0)) {
			throw std::domain_error("InflatedNormal: dof must be positive");
		}
	}

	/// Unclipped location-scale CDF.
	double raw_cdf(double y) const {
		if (sigma == 0.0) {
			return y >= mu ? 1.0 : 0.0;
		}
		const double z = (y - mu) / sigma;
		return dof ? student_cdf(z, *dof) : normal_cdf(z);
	}

	double raw_quantile(double tau) const {
		if (sigma == 0.0) {
			return mu;
		}
		return mu + sigma * (dof ? student_quantile(tau, *dof) : normal_quantile(tau));
	}

	double cdf(double y) const {
		if (y < lo) {
			return 0.0;
		}
		if (y >= hi) {
			return 1.0;
		}
		return raw_cdf(y);
	}

	double mass_lo() const { return raw_cdf(lo); }
	double mass_hi() const { return sigma == 0.0 ? (mu >= hi ? 1.0 : 0.0) : 1.0 - raw_cdf(hi); }

	/// Generalized inverse: smallest y with cdf(y) >= tau.
	double quantile(double tau) const {
		if (!(tau > 0.0 && tau < 1.0)) {
			throw std::domain_error("InflatedNormal::quantile: tau must lie in (0,1)");
		}
		if (tau <= mass_lo()) {
			return lo;
		}
		if (tau > 1.0 - mass_hi()) {
			return hi;
		}
		return std::clamp(raw_quantile(tau), lo, hi);
	}
};

inline double inflated_cdf(const InflatedNormal &dist, double y) { return dist.cdf(y); }

/// Whether the base distribution lives on the glogit scale or directly on [eps, 1-eps].
enum class ForecastScale { glogit, identity };

/**
 * Predictive CDF on the original domain [eps, 1-eps]: point masses at both
 * bounds and a continuous interior, F(x) = base.cdf(L_nu(x)).
 */
class PredictiveCdf {
public:
	PredictiveCdf(GlogitMap map, double mu, double sigma, std::optional<double> dof = std::nullopt)
	    : map_{map}, scale_{ForecastScale::glogit}, base_{mu, sigma, map.lo(), map.hi(), dof} {}

	/// Inflated normal placed directly on [eps, 1-eps]; nu plays no role.
	static PredictiveCdf identity(double eps, double mu, double sigma) {
		return PredictiveCdf{GlogitMap{1.0, eps}, InflatedNormal{mu, sigma, eps, 1.0 - eps}};
	}

	const GlogitMap &map() const noexcept { return map_; }
	const InflatedNormal &base() const noexcept { return base_; }
	ForecastScale scale() const noexcept { return scale_; }
	double eps() const noexcept { return map_.eps(); }
	double lower() const noexcept { return map_.eps(); }
	double upper() const noexcept { return 1.0 - map_.eps(); }

	double to_base(double x) const { return scale_ == ForecastScale::glogit ? map_.forward(x) : x; }
	double from_base(double y) const { return scale_ == ForecastScale::glogit ? map_.inverse(y) : y; }

	double cdf(double x) const {
		if (x < lower()) {
			return 0.0;
		}
		if (x >= upper()) {
			return 1.0;
		}
		return base_.raw_cdf(to_base(x));
	}

	/// Left limit F(x-).
	double cdf_left(double x) const {
		if (x <= lower()) {
			return 0.0;
		}
		if (x > upper()) {
			return 1.0;
		}
		if (x == upper()) {
			return 1.0 - mass_hi();
		}
		if (base_.sigma == 0.0) {
			return to_base(x) > base_.mu ? 1.0 : 0.0;
		}
		return cdf(x);
	}

	double mass_lo() const { return base_.mass_lo(); }
	double mass_hi() const { return base_.mass_hi(); }

	double quantile(double tau) const {
		if (!(tau > 0.0 && tau < 1.0)) {
			throw std::domain_error("PredictiveCdf::quantile: tau must lie in (0,1)");
		}
		if (tau <= mass_lo()) {
			return lower();
		}
		if (tau > 1.0 - mass_hi()) {
			return upper();
		}
		return std::clamp(from_base(base_.raw_quantile(tau)), lower(), upper());
	}

private:
	PredictiveCdf(GlogitMap map, InflatedNormal base)
	    : map_{map}, scale_{ForecastScale::identity}, base_{base} {}

	GlogitMap map_;
	ForecastScale scale_;
	InflatedNormal base_;
};

inline double predictive_quantile(const PredictiveCdf &cdf, double tau) { return cdf.quantile(tau); }

} // namespace boundcast
