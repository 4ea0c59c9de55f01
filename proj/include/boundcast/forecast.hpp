#pragma once

/** @file
 * One-step-ahead forecasters for the seven methods behind a single streaming
 * interface: each step first issues the forecast for the incoming time from the
 * pre-update state, then applies the method's update with the realized value.
 */

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "boundcast/armodel.hpp"
#include "boundcast/bayes.hpp"
#include "boundcast/bayes_nu.hpp"
#include "boundcast/glogit.hpp"
#include "boundcast/nr.hpp"
#include "boundcast/rls.hpp"

namespace boundcast {

enum class Method { persistence, ar_l, ar_lnu, rls, nr, bayes, bayes_nu };

/// Canonical order; ties in rankings go to the earlier entry.
inline constexpr std::array<Method, 7> all_methods{Method::persistence, Method::ar_l, Method::ar_lnu, Method::rls,
                                                   Method::nr,          Method::bayes, Method::bayes_nu};

inline std::string_view method_name(Method m) noexcept {
	switch (m) {
	case Method::persistence: return "Persistence";
	case Method::ar_l: return "AR-L";
	case Method::ar_lnu: return "AR-Lnu";
	case Method::rls: return "RLS";
	case Method::nr: return "NR";
	case Method::bayes: return "Bayes";
	case Method::bayes_nu: return "Bayes-nu";
	}
	return "unknown";
}

inline Method parse_method(std::string_view name) {
	for (Method m : all_methods) {
		if (method_name(m) == name) {
			return m;
		}
	}
	throw std::invalid_argument("unknown method: " + std::string(name));
}

inline std::size_t method_index(Method m) noexcept { return static_cast<std::size_t>(m); }

inline bool is_adaptive(Method m) noexcept {
	return m == Method::rls || m == Method::nr || m == Method::bayes || m == Method::bayes_nu;
}

struct ForecastSettings {
	double eps = 0.005;
	double rls_lambda = 0.9999;
	double rls_guard = 0.1;
	VarianceWeighting rls_weighting = VarianceWeighting::as_printed;
	double nr_lambda = 0.9999;
	/// Start NR from the training-data outer-product Hessian instead of zero.
	bool nr_prime_hessian = true;
	BayesPrior bayes_prior{};
	NuUpdateConfig nu{};
	/// Most recent observations scored by each shape-parameter step while streaming.
	int nu_window = 1;
	/// Observations between shape-parameter steps.
	int nu_stride = 1;
	PredictiveForm predictive = PredictiveForm::gaussian;
	int p_min = 1;
	int p_max = 6;
};

/// Fits shared by several methods, computed once per training series.
struct TrainingContext {
	int p = 1;
	double persistence_sigma2 = 1.0;
	GlogitArFit ar_l;
	GlogitArFit ar_lnu;
};

inline double persistence_residual_variance(std::span<const double> x) {
	double acc = 0.0;
	std::size_t n = 0;
	for (std::size_t t = 1; t < x.size(); ++t) {
		if (!is_missing(x[t]) && !is_missing(x[t - 1])) {
			const double d = x[t] - x[t - 1];
			acc += d * d;
			++n;
		}
	}
	if (n == 0) {
		throw std::invalid_argument("persistence: no consecutive observations");
	}
	return std::max(acc / static_cast<double>(n), min_variance);
}

/// Order by PACF on the standard-logit transformed series, then AR-L and AR-L_nu fits.
inline TrainingContext prepare_training(std::span<const double> train_x, const ForecastSettings &settings,
                                        std::optional<int> order = std::nullopt) {
	TrainingContext ctx;
	ctx.p = order ? *order : select_order(transform_series(train_x, 1.0), settings.p_min, settings.p_max);
	ctx.persistence_sigma2 = persistence_residual_variance(train_x);
	ctx.ar_l = fit_fixed_glogit_ar(train_x, ctx.p, 1.0);
	ctx.ar_lnu = fit_glogit_ar(train_x, ctx.p, settings.nu.nu_lo, settings.nu.nu_hi);
	return ctx;
}

inline PredictiveCdf persistence_forecast(double last_x, double sigma2_resid, double eps) {
	if (!(last_x >= eps && last_x <= 1.0 - eps)) {
		throw std::domain_error("persistence_forecast: last value outside [eps, 1-eps]");
	}
	if (!(sigma2_resid >= 0.0)) {
		throw std::domain_error("persistence_forecast: variance must be nonnegative");
	}
	return PredictiveCdf::identity(eps, last_x, std::sqrt(sigma2_resid));
}

struct PersistenceModel {
	double sigma2 = 1.0;
};

struct StaticArModel {
	ArState ar;
	double nu = 1.0;
};

struct RlsModel {
	RlsState rls;
	double nu = 1.0;
};

struct NrModel {
	NrState nr;
};

struct BayesModel {
	BayesState bayes;
	bool adapt_nu = false;
	/// Raw observations awaiting the next shape-parameter step.
	LagDesign pending{};
	int since_nu_step = 0;
};

using ModelState = std::variant<PersistenceModel, StaticArModel, RlsModel, NrModel, BayesModel>;

struct UpdateCounters {
	std::uint64_t updates = 0;
	std::uint64_t guarded = 0;
	std::uint64_t skipped = 0;
	std::uint64_t rolled_back = 0;
	std::uint64_t nu_skipped = 0;

	void record(UpdateStatus s) {
		++updates;
		switch (s) {
		case UpdateStatus::ok: break;
		case UpdateStatus::guarded: ++guarded; break;
		case UpdateStatus::skipped_singular: ++skipped; break;
		case UpdateStatus::rolled_back: ++rolled_back; break;
		}
	}
};

/**
 * Streaming forecaster for one method on one farm. Value type: copying it
 * snapshots the full state.
 */
class Forecaster {
public:
	Forecaster(Method method, ModelState model, int p, ForecastSettings settings)
	    : method_{method}, model_{std::move(model)}, p_{p}, settings_{std::move(settings)} {}

	Method method() const noexcept { return method_; }
	int order() const noexcept { return p_; }
	int lags_needed() const noexcept { return method_ == Method::persistence ? 1 : p_; }
	const ForecastSettings &settings() const noexcept { return settings_; }
	const ModelState &model() const noexcept { return model_; }
	ModelState &model() noexcept { return model_; }
	const UpdateCounters &counters() const noexcept { return counters_; }

	/// Current shape parameter (1 for methods that do not use one).
	double nu() const {
		return std::visit(
		    [](const auto &m) -> double {
			    using T = std::decay_t<decltype(m)>;
			    if constexpr (std::is_same_v<T, PersistenceModel>) {
				    return 1.0;
			    } else if constexpr (std::is_same_v<T, NrModel>) {
				    return m.nr.nu();
			    } else if constexpr (std::is_same_v<T, BayesModel>) {
				    return m.bayes.nu;
			    } else {
				    return m.nu;
			    }
		    },
		    model_);
	}

	/// Replace the lag history (most recent last); missing values allowed.
	void prime(std::span<const double> recent) {
		history_.clear();
		const std::size_t keep = std::min<std::size_t>(recent.size(), static_cast<std::size_t>(p_));
		for (std::size_t i = recent.size() - keep; i < recent.size(); ++i) {
			history_.push_back(recent[i]);
		}
	}

	bool lags_complete() const {
		const auto need = static_cast<std::size_t>(lags_needed());
		if (history_.size() < need) {
			return false;
		}
		for (std::size_t i = 0; i < need; ++i) {
			if (is_missing(history_[history_.size() - 1 - i])) {
				return false;
			}
		}
		return true;
	}

	/// Forecast for the next time step from the current state, if the lag window is complete.
	std::optional<PredictiveCdf> forecast() const {
		if (!lags_complete()) {
			return std::nullopt;
		}
		const double eps = settings_.eps;
		return std::visit(
		    [&](const auto &m) -> PredictiveCdf {
			    using T = std::decay_t<decltype(m)>;
			    if constexpr (std::is_same_v<T, PersistenceModel>) {
				    return persistence_forecast(history_.back(), m.sigma2, eps);
			    } else if constexpr (std::is_same_v<T, StaticArModel>) {
				    return PredictiveCdf{GlogitMap{m.nu, eps}, regressor(m.nu).dot(m.ar.theta), std::sqrt(m.ar.sigma2)};
			    } else if constexpr (std::is_same_v<T, RlsModel>) {
				    return PredictiveCdf{GlogitMap{m.nu, eps}, regressor(m.nu).dot(m.rls.theta), std::sqrt(m.rls.sigma2)};
			    } else if constexpr (std::is_same_v<T, NrModel>) {
				    const double nu = m.nr.nu();
				    return PredictiveCdf{GlogitMap{nu, eps}, regressor(nu).dot(m.nr.theta()), std::sqrt(m.nr.sigma2())};
			    } else {
				    return bayes_predictive(m.bayes, regressor(m.bayes.nu), eps, settings_.predictive);
			    }
		    },
		    model_);
	}

	/**
	 * Issue the forecast for the incoming time, then learn from the observation.
	 * A missing observation advances time with no forecast and no update.
	 */
	std::optional<PredictiveCdf> step(double obs) {
		if (is_missing(obs)) {
			push(obs);
			return std::nullopt;
		}
		auto issued = forecast();
		if (lags_complete() && method_ != Method::persistence) {
			update(obs);
		}
		push(obs);
		return issued;
	}

private:
	VectorXd regressor(double nu) const {
		VectorXd z(p_ + 1);
		z(0) = 1.0;
		for (int i = 1; i <= p_; ++i) {
			z(i) = glogit_forward(history_[history_.size() - static_cast<std::size_t>(i)], nu);
		}
		return z;
	}

	std::vector<double> raw_lags() const {
		std::vector<double> lags(static_cast<std::size_t>(p_));
		for (int i = 1; i <= p_; ++i) {
			lags[static_cast<std::size_t>(i - 1)] = history_[history_.size() - static_cast<std::size_t>(i)];
		}
		return lags;
	}

	LagDesign single_column(double target, const VectorXd &z) const {
		LagDesign d;
		d.targets = VectorXd::Constant(1, target);
		d.predictors = z;
		d.pair_index = {0};
		return d;
	}

	void update(double obs) {
		std::visit(
		    [&](auto &m) {
			    using T = std::decay_t<decltype(m)>;
			    if constexpr (std::is_same_v<T, RlsModel>) {
				    const VectorXd z = regressor(m.nu);
				    const double y = glogit_forward(obs, m.nu);
				    const double y_pred = z.dot(m.rls.theta);
				    const double yhat_original = glogit_inverse(y_pred, m.nu);
				    auto next = rls_update(m.rls, single_column(y, z));
				    counters_.record(next.status);
				    m.rls = rls_variance_update(next.state, yhat_original, y, y_pred, settings_.rls_weighting);
			    } else if constexpr (std::is_same_v<T, NrModel>) {
				    const auto lags = raw_lags();
				    auto next = nr_update(m.nr, obs, lags);
				    counters_.record(next.status);
				    m.nr = std::move(next.state);
			    } else if constexpr (std::is_same_v<T, BayesModel>) {
				    const double nu = m.bayes.nu;
				    const VectorXd z = regressor(nu);
				    const BayesState prior = bayes_decay(m.bayes, 1);
				    auto next = bayes_update(prior, single_column(glogit_forward(obs, nu), z));
				    counters_.record(next.status);
				    m.bayes = std::move(next.state);
				    if (m.adapt_nu) {
					    const auto lags = raw_lags();
					    const Eigen::Index c = m.pending.size();
					    m.pending.targets.conservativeResize(c + 1);
					    m.pending.predictors.conservativeResize(p_ + 1, c + 1);
					    m.pending.targets(c) = obs;
					    m.pending.predictors(0, c) = 1.0;
					    for (int i = 0; i < p_; ++i) {
						    m.pending.predictors(i + 1, c) = lags[static_cast<std::size_t>(i)];
					    }
					    m.pending.pair_index.push_back(static_cast<std::size_t>(c));
					    if (m.pending.size() > settings_.nu_window) {
						    const Eigen::Index keep = settings_.nu_window;
						    m.pending.targets = m.pending.targets.tail(keep).eval();
						    m.pending.predictors = m.pending.predictors.rightCols(keep).eval();
						    m.pending.pair_index.resize(static_cast<std::size_t>(keep));
					    }
					    if (++m.since_nu_step >= settings_.nu_stride && m.pending.size() == settings_.nu_window) {
						    m.since_nu_step = 0;
						    auto stepped = nu_step(m.bayes, m.pending, settings_.eps, settings_.nu);
						    if (stepped.status != UpdateStatus::ok) {
							    ++counters_.nu_skipped;
						    }
						    m.bayes = std::move(stepped.state);
						    if (settings_.nu_stride >= settings_.nu_window) {
							    m.pending = LagDesign{};
						    }
					    }
				    }
			    }
		    },
		    model_);
	}

	void push(double obs) {
		history_.push_back(obs);
		while (history_.size() > static_cast<std::size_t>(std::max(p_, 1))) {
			history_.pop_front();
		}
	}

	Method method_;
	ModelState model_;
	int p_;
	ForecastSettings settings_;
	std::deque<double> history_;
	UpdateCounters counters_;
};

/**
 * Build a trained forecaster from a bounded training series (values in
 * [eps, 1-eps], NaN for missing). The lag history is primed with the tail of
 * the training series.
 */
inline Forecaster train_forecaster(Method method, std::span<const double> train_x, const TrainingContext &ctx,
                                   const ForecastSettings &settings) {
	const int p = ctx.p;
	const auto make = [&](ModelState model) {
		Forecaster f{method, std::move(model), p, settings};
		f.prime(train_x);
		return f;
	};

	switch (method) {
	case Method::persistence: return make(PersistenceModel{ctx.persistence_sigma2});
	case Method::ar_l: return make(StaticArModel{ctx.ar_l.ar, 1.0});
	case Method::ar_lnu: return make(StaticArModel{ctx.ar_lnu.ar, ctx.ar_lnu.nu});
	case Method::rls: {
		const double nu = ctx.ar_lnu.nu;
		const auto design = build_lag_design(transform_series(train_x, nu), p);
		return make(RlsModel{rls_init(design, settings.rls_lambda, settings.rls_guard), nu});
	}
	case Method::nr: {
		NrState nr = nr_init(ctx.ar_lnu.ar.theta, ctx.ar_lnu.ar.sigma2, ctx.ar_lnu.nu, settings.nr_lambda);
		nr.nu_lo = settings.nu.nu_lo;
		nr.nu_hi = settings.nu.nu_hi;
		if (settings.nr_prime_hessian) {
			nr = nr_prime_hessian(nr, train_x);
		}
		return make(NrModel{nr});
	}
	case Method::bayes:
	case Method::bayes_nu: {
		BayesPrior prior = settings.bayes_prior;
		prior.nu0 = ctx.ar_lnu.nu;
		BayesState state = bayes_init(p, prior);
		state.mu = ctx.ar_lnu.ar.theta;
		const auto design = build_lag_design(transform_series(train_x, state.nu), p);
		auto trained = bayes_update(state, design);
		state = trained.state;
		if (method == Method::bayes_nu) {
			const auto raw = build_lag_design(train_x, p);
			state = nu_step(state, raw, settings.eps, settings.nu).state;
		}
		return make(BayesModel{state, method == Method::bayes_nu});
	}
	}
	throw std::invalid_argument("train_forecaster: unknown method");
}

/// 99 evenly spaced nominal levels from 0.5% to 99.5%.
inline std::vector<double> reliability_levels() {
	std::vector<double> levels(99);
	for (int i = 0; i < 99; ++i) {
		levels[static_cast<std::size_t>(i)] = 0.005 + 0.99 * i / 98.0;
	}
	return levels;
}

namespace detail {
inline std::string format_double(double v) {
	char buf[40];
	std::snprintf(buf, sizeof buf, "%.10g", v);
	return buf;
}
} // namespace detail

inline void write_forecast_header(std::ostream &out) {
	out << "time,method";
	for (double tau : reliability_levels()) {
		out << ",q" << detail::format_double(100.0 * tau);
	}
	out << ",mass_lo,mass_hi,mu,sigma,nu\n";
}

inline void write_forecast_row(std::ostream &out, std::string_view time, Method method, const PredictiveCdf &cdf) {
	out << time << ',' << method_name(method);
	for (double tau : reliability_levels()) {
		out << ',' << detail::format_double(cdf.quantile(tau));
	}
	const double nu = cdf.scale() == ForecastScale::glogit ? cdf.map().nu() : 1.0;
	out << ',' << detail::format_double(cdf.mass_lo()) << ',' << detail::format_double(cdf.mass_hi()) << ','
	    << detail::format_double(cdf.base().mu) << ',' << detail::format_double(cdf.base().sigma) << ','
	    << detail::format_double(nu) << '\n';
}

} // namespace boundcast
