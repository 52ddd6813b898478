#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "icupass/cohort.hpp"
#include "icupass/pass.hpp"
#include "icupass/rng.hpp"

namespace icupass {
namespace synth {

/// Monotone quantile function interpolated log-linearly through anchor
/// points (u, value). Sampling Q(U) with U uniform reproduces the anchor
/// quantiles exactly in distribution; the anchors at u=0 and u~1 shape the
/// tails.
struct PiecewiseLogQuantile {
    std::vector<std::pair<double, double>> anchors;  // (u, value), u ascending

    double operator()(double u) const {
        if (anchors.size() < 2) throw std::runtime_error("quantile function needs >= 2 anchors");
        u = std::clamp(u, anchors.front().first, anchors.back().first);
        for (std::size_t i = 1; i < anchors.size(); ++i) {
            if (u <= anchors[i].first) {
                const auto& [u0, q0] = anchors[i - 1];
                const auto& [u1, q1] = anchors[i];
                const double w = (u - u0) / (u1 - u0);
                return std::exp(std::log(q0) + w * (std::log(q1) - std::log(q0)));
            }
        }
        return anchors.back().second;
    }

    static PiecewiseLogQuantile from_quartiles(double q_min, double q1, double q2, double q3,
                                               double q_max) {
        return {{{0.0, q_min}, {0.25, q1}, {0.5, q2}, {0.75, q3}, {0.995, q_max}}};
    }
};

/// Per-vital generator constants (hr, sbp, dbp order).
struct VitalCurve {
    double base = 0.0;   // asymptote of the age curve
    double amp = 0.0;    // value(age) = base + amp * exp(-age/tau)
    double tau = 1.0;    // months
    double severity_offset_scale = 0.0;  // target shift per unit (s - 1/3)
    double diagnosis_offset_scale = 0.0; // target shift per unit diagnosis profile
    double target_noise = 0.0;           // per-episode noise on the latent target
    double deviation_scale = 0.0;        // initial trajectory deviation at s = 1
    double stability_threshold = 1.0;    // |deviation| below this counts as settled
    double measurement_noise = 0.0;

    double age_value(double age_months) const { return base + amp * std::exp(-age_months / tau); }
};

struct SynthConfig {
    std::uint64_t seed = 42;
    int n_patients = 1600;
    double extra_episode_prob = 0.22;  // geometric tail, capped below
    int max_episodes_per_patient = 4;
    int n_aux_variables = 17;

    std::vector<std::string> diagnoses = {"sepsis",         "ards",        "bronchiolitis",
                                          "asthma",         "spine_curve", "brain_neoplasm",
                                          "post_op_cardiac", "trauma",      "dka",
                                          "seizure"};
    std::vector<double> diagnosis_weights = {0.08, 0.07, 0.14, 0.12, 0.1, 0.06, 0.12, 0.11, 0.08, 0.12};

    double age_max_months = 216.0;

    // hr rises and bp falls with illness; deviations get a random shared
    // sign per episode so they do not bias the population mean
    std::array<VitalCurve, 3> vitals = {{
        {78.0, 67.0, 32.0, 14.0, 7.0, 2.5, 24.0, 5.0, 2.5},   // hr (bpm)
        {112.0, -42.0, 40.0, -8.0, -5.0, 2.0, -15.0, 4.0, 2.0},  // sbp (mmHg)
        {68.0, -25.0, 40.0, -6.0, 4.0, 1.8, -11.0, 3.0, 1.8},    // dbp (mmHg)
    }};

    // calibration anchors: the quantile surfaces the cohort must reproduce
    PiecewiseLogQuantile discharge_lag_hr = PiecewiseLogQuantile::from_quartiles(1.0, 7.0, 9.0, 28.0, 130.0);
    // tuned by simulation so the emergent LOS quartiles (medical + lag)
    // land on the 35/61/120 anchors
    PiecewiseLogQuantile medical_discharge_hr = PiecewiseLogQuantile::from_quartiles(13.0, 18.5, 33.0, 71.0, 330.0);
    double severity_time_coupling = 0.6;  // prob. medical-time percentile = severity percentile

    double vital_rate_base = 0.75;        // observation events per hour
    double vital_rate_severity = 0.75;
    double aux_rate_base = 0.25;
    double aux_rate_severity = 0.35;

    double aux_noise = 0.2;
    double max_los_hr = 400.0;
    int max_retries = 20;

    /// > 0 injects episodes that must fail the eligibility filters
    /// (non-survivors, short stays, sparse windows).
    double ineligible_fraction = 0.0;
};

struct SynthResult {
    Cohort cohort;
    std::map<std::string, PassTargets> oracle;  // noise-free latent targets
};

/// The generator's latent target triple for diagnostics, as opposed to
/// compute_pass on the noisy window observations.
inline const PassTargets& oracle_targets(const SynthResult& result, const std::string& episode_id) {
    auto it = result.oracle.find(episode_id);
    if (it == result.oracle.end()) throw std::runtime_error("unknown episode: " + episode_id);
    return it->second;
}

namespace detail {

struct AuxChannel {
    double median = 0.0;
    double span = 1.0;
    // mixture weights over (severity, dev_hr, dev_sbp, dev_dbp, dx profile)
    std::array<double, 5> mix = {0.0, 0.0, 0.0, 0.0, 0.0};
};

inline std::string aux_id(int j) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "aux%02d", j + 1);
    return buf;
}

}  // namespace detail

/// Deterministic synthetic PICU cohort. Each episode draws a latent
/// severity s in (0,1); its acceptable-state targets are an age curve plus
/// diagnosis, severity and noise offsets, and its pre-discharge vitals
/// follow target + deviation decaying at a rate tied to the sampled
/// medical-discharge time, so the time series carries the non-age signal.
inline SynthResult generate(const SynthConfig& config) {
    if (config.n_patients <= 0) throw std::runtime_error("synth: n_patients must be positive");
    if (config.diagnoses.size() != config.diagnosis_weights.size()) {
        throw std::runtime_error("synth: diagnosis labels and weights disagree");
    }

    SynthResult result;
    Catalog& catalog = result.cohort.catalog;
    catalog.add({"hr", "heart rate", "bpm", 105.0});
    catalog.add({"sbp", "systolic blood pressure", "mmHg", 100.0});
    catalog.add({"dbp", "diastolic blood pressure", "mmHg", 60.0});

    // config-level stream: aux channel mixtures and diagnosis profiles;
    // independent of n_patients so scaling the cohort keeps the schema
    Rng config_rng(derive_seed(config.seed, 0xC0F1C));
    std::vector<detail::AuxChannel> aux(static_cast<std::size_t>(config.n_aux_variables));
    for (int j = 0; j < config.n_aux_variables; ++j) {
        detail::AuxChannel& ch = aux[static_cast<std::size_t>(j)];
        ch.median = 40.0 + 12.0 * j + config_rng.uniform(-5.0, 5.0);
        ch.span = config_rng.uniform(6.0, 25.0);
        for (double& w : ch.mix) w = config_rng.uniform(-1.0, 1.0);
        catalog.add({detail::aux_id(j), "auxiliary channel " + std::to_string(j + 1), "unit", ch.median});
    }
    // the first three channels track severity, hr deviation and the
    // diagnosis profile directly, like support-intensity variables do
    if (config.n_aux_variables >= 1) aux[0].mix = {1.0, 0.0, 0.0, 0.0, 0.0};
    if (config.n_aux_variables >= 2) aux[1].mix = {0.0, 1.0, 0.0, 0.0, 0.0};
    if (config.n_aux_variables >= 3) aux[2].mix = {0.0, 0.0, 0.0, 0.0, 1.0};

    std::vector<double> dx_profile(config.diagnoses.size());
    for (double& d : dx_profile) d = config_rng.uniform(-1.0, 1.0);

    for (int pi = 0; pi < config.n_patients; ++pi) {
        Rng patient_rng(derive_seed(config.seed, static_cast<std::uint64_t>(pi), 0));
        char pid[24];
        std::snprintf(pid, sizeof(pid), "p%06d", pi);

        int n_episodes = 1;
        while (n_episodes < config.max_episodes_per_patient &&
               patient_rng.uniform() < config.extra_episode_prob) {
            ++n_episodes;
        }
        double base_age = 0.0;
        {
            const double mix = patient_rng.uniform();
            if (mix < 0.28) {
                base_age = patient_rng.uniform(0.0, 12.0);
            } else if (mix < 0.50) {
                base_age = patient_rng.uniform(12.0, 48.0);
            } else {
                base_age = patient_rng.uniform(48.0, config.age_max_months);
            }
        }

        double age = base_age;
        for (int ei = 0; ei < n_episodes; ++ei) {
            Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(pi),
                                static_cast<std::uint64_t>(1 + ei)));
            if (ei > 0) age += rng.uniform(0.5, 6.0);

            Episode ep;
            char eid[32];
            std::snprintf(eid, sizeof(eid), "p%06d-e%d", pi, ei);
            ep.episode_id = eid;
            ep.patient_id = pid;
            ep.age_months = age;

            const std::size_t dx = rng.pick_weighted(config.diagnosis_weights);
            ep.diagnosis = config.diagnoses[dx];
            const double profile = dx_profile[dx];

            const double severity_pct = rng.uniform();
            const double s = severity_pct * severity_pct;  // skewed toward mild
            ep.pim2 = std::clamp(0.02 + 0.5 * std::pow(s, 1.5) * std::exp(0.3 * rng.normal()), 0.0, 1.0);
            ep.survived = true;

            // latent targets
            PassTargets oracle;
            oracle.episode_id = ep.episode_id;
            for (std::size_t v = 0; v < 3; ++v) {
                const VitalCurve& c = config.vitals[v];
                oracle.mu[v] = c.age_value(age) + c.severity_offset_scale * (s - 1.0 / 3.0) +
                               c.diagnosis_offset_scale * profile + c.target_noise * rng.normal();
            }

            // timing: lag and desired medical time from the calibrated
            // quantile functions; severity pulls the medical-time
            // percentile up via comonotone coupling
            bool timing_ok = false;
            double medical = 0.0, physical = 0.0, decay_rate = 0.0;
            std::array<double, 3> dev0 = {0.0, 0.0, 0.0};
            for (int attempt = 0; attempt < config.max_retries && !timing_ok; ++attempt) {
                const double u_m = rng.uniform() < config.severity_time_coupling ? severity_pct
                                                                                 : rng.uniform();
                const double desired_medical = config.medical_discharge_hr(u_m);
                const double lag = config.discharge_lag_hr(rng.uniform());

                const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
                double max_ratio = 0.0;
                for (std::size_t v = 0; v < 3; ++v) {
                    const VitalCurve& c = config.vitals[v];
                    dev0[v] = sign * c.deviation_scale * (0.3 + 1.4 * s) * std::exp(0.25 * rng.normal());
                    if (c.deviation_scale != 0.0) {
                        max_ratio = std::max(max_ratio, std::abs(dev0[v]) / c.stability_threshold);
                    }
                }
                decay_rate = std::log(std::max(max_ratio, 1.05)) / std::max(desired_medical, 6.0);

                // the stated rule: first grid hour >= 12 with every
                // deviation below its threshold
                medical = -1.0;
                for (double h = 12.0; h <= config.max_los_hr; h += 1.0) {
                    bool settled = true;
                    for (std::size_t v = 0; v < 3; ++v) {
                        if (std::abs(dev0[v]) * std::exp(-decay_rate * h) >=
                            config.vitals[v].stability_threshold) {
                            settled = false;
                            break;
                        }
                    }
                    if (settled) {
                        medical = h;
                        break;
                    }
                }
                if (medical < 0.0) continue;  // never settled: resample
                physical = medical + lag;
                if (physical > config.max_los_hr) continue;
                timing_ok = true;
            }
            if (!timing_ok) {
                throw std::runtime_error("synth: episode '" + ep.episode_id +
                                         "' never reached stability within max_los_hr; config infeasible");
            }
            ep.medical_discharge_hr = medical;
            ep.physical_discharge_hr = physical;

            auto deviation = [&](std::size_t v, double t) { return dev0[v] * std::exp(-decay_rate * t); };

            // irregular vital observations over [0, physical]
            const double vital_rate = config.vital_rate_base + config.vital_rate_severity * s;
            for (std::size_t v = 0; v < 3; ++v) {
                const VitalCurve& c = config.vitals[v];
                std::vector<double> times;
                double t = rng.uniform(0.0, 0.5);
                while (t <= physical) {
                    times.push_back(t);
                    t += rng.exponential(vital_rate);
                }
                int window_count = 0;
                for (double tt : times) {
                    if (tt >= medical && tt <= physical) ++window_count;
                }
                // window coverage >= 3 by construction
                for (int k = 1; window_count < 3 && k <= 3; ++k) {
                    times.push_back(medical + k * (physical - medical) / 4.0);
                    ++window_count;
                }
                std::sort(times.begin(), times.end());
                for (double tt : times) {
                    ep.observations.push_back(
                        {catalog.variables[v].id, tt,
                         oracle.mu[v] + deviation(v, tt) + c.measurement_noise * rng.normal()});
                }
            }

            // auxiliary mixtures carrying partial views of the latents
            const double aux_rate = config.aux_rate_base + config.aux_rate_severity * s;
            for (int j = 0; j < config.n_aux_variables; ++j) {
                const detail::AuxChannel& ch = aux[static_cast<std::size_t>(j)];
                double t = rng.uniform(0.0, 2.0);
                while (t <= physical) {
                    double signal = ch.mix[0] * (s - 1.0 / 3.0) * 3.0 + ch.mix[4] * profile;
                    for (std::size_t v = 0; v < 3; ++v) {
                        if (config.vitals[v].deviation_scale != 0.0) {
                            signal += ch.mix[1 + v] * deviation(v, t) / config.vitals[v].deviation_scale;
                        }
                    }
                    signal += config.aux_noise * rng.normal();
                    ep.observations.push_back({detail::aux_id(j), t, ch.median + ch.span * signal});
                    t += rng.exponential(aux_rate);
                }
            }

            // optional ineligible episodes to exercise the filters
            if (config.ineligible_fraction > 0.0 && rng.uniform() < config.ineligible_fraction) {
                switch (rng.uniform_int(3)) {
                    case 0:
                        ep.survived = false;
                        break;
                    case 1: {  // medical discharge before hour 12
                        const double early = rng.uniform(2.0, 11.5);
                        const double scale = early / ep.medical_discharge_hr;
                        ep.medical_discharge_hr = early;
                        ep.physical_discharge_hr = std::max(early + 0.5, ep.physical_discharge_hr * scale);
                        std::vector<Observation> kept;
                        for (Observation& o : ep.observations) {
                            if (o.time_hr <= ep.physical_discharge_hr) kept.push_back(std::move(o));
                        }
                        ep.observations = std::move(kept);
                        break;
                    }
                    default: {  // strip the window coverage of one vital
                        const std::string victim = catalog.variables[rng.uniform_int(3)].id;
                        std::vector<Observation> kept;
                        int in_window = 0;
                        for (Observation& o : ep.observations) {
                            const bool window = o.variable_id == victim &&
                                                o.time_hr >= ep.medical_discharge_hr &&
                                                o.time_hr <= ep.physical_discharge_hr;
                            if (window && ++in_window > 2) continue;
                            kept.push_back(std::move(o));
                        }
                        ep.observations = std::move(kept);
                        break;
                    }
                }
            }

            icupass::detail::sort_observations(ep);
            icupass::detail::validate_episode(ep);
            result.oracle[ep.episode_id] = oracle;
            result.cohort.episodes.push_back(std::move(ep));
        }
    }
    return result;
}

}  // namespace synth
}  // namespace icupass
