#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include <json.hpp>

#include "atlascut/errors.hpp"
#include "atlascut/grid.hpp"
#include "atlascut/volume.hpp"

// Intensity models: single Gaussians and small Gaussian mixtures fitted by EM,
// plus their negative-log-likelihood fields.

namespace atlascut {

constexpr double kVarianceFloor = 1e-4;
constexpr double kProbabilityFloor = 1e-12;

// Largest negative log-likelihood any pixel can carry after flooring.
inline double max_nll() { return -std::log(kProbabilityFloor); }

struct GaussianMixture {
    std::vector<double> weights;
    std::vector<double> means;
    std::vector<double> variances;

    int k() const { return static_cast<int>(weights.size()); }

    double pdf(double x) const {
        double p = 0.0;
        for (int i = 0; i < k(); ++i) {
            const double d = x - means[i];
            p += weights[i] / std::sqrt(2.0 * std::numbers::pi * variances[i]) *
                 std::exp(-0.5 * d * d / variances[i]);
        }
        return p;
    }

    // NLL with the probability floor applied, so energies stay finite.
    double nll(double x) const { return -std::log(std::max(pdf(x), kProbabilityFloor)); }
};

inline void validate_mixture(const GaussianMixture& g) {
    if (g.k() < 1) throw DegenerateInputError("mixture needs at least one component");
    if (g.means.size() != g.weights.size() || g.variances.size() != g.weights.size())
        throw DegenerateInputError("mixture parameter arrays disagree in length");
    double wsum = 0.0;
    for (double w : g.weights) {
        if (w < 0.0) throw DegenerateInputError("negative mixture weight");
        wsum += w;
    }
    if (std::abs(wsum - 1.0) > 1e-9)
        throw DegenerateInputError("mixture weights do not sum to 1");
    for (double v : g.variances)
        if (v < kVarianceFloor - 1e-15)
            throw DegenerateInputError("mixture variance below floor");
}

// Closed-form single Gaussian: sample mean and biased (MLE) variance.
inline GaussianMixture fit_gaussian(const std::vector<float>& samples) {
    if (samples.size() < 2)
        throw DegenerateInputError("fit_gaussian: need at least 2 samples");
    double mean = 0.0;
    for (float s : samples) mean += s;
    mean /= static_cast<double>(samples.size());
    double var = 0.0;
    for (float s : samples) var += (s - mean) * (s - mean);
    var /= static_cast<double>(samples.size());
    GaussianMixture g;
    g.weights = {1.0};
    g.means = {mean};
    g.variances = {std::max(var, kVarianceFloor)};
    return g;
}

namespace detail {

// k-means++ seeding with a caller-fixed RNG stream.
inline std::vector<double> kmeanspp_centers(const std::vector<float>& s, int k,
                                            std::mt19937_64& rng) {
    std::vector<double> centers;
    std::uniform_int_distribution<std::size_t> first(0, s.size() - 1);
    centers.push_back(s[first(rng)]);
    std::vector<double> d2(s.size());
    while (static_cast<int>(centers.size()) < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            double best = std::numeric_limits<double>::max();
            for (double c : centers) best = std::min(best, (s[i] - c) * (s[i] - c));
            d2[i] = best;
            total += best;
        }
        if (total <= 0.0) {
            // all samples coincide with existing centers
            centers.push_back(centers.back());
            continue;
        }
        std::uniform_real_distribution<double> u(0.0, total);
        double pick = u(rng), acc = 0.0;
        std::size_t chosen = s.size() - 1;
        for (std::size_t i = 0; i < s.size(); ++i) {
            acc += d2[i];
            if (acc >= pick) {
                chosen = i;
                break;
            }
        }
        centers.push_back(s[chosen]);
    }
    return centers;
}

}  // namespace detail

// EM fit of a K-component mixture from deterministic seeded k-means++
// initialization. Stops when the log-likelihood gain drops below 1e-6 or after
// 200 iterations; the per-iteration log-likelihood trace is available for
// monotonicity checks.
inline GaussianMixture fit_gmm(const std::vector<float>& samples, int k,
                               std::uint64_t seed,
                               std::vector<double>* loglik_trace = nullptr) {
    if (k < 1 || k > 3) throw DegenerateInputError("fit_gmm: K must be 1, 2, or 3");
    if (samples.size() < static_cast<std::size_t>(k))
        throw DegenerateInputError("fit_gmm: fewer samples than components");
    if (k == 1) return fit_gaussian(samples);

    const std::size_t n = samples.size();
    std::mt19937_64 rng(seed);
    const auto centers = detail::kmeanspp_centers(samples, k, rng);

    // initialize from the hard k-means++ assignment
    GaussianMixture g;
    g.weights.assign(k, 0.0);
    g.means.assign(k, 0.0);
    g.variances.assign(k, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        double bd = std::numeric_limits<double>::max();
        for (int c = 0; c < k; ++c) {
            const double d = (samples[i] - centers[c]) * (samples[i] - centers[c]);
            if (d < bd) {
                bd = d;
                best = c;
            }
        }
        g.means[best] += samples[i];
        ++counts[best];
    }
    double global_mean = 0.0;
    for (float s : samples) global_mean += s;
    global_mean /= static_cast<double>(n);
    for (int c = 0; c < k; ++c)
        g.means[c] = counts[c] ? g.means[c] / counts[c] : global_mean;
    double global_var = 0.0;
    for (float s : samples) global_var += (s - global_mean) * (s - global_mean);
    global_var = std::max(global_var / static_cast<double>(n), kVarianceFloor);
    {
        std::vector<double> ssq(k, 0.0);
        std::vector<std::size_t> cnt(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double bd = std::numeric_limits<double>::max();
            for (int c = 0; c < k; ++c) {
                const double d = (samples[i] - g.means[c]) * (samples[i] - g.means[c]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            ssq[best] += bd;
            ++cnt[best];
        }
        for (int c = 0; c < k; ++c) {
            g.weights[c] = std::max(static_cast<double>(cnt[c]) / n, 1e-6);
            g.variances[c] =
                cnt[c] ? std::max(ssq[c] / cnt[c], kVarianceFloor) : global_var;
        }
        double wsum = std::accumulate(g.weights.begin(), g.weights.end(), 0.0);
        for (auto& w : g.weights) w /= wsum;
    }

    std::vector<double> resp(n * k);
    double prev_ll = -std::numeric_limits<double>::max();
    for (int iter = 0; iter < 200; ++iter) {
        // E step
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double total = 0.0;
            for (int c = 0; c < k; ++c) {
                const double d = samples[i] - g.means[c];
                const double p = g.weights[c] / std::sqrt(2.0 * std::numbers::pi * g.variances[c]) *
                                 std::exp(-0.5 * d * d / g.variances[c]);
                resp[i * k + c] = p;
                total += p;
            }
            total = std::max(total, kProbabilityFloor);
            for (int c = 0; c < k; ++c) resp[i * k + c] /= total;
            ll += std::log(total);
        }
        if (loglik_trace) loglik_trace->push_back(ll);
        if (ll - prev_ll < 1e-6 && iter > 0) break;
        prev_ll = ll;

        // M step
        for (int c = 0; c < k; ++c) {
            double nk = 0.0, mk = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                nk += resp[i * k + c];
                mk += resp[i * k + c] * samples[i];
            }
            if (nk <= 1e-12) {
                g.weights[c] = 1e-12;
                continue;  // collapsed component keeps its parameters
            }
            const double mean = mk / nk;
            double vk = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                vk += resp[i * k + c] * (samples[i] - mean) * (samples[i] - mean);
            g.weights[c] = nk / static_cast<double>(n);
            g.means[c] = mean;
            g.variances[c] = std::max(vk / nk, kVarianceFloor);
        }
        double wsum = std::accumulate(g.weights.begin(), g.weights.end(), 0.0);
        for (auto& w : g.weights) w /= wsum;
    }
    validate_mixture(g);
    return g;
}

// Per-pixel -ln(mixture density), floored so the field stays finite. Pixels
// outside the ROI get the maximal (floor) value.
inline Field2 neg_log_likelihood_field(const Slice& s, const GaussianMixture& model,
                                       const Mask2& roi) {
    validate_mixture(model);
    if (roi.nx() != s.nx() || roi.ny() != s.ny())
        throw DegenerateInputError("nll field: roi dims mismatch");
    Field2 out(s.nx(), s.ny(), static_cast<float>(max_nll()));
    for (std::size_t i = 0; i < out.size(); ++i)
        if (roi[i]) out[i] = static_cast<float>(model.nll(s.pix[i]));
    return out;
}

inline nlohmann::json mixture_to_json(const GaussianMixture& g) {
    return nlohmann::json{{"K", g.k()},
                          {"weights", g.weights},
                          {"means", g.means},
                          {"variances", g.variances}};
}

inline GaussianMixture mixture_from_json(const nlohmann::json& j) {
    GaussianMixture g;
    g.weights = j.at("weights").get<std::vector<double>>();
    g.means = j.at("means").get<std::vector<double>>();
    g.variances = j.at("variances").get<std::vector<double>>();
    if (j.at("K").get<int>() != g.k())
        throw FormatError("mixture JSON: K disagrees with array lengths");
    validate_mixture(g);
    return g;
}

}  // namespace atlascut
