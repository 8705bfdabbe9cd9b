#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "stableconf/core.hpp"

namespace stableconf {

struct BinStat {
    int index = 0;  // 1-based bin number
    int count = 0;
    double accuracy = 0.0;
    double confidence = 0.0;
};

struct CurvePoint {
    double x = 0.0;
    double y = 0.0;
};

struct EvalSummary {
    int n = 0;
    double accuracy = 0.0;
    double ece = 0.0;
    double aurc = 0.0;
    std::optional<double> auroc;  // absent when one correctness class is empty
    std::vector<BinStat> bins;
    double noise_sigma = 0.0;
    int noise_repeats = 0;
    std::uint64_t seed = 0;
    int failed_excluded = 0;
};

enum class RankMetric { Aurc, Auroc };

// Mean of the correctness indicators.
double accuracy(std::span<const PredictionRecord> records);

// Bin m covers ((m-1)/M, m/M]; r = 0 falls into bin 1. Weighted by |B_m|/N.
double ece(std::span<const PredictionRecord> records, int num_bins);
std::vector<BinStat> ece_bins(std::span<const PredictionRecord> records, int num_bins);

// Mean accuracy over all coverage prefixes of the confidence-descending
// ordering. Exact confidence ties are rejected; break them with
// noisy_average.
double aurc(std::span<const PredictionRecord> records);

// P(r_correct > r_incorrect) + 0.5 * P(equal) over all correct x incorrect
// pairs. Needs both classes present.
double auroc(std::span<const PredictionRecord> records);

// B.3 tie-break protocol: per repeat, add iid N(0, sigma^2) to every
// confidence (unclamped; only the ordering matters), evaluate, average.
// Deterministic for a fixed seed; repeats use independent substreams.
double noisy_average(std::span<const PredictionRecord> records, RankMetric metric,
                     double sigma, int repeats, std::uint64_t seed);

// (K/N, Acc over the K most confident) for K = 1..N.
std::vector<CurvePoint> risk_coverage_points(std::span<const PredictionRecord> records);

// (FPR, TPR) threshold sweep from (0,0) to (1,1) over distinct confidences.
std::vector<CurvePoint> roc_points(std::span<const PredictionRecord> records);

// Deterministic standard normal stream (hand-rolled Box-Muller over
// mt19937_64), so noise draws reproduce across platforms and library
// versions.
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed);
    double next();

private:
    std::mt19937_64 rng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Derives an independent substream seed, splitmix64-style.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace stableconf
