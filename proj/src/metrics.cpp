#include "stableconf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace stableconf {

double accuracy(std::span<const PredictionRecord> records) {
    if (records.empty()) throw Error(ErrorKind::InvalidInput, "no records");
    double correct = 0.0;
    for (const auto& r : records) correct += r.correct ? 1.0 : 0.0;
    return correct / static_cast<double>(records.size());
}

static int bin_index(double confidence, int num_bins) {
    // Comparison-based so edge values land in the lower bin exactly.
    for (int m = 1; m <= num_bins; ++m) {
        if (confidence <= static_cast<double>(m) / num_bins) return m;
    }
    return num_bins;
}

std::vector<BinStat> ece_bins(std::span<const PredictionRecord> records, int num_bins) {
    if (records.empty()) throw Error(ErrorKind::InvalidInput, "no records");
    if (num_bins < 1) throw Error(ErrorKind::InvalidInput, "need at least one bin");

    std::vector<BinStat> bins(static_cast<size_t>(num_bins));
    std::vector<double> conf_sum(static_cast<size_t>(num_bins), 0.0);
    std::vector<double> acc_sum(static_cast<size_t>(num_bins), 0.0);
    for (int m = 0; m < num_bins; ++m) bins[m].index = m + 1;

    for (const auto& r : records) {
        int m = bin_index(r.confidence, num_bins) - 1;
        bins[m].count += 1;
        conf_sum[m] += r.confidence;
        acc_sum[m] += r.correct ? 1.0 : 0.0;
    }
    for (int m = 0; m < num_bins; ++m) {
        if (bins[m].count == 0) continue;
        bins[m].confidence = conf_sum[m] / bins[m].count;
        bins[m].accuracy = acc_sum[m] / bins[m].count;
    }
    return bins;
}

double ece(std::span<const PredictionRecord> records, int num_bins) {
    auto bins = ece_bins(records, num_bins);
    double n = static_cast<double>(records.size());
    double total = 0.0;
    for (const auto& b : bins) {
        if (b.count == 0) continue;
        total += (b.count / n) * std::abs(b.accuracy - b.confidence);
    }
    return total;
}

// Indices of records ordered by confidence descending; throws on exact ties.
static std::vector<size_t> strict_confidence_order(
    std::span<const PredictionRecord> records) {
    if (records.empty()) throw Error(ErrorKind::InvalidInput, "no records");
    std::vector<size_t> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return records[a].confidence > records[b].confidence;
    });
    for (size_t k = 1; k < order.size(); ++k) {
        if (records[order[k - 1]].confidence == records[order[k]].confidence)
            throw Error(ErrorKind::TiesPresent,
                        "exact confidence ties; apply the noise protocol first");
    }
    return order;
}

double aurc(std::span<const PredictionRecord> records) {
    auto order = strict_confidence_order(records);
    double correct_so_far = 0.0;
    double sum_acc = 0.0;
    for (size_t k = 0; k < order.size(); ++k) {
        correct_so_far += records[order[k]].correct ? 1.0 : 0.0;
        sum_acc += correct_so_far / static_cast<double>(k + 1);
    }
    return sum_acc / static_cast<double>(order.size());
}

std::vector<CurvePoint> risk_coverage_points(
    std::span<const PredictionRecord> records) {
    auto order = strict_confidence_order(records);
    std::vector<CurvePoint> points;
    points.reserve(order.size());
    double n = static_cast<double>(order.size());
    double correct_so_far = 0.0;
    for (size_t k = 0; k < order.size(); ++k) {
        correct_so_far += records[order[k]].correct ? 1.0 : 0.0;
        points.push_back({static_cast<double>(k + 1) / n,
                          correct_so_far / static_cast<double>(k + 1)});
    }
    return points;
}

double auroc(std::span<const PredictionRecord> records) {
    if (records.empty()) throw Error(ErrorKind::InvalidInput, "no records");
    std::vector<double> pos, neg;
    for (const auto& r : records) (r.correct ? pos : neg).push_back(r.confidence);
    if (pos.empty() || neg.empty())
        throw Error(ErrorKind::UndefinedAuroc,
                    "need both correct and incorrect records");

    double wins = 0.0;
    for (double p : pos) {
        for (double q : neg) {
            if (p > q)
                wins += 1.0;
            else if (p == q)
                wins += 0.5;
        }
    }
    return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

std::vector<CurvePoint> roc_points(std::span<const PredictionRecord> records) {
    auto order = strict_confidence_order(records);
    double n_pos = 0.0, n_neg = 0.0;
    for (const auto& r : records) (r.correct ? n_pos : n_neg) += 1.0;
    if (n_pos == 0.0 || n_neg == 0.0)
        throw Error(ErrorKind::UndefinedAuroc,
                    "need both correct and incorrect records");

    std::vector<CurvePoint> points;
    points.reserve(order.size() + 1);
    points.push_back({0.0, 0.0});
    double tp = 0.0, fp = 0.0;
    for (size_t k = 0; k < order.size(); ++k) {
        if (records[order[k]].correct)
            tp += 1.0;
        else
            fp += 1.0;
        points.push_back({fp / n_neg, tp / n_pos});
    }
    return points;
}

// ---------------------------------------------------------------------------
// Noise protocol

static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream + 0x9e3779b97f4a7c15ULL));
}

GaussianStream::GaussianStream(std::uint64_t seed) : rng_(seed) {}

double GaussianStream::next() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller on uniforms from the 53 high bits; u1 stays strictly > 0.
    double u1 = (static_cast<double>(rng_() >> 11) + 0.5) * 0x1.0p-53;
    double u2 = (static_cast<double>(rng_() >> 11) + 0.5) * 0x1.0p-53;
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

double noisy_average(std::span<const PredictionRecord> records, RankMetric metric,
                     double sigma, int repeats, std::uint64_t seed) {
    if (repeats < 1) throw Error(ErrorKind::InvalidInput, "repeats must be >= 1");
    if (sigma < 0.0) throw Error(ErrorKind::InvalidInput, "sigma must be >= 0");

    std::vector<PredictionRecord> noisy(records.begin(), records.end());
    double total = 0.0;
    for (int rep = 0; rep < repeats; ++rep) {
        GaussianStream gauss(derive_seed(seed, static_cast<std::uint64_t>(rep)));
        for (size_t i = 0; i < noisy.size(); ++i) {
            // No clamping: only the induced ordering matters.
            noisy[i].confidence = records[i].confidence + sigma * gauss.next();
        }
        total += metric == RankMetric::Aurc ? aurc(noisy) : auroc(noisy);
    }
    return total / repeats;
}

}  // namespace stableconf
