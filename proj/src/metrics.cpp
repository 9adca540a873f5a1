#include "mseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mseg {

double dice(const std::vector<bool>& prediction, const std::vector<bool>& truth) {
    if (prediction.size() != truth.size())
        throw std::invalid_argument("dice: extent mismatch");
    std::size_t p = 0, t = 0, both = 0;
    for (std::size_t i = 0; i < prediction.size(); ++i) {
        if (prediction[i]) ++p;
        if (truth[i]) ++t;
        if (prediction[i] && truth[i]) ++both;
    }
    if (p + t == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + t);
}

RegionScores evaluate(const LabelVolume& prediction, const LabelVolume& truth) {
    if (prediction.shape != truth.shape)
        throw std::invalid_argument("evaluate: extent mismatch " + shape_str(prediction.shape) +
                                    " vs " + shape_str(truth.shape));
    RegionScores scores;
    for (Region r : kRegions) {
        std::vector<bool> p(prediction.numel()), t(truth.numel());
        for (std::size_t i = 0; i < prediction.numel(); ++i) {
            p[i] = in_region(prediction[i], r);
            t[i] = in_region(truth[i], r);
        }
        const double d = dice(p, t);
        switch (r) {
            case Region::WholeTumor: scores.wt = d; break;
            case Region::TumorCore: scores.tc = d; break;
            case Region::EnhancingCore: scores.ec = d; break;
        }
    }
    return scores;
}

SummaryStats summarize(std::vector<double> scores) {
    if (scores.empty()) throw std::invalid_argument("summarize: no scores");
    SummaryStats s;
    const double n = static_cast<double>(scores.size());
    for (double v : scores) s.mean += v;
    s.mean /= n;
    for (double v : scores) s.stddev += (v - s.mean) * (v - s.mean);
    s.stddev = scores.size() > 1 ? std::sqrt(s.stddev / (n - 1)) : 0.0;
    std::sort(scores.begin(), scores.end());
    auto quantile = [&](double q) {
        const double pos = q * (n - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, scores.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return scores[lo] * (1 - frac) + scores[hi] * frac;
    };
    s.median = quantile(0.5);
    s.q25 = quantile(0.25);
    s.q75 = quantile(0.75);
    return s;
}

}  // namespace mseg
