#include "dvn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "dvn/errors.hpp"
#include "dvn/scoring.hpp"

namespace dvn {

namespace {

void check(const ScorePools& p) {
    if (p.pos.empty() || p.neg.empty()) throw ArgumentError("metric needs nonempty score pools");
}

// (score, is_positive) sorted by descending score
std::vector<std::pair<double, bool>> merged_descending(const ScorePools& p) {
    std::vector<std::pair<double, bool>> all;
    all.reserve(p.pos.size() + p.neg.size());
    for (double s : p.pos) all.emplace_back(s, true);
    for (double s : p.neg) all.emplace_back(s, false);
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    return all;
}

}  // namespace

double tnr_at_tpr(const ScorePools& pools, double target_tpr) {
    check(pools);
    const double delta = calibrate_threshold(pools.pos, target_tpr).delta;
    const auto below = std::count_if(pools.neg.begin(), pools.neg.end(), [&](double s) { return s < delta; });
    return static_cast<double>(below) / static_cast<double>(pools.neg.size());
}

double auroc(const ScorePools& pools) {
    check(pools);
    std::vector<double> neg = pools.neg;
    std::sort(neg.begin(), neg.end());
    // twice the Mann-Whitney U so that every term is an integer
    double twice_u = 0.0;
    for (double s : pools.pos) {
        const auto lo = std::lower_bound(neg.begin(), neg.end(), s);
        const auto hi = std::upper_bound(lo, neg.end(), s);
        twice_u += 2.0 * static_cast<double>(lo - neg.begin()) + static_cast<double>(hi - lo);
    }
    return twice_u / (2.0 * static_cast<double>(pools.pos.size()) * static_cast<double>(neg.size()));
}

std::vector<CurvePoint> detection_curve(const ScorePools& pools) {
    check(pools);
    const auto all = merged_descending(pools);
    const double np = static_cast<double>(pools.pos.size());
    const double nn = static_cast<double>(pools.neg.size());
    std::vector<CurvePoint> curve;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < all.size();) {
        const double t = all[i].first;
        for (; i < all.size() && all[i].first == t; ++i) (all[i].second ? tp : fp) += 1;
        curve.push_back({t, tp / np, fp / nn,
                         static_cast<double>(tp) / static_cast<double>(tp + fp)});
    }
    return curve;
}

double aupr(const ScorePools& pools, PositiveClass positive) {
    check(pools);
    ScorePools oriented = pools;
    if (positive == PositiveClass::ood) {
        oriented.pos.clear();
        oriented.neg.clear();
        for (double s : pools.neg) oriented.pos.push_back(-s);
        for (double s : pools.pos) oriented.neg.push_back(-s);
    }
    double area = 0.0, prev_recall = 0.0;
    for (const auto& pt : detection_curve(oriented)) {
        area += (pt.tpr - prev_recall) * pt.precision;
        prev_recall = pt.tpr;
    }
    return area;
}

double verification_accuracy(const ScorePools& pools) {
    check(pools);
    const auto all = merged_descending(pools);
    const double np = static_cast<double>(pools.pos.size());
    const double nn = static_cast<double>(pools.neg.size());
    // at threshold t: TPR = #pos >= t, TNR = #neg < t = 1 - #neg >= t
    double best = 0.0;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < all.size();) {
        const double t = all[i].first;
        for (; i < all.size() && all[i].first == t; ++i) (all[i].second ? tp : fp) += 1;
        const double tpr = static_cast<double>(tp) / np;
        const double tnr = static_cast<double>(pools.neg.size() - fp) / nn;
        best = std::max(best, 0.5 * (tpr + tnr));
    }
    return best;
}

MetricRow evaluate_pools(const ScorePools& pools, std::string id_name, std::string negative_name,
                         double target_tpr) {
    MetricRow row;
    row.id_name = std::move(id_name);
    row.negative_name = std::move(negative_name);
    row.n_pos = pools.pos.size();
    row.n_neg = pools.neg.size();
    row.tnr95 = tnr_at_tpr(pools, target_tpr);
    row.auroc = auroc(pools);
    row.ver_acc = verification_accuracy(pools);
    row.aupr_in = aupr(pools, PositiveClass::id);
    return row;
}

void write_metrics_csv(std::ostream& out, std::span<const MetricRow> rows) {
    out << "id,negative,n_pos,n_neg,tnr95,auroc,ver_acc,aupr_in\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%s,%zu,%zu,%.6f,%.6f,%.6f,%.6f\n", r.id_name.c_str(),
                      r.negative_name.c_str(), r.n_pos, r.n_neg, r.tnr95, r.auroc, r.ver_acc,
                      r.aupr_in);
        out << buf;
    }
}

}  // namespace dvn
