#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace dvn {

/// Detector scores; higher means more in-distribution.
struct ScorePools {
    std::vector<double> pos;  // in-distribution
    std::vector<double> neg;  // OOD or adversarial
};

enum class PositiveClass { id, ood };

/// Fraction of negatives strictly below the threshold calibrated on the
/// positives at `target_tpr`.
double tnr_at_tpr(const ScorePools& pools, double target_tpr = 0.95);

/// P(pos > neg) + P(pos == neg) / 2, exact via rank counting.
double auroc(const ScorePools& pools);

/// Step-wise area under precision/recall: sum over descending distinct
/// thresholds of (R_n - R_{n-1}) * P_n, where a score >= threshold is
/// predicted positive.
double aupr(const ScorePools& pools, PositiveClass positive = PositiveClass::id);

/// max over the distinct pooled scores delta of (TPR(delta) + TNR(delta)) / 2.
double verification_accuracy(const ScorePools& pools);

struct CurvePoint {
    double threshold;
    double tpr;  // positives >= threshold
    double fpr;  // negatives >= threshold
    double precision;
};

/// One point per distinct score, descending thresholds.
std::vector<CurvePoint> detection_curve(const ScorePools& pools);

struct MetricRow {
    std::string id_name;
    std::string negative_name;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    double tnr95 = 0.0;
    double auroc = 0.0;
    double ver_acc = 0.0;
    double aupr_in = 0.0;
};

MetricRow evaluate_pools(const ScorePools& pools, std::string id_name, std::string negative_name,
                         double target_tpr = 0.95);

/// CSV `id,negative,n_pos,n_neg,tnr95,auroc,ver_acc,aupr_in`.
void write_metrics_csv(std::ostream& out, std::span<const MetricRow> rows);

}  // namespace dvn
