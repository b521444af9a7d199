#include "dvn/attacks.hpp"

#include "dvn/errors.hpp"

namespace dvn {

void validate(const AttackConfig& cfg) {
    if (!(cfg.epsilon >= 0)) throw ArgumentError("attack epsilon must be nonnegative");
    if (!(cfg.alpha > 0)) throw ArgumentError("attack step must be positive");
    if (cfg.steps < 1) throw ArgumentError("attack needs at least one step");
    if (!(cfg.clip_min <= cfg.clip_max)) throw ArgumentError("empty clip range");
}

namespace {

Eigen::VectorXd sign(const Eigen::VectorXd& g) {
    return g.unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

}  // namespace

Eigen::VectorXd fgsm(const Classifier& classifier, const Eigen::VectorXd& x, int y_true,
                     const AttackConfig& cfg) {
    validate(cfg);
    const Eigen::VectorXd g = classifier.input_gradient(x, y_true);
    return (x + cfg.epsilon * sign(g)).cwiseMax(cfg.clip_min).cwiseMin(cfg.clip_max);
}

Eigen::VectorXd bim(const Classifier& classifier, const Eigen::VectorXd& x, int y_true,
                    const AttackConfig& cfg) {
    validate(cfg);
    const Eigen::VectorXd lo = (x.array() - cfg.epsilon).matrix();
    const Eigen::VectorXd hi = (x.array() + cfg.epsilon).matrix();
    Eigen::VectorXd adv = x;
    for (int t = 0; t < cfg.steps; ++t) {
        const Eigen::VectorXd g = classifier.input_gradient(adv, y_true);
        adv = (adv + cfg.alpha * sign(g)).cwiseMax(cfg.clip_min).cwiseMin(cfg.clip_max);
        adv = adv.cwiseMax(lo).cwiseMin(hi);
    }
    return adv;
}

std::optional<AttackedSet> attack_dataset(const Classifier& classifier, const Dataset& clean,
                                          AttackMethod method, const AttackConfig& cfg,
                                          bool successful_only) {
    validate(cfg);
    std::vector<LabeledSample> out;
    std::vector<std::size_t> source;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        const auto& s = clean[i];
        Eigen::VectorXd adv = method == AttackMethod::fgsm ? fgsm(classifier, s.x, s.y, cfg)
                                                           : bim(classifier, s.x, s.y, cfg);
        const int pred = classifier.predict(adv).label;
        if (successful_only && pred == s.y) continue;
        out.push_back({std::move(adv), pred});
        source.push_back(i);
    }
    if (out.empty()) return std::nullopt;
    return AttackedSet{Dataset(std::move(out), clean.num_classes(), Origin::adversarial),
                       std::move(source), clean.size()};
}

}  // namespace dvn
