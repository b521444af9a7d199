#pragma once

#include <optional>

#include <Eigen/Dense>

#include "dvn/classifier.hpp"
#include "dvn/dataset.hpp"

namespace dvn {

struct AttackConfig {
    double epsilon = 0.1;   // L-infinity budget
    double alpha = 0.025;   // BIM step
    int steps = 10;         // BIM iterations
    double clip_min = 0.0;
    double clip_max = 1.0;
};

void validate(const AttackConfig& cfg);

/// clip(x + eps * sign(grad_x CE(f(x), y)), clip_min, clip_max); sign(0) = 0.
Eigen::VectorXd fgsm(const Classifier& classifier, const Eigen::VectorXd& x, int y_true,
                     const AttackConfig& cfg);

/// Iterated sign steps of size alpha, each followed by clipping to the input
/// range and projection onto the eps-ball around the original x.
Eigen::VectorXd bim(const Classifier& classifier, const Eigen::VectorXd& x, int y_true,
                    const AttackConfig& cfg);

enum class AttackMethod { fgsm, bim };

struct AttackedSet {
    Dataset data;                 // perturbed inputs, labels = classifier prediction on them
    std::vector<std::size_t> source_index;
    std::size_t attempted = 0;
};

/// Attacks every sample of `clean` (true labels). With `successful_only`,
/// keeps only perturbations that change the classifier's prediction away
/// from the true label. Returns nullopt-like empty result if none succeed.
std::optional<AttackedSet> attack_dataset(const Classifier& classifier, const Dataset& clean,
                                          AttackMethod method, const AttackConfig& cfg,
                                          bool successful_only = true);

}  // namespace dvn
