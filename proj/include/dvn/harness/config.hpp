#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dvn/attacks.hpp"
#include "dvn/classifier.hpp"
#include "dvn/model.hpp"
#include "dvn/trainer.hpp"

namespace dvn::harness {

// Raw `key = value` document. Sections are `[name]` or `[kind.name]`; keys
// before the first header belong to the unnamed section "". `#` and `;`
// start comments.
struct ConfigEntry {
    std::string key;
    std::string value;
    std::size_t line = 0;
};

struct ConfigSection {
    std::string name;
    std::size_t line = 0;
    std::vector<ConfigEntry> entries;

    const ConfigEntry* find(std::string_view key) const;
};

struct ConfigDocument {
    std::vector<ConfigSection> sections;

    const ConfigSection* find(std::string_view name) const;
};

ConfigDocument parse_config_document(std::istream& in);

enum class IdKind { synthetic, sector, file };

struct IdDatasetSpec {
    IdKind kind = IdKind::synthetic;
    int num_classes = 3;
    int dim = 2;
    int n = 3000;
    double separation = 8.0;   // synthetic
    double scale = 6.0;        // sector
    double split_gap = 0.0;    // sector
    std::filesystem::path path;  // file
    std::vector<double> fractions{0.6, 0.2, 0.2};  // train, validation, test
};

enum class NegativeKind { uniform, gaussian, shifted, gap, wrong_label, file };

struct NegativeSpec {
    std::string name;
    NegativeKind kind = NegativeKind::uniform;
    int n = 1000;               // ignored by wrong_label (uses the ID test split)
    double angle_offset = 0.5;  // shifted
    std::filesystem::path path;  // file
};

struct AttackSpec {
    std::string name;
    AttackMethod method = AttackMethod::fgsm;
    AttackConfig config;
    int limit = 0;  // attack at most this many ID test samples; 0 = all
};

struct AblationFlags {
    bool disable_mi = false;
    bool disable_prior_correction = false;
    bool encoder_cond_y = false;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "dvn_run";
    int k = 100;
    double target_tpr = 0.95;
    unsigned threads = 0;
    bool baseline_msp = false;

    IdDatasetSpec id;
    std::vector<NegativeSpec> negatives;
    std::vector<AttackSpec> attacks;

    ClassifierArch classifier_arch;
    ClassifierTrainConfig classifier_train;
    std::filesystem::path classifier_checkpoint;  // load instead of training when set

    VerifierArch verifier_arch;
    TrainConfig verifier_train;
    std::filesystem::path verifier_checkpoint;

    AblationFlags ablation;
};

/// Reads an experiment config. Unknown sections or keys, bad values and
/// missing required keys raise ConfigError. Relative file paths are resolved
/// against `base_dir`.
ExperimentConfig parse_experiment_config(std::istream& in, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Canonical text form; parses back to an equal configuration.
std::string to_config_text(const ExperimentConfig& config);

/// FNV-1a of the canonical text, 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

/// Architecture and training config actually used once ablation flags and
/// the dataset's shape are applied.
VerifierArch effective_verifier_arch(const ExperimentConfig& config, int input_dim, int num_classes);
TrainConfig effective_verifier_train(const ExperimentConfig& config);
ClassifierArch effective_classifier_arch(const ExperimentConfig& config, int input_dim, int num_classes);

std::string_view to_string(IdKind k);
std::string_view to_string(NegativeKind k);
std::string_view to_string(AttackMethod m);

}  // namespace dvn::harness
