#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace dvn {

enum class Origin { in_distribution, ood, adversarial };

std::string_view to_string(Origin o);
Origin origin_from_string(std::string_view s);

struct LabeledSample {
    Eigen::VectorXd x;
    int y = 0;
};

/// Nonempty list of samples sharing one dimension, with a fixed origin tag.
class Dataset {
public:
    Dataset(std::vector<LabeledSample> samples, int num_classes, Origin origin);

    std::size_t size() const { return samples_.size(); }
    int dim() const { return static_cast<int>(samples_.front().x.size()); }
    int num_classes() const { return num_classes_; }
    Origin origin() const { return origin_; }

    const LabeledSample& operator[](std::size_t i) const { return samples_[i]; }
    const std::vector<LabeledSample>& samples() const { return samples_; }
    auto begin() const { return samples_.begin(); }
    auto end() const { return samples_.end(); }

    /// Rows are samples.
    Eigen::MatrixXd features() const;
    std::vector<int> labels() const;

    /// Same samples with labels replaced (e.g. by classifier predictions).
    Dataset relabeled(std::span<const int> labels) const;
    Dataset with_origin(Origin origin) const;

    bool operator==(const Dataset&) const = default;

private:
    std::vector<LabeledSample> samples_;
    int num_classes_;
    Origin origin_;
};

inline bool operator==(const LabeledSample& a, const LabeledSample& b) {
    return a.y == b.y && a.x.size() == b.x.size() && a.x == b.x;
}

/// Class means of the synthetic mixture: evenly spaced on a circle in the
/// first two coordinates so that adjacent means are exactly `separation`
/// apart (on a line when dim == 1). `angle_offset` rotates the circle by a
/// fraction of the angular spacing.
std::vector<Eigen::VectorXd> synthetic_class_means(int num_classes, int dim, double separation,
                                                   double angle_offset = 0.0);

/// Isotropic unit-variance Gaussian mixture; sample i has class i % num_classes.
Dataset make_synthetic_id(int num_classes, int dim, int n, double separation, std::uint64_t seed);

/// Same mixture with the cluster centres rotated by `angle_offset` class
/// spacings; tagged as OOD. Labels record the shifted cluster index.
Dataset make_shifted_ood(int num_classes, int dim, int n, double separation, double angle_offset,
                         std::uint64_t seed);

/// One continuous manifold cut into classes: u ~ N(0, I_2), y = angular
/// sector of u (num_classes equal sectors), x = scale * u in the first two
/// coordinates plus unit Gaussian noise in every coordinate. Adjacent classes
/// touch, so the position along the manifold already determines the label.
/// A positive `split` (dim >= 3) shifts coordinate 2 by +-split with a fair
/// coin, leaving an empty slab around zero; `gap_probes` draws the same points
/// inside that slab instead and tags them OOD.
Dataset make_sector_manifold(int num_classes, int dim, int n, double scale, std::uint64_t seed,
                             double split = 0.0, bool gap_probes = false);

enum class NoiseKind { uniform, gaussian };

/// uniform: i.i.d. U[0,1]; gaussian: i.i.d. N(0.5, 1). Labels are 0.
Dataset make_noise_ood(NoiseKind kind, int n, int dim, std::uint64_t seed, int num_classes = 1);

/// Disjoint partition by shuffled indices, sized with largest-remainder rounding.
std::vector<Dataset> split(const Dataset& dataset, std::span<const double> fractions,
                           std::uint64_t seed);

// Text format: header `d=<int> C=<int> n=<int>` (optionally followed by
// `origin=<tag>` for non in-distribution sets), then n lines `y x_1 ... x_d`
// with 9 significant digits.
void write_dataset(std::ostream& out, const Dataset& dataset);
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset(std::istream& in, Origin fallback = Origin::in_distribution);
Dataset read_dataset(const std::filesystem::path& path,
                     Origin fallback = Origin::in_distribution);

}  // namespace dvn
