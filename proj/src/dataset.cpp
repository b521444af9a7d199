#include "dvn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "dvn/errors.hpp"
#include "dvn/rng.hpp"

namespace dvn {

std::string_view to_string(Origin o) {
    switch (o) {
        case Origin::in_distribution: return "in_distribution";
        case Origin::ood: return "ood";
        case Origin::adversarial: return "adversarial";
    }
    return "in_distribution";
}

Origin origin_from_string(std::string_view s) {
    if (s == "in_distribution") return Origin::in_distribution;
    if (s == "ood") return Origin::ood;
    if (s == "adversarial") return Origin::adversarial;
    throw ArgumentError("unknown origin tag '" + std::string(s) + "'");
}

Dataset::Dataset(std::vector<LabeledSample> samples, int num_classes, Origin origin)
    : samples_(std::move(samples)), num_classes_(num_classes), origin_(origin) {
    if (samples_.empty()) throw ArgumentError("dataset must be nonempty");
    if (num_classes_ < 1) throw ArgumentError("dataset needs at least one class");
    const auto d = samples_.front().x.size();
    if (d == 0) throw ArgumentError("samples must have positive dimension");
    for (const auto& s : samples_) {
        if (s.x.size() != d) throw ArgumentError("samples differ in dimension");
        if (s.y < 0 || s.y >= num_classes_) throw ArgumentError("label out of range");
        if (!s.x.allFinite()) throw ArgumentError("sample has non-finite components");
    }
}

Eigen::MatrixXd Dataset::features() const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(size()), dim());
    for (std::size_t i = 0; i < size(); ++i) m.row(static_cast<Eigen::Index>(i)) = samples_[i].x;
    return m;
}

std::vector<int> Dataset::labels() const {
    std::vector<int> out;
    out.reserve(size());
    for (const auto& s : samples_) out.push_back(s.y);
    return out;
}

Dataset Dataset::relabeled(std::span<const int> labels) const {
    if (labels.size() != size()) throw ArgumentError("relabel size mismatch");
    auto copy = samples_;
    for (std::size_t i = 0; i < size(); ++i) copy[i].y = labels[i];
    return Dataset(std::move(copy), num_classes_, origin_);
}

Dataset Dataset::with_origin(Origin origin) const { return Dataset(samples_, num_classes_, origin); }

std::vector<Eigen::VectorXd> synthetic_class_means(int num_classes, int dim, double separation,
                                                   double angle_offset) {
    if (num_classes < 2) throw ArgumentError("need at least two classes");
    if (dim < 1) throw ArgumentError("dimension must be positive");
    if (!(separation > 0)) throw ArgumentError("separation must be positive");
    std::vector<Eigen::VectorXd> means;
    if (dim == 1) {
        for (int c = 0; c < num_classes; ++c) {
            Eigen::VectorXd m(1);
            m[0] = (c + angle_offset - 0.5 * (num_classes - 1)) * separation;
            means.push_back(m);
        }
        return means;
    }
    // chord between adjacent points equals the separation
    const double step = 2.0 * std::numbers::pi / num_classes;
    const double radius = separation / (2.0 * std::sin(step / 2.0));
    for (int c = 0; c < num_classes; ++c) {
        Eigen::VectorXd m = Eigen::VectorXd::Zero(dim);
        const double angle = (c + angle_offset) * step;
        m[0] = radius * std::cos(angle);
        m[1] = radius * std::sin(angle);
        means.push_back(m);
    }
    return means;
}

namespace {

Dataset sample_mixture(const std::vector<Eigen::VectorXd>& means, int n, std::uint64_t seed,
                       Origin origin) {
    const int num_classes = static_cast<int>(means.size());
    const int dim = static_cast<int>(means.front().size());
    Rng rng = make_rng(seed);
    std::normal_distribution<double> normal;
    std::vector<LabeledSample> samples;
    samples.reserve(n);
    for (int i = 0; i < n; ++i) {
        LabeledSample s;
        s.y = i % num_classes;
        s.x = means[s.y];
        for (int j = 0; j < dim; ++j) s.x[j] += normal(rng);
        samples.push_back(std::move(s));
    }
    return Dataset(std::move(samples), num_classes, origin);
}

}  // namespace

Dataset make_synthetic_id(int num_classes, int dim, int n, double separation, std::uint64_t seed) {
    if (n < num_classes) throw ArgumentError("need at least one sample per class");
    return sample_mixture(synthetic_class_means(num_classes, dim, separation), n, seed,
                          Origin::in_distribution);
}

Dataset make_shifted_ood(int num_classes, int dim, int n, double separation, double angle_offset,
                         std::uint64_t seed) {
    if (n < 1) throw ArgumentError("n must be positive");
    return sample_mixture(synthetic_class_means(num_classes, dim, separation, angle_offset), n, seed,
                          Origin::ood);
}

Dataset make_sector_manifold(int num_classes, int dim, int n, double scale, std::uint64_t seed, double split,
                             bool gap_probes) {
    if (num_classes < 2) throw ArgumentError("need at least two classes");
    if (dim < 2) throw ArgumentError("sector manifold needs dim >= 2");
    if (n < num_classes) throw ArgumentError("need at least one sample per class");
    if (!(scale > 0)) throw ArgumentError("scale must be positive");
    if (!(split >= 0)) throw ArgumentError("split must be non-negative");
    if (split > 0 && dim < 3) throw ArgumentError("split needs dim >= 3");
    Rng rng = make_rng(seed);
    std::normal_distribution<double> normal;
    std::bernoulli_distribution coin(0.5);
    const double width = 2.0 * std::numbers::pi / num_classes;
    std::vector<LabeledSample> samples;
    samples.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double u0 = normal(rng), u1 = normal(rng);
        double angle = std::atan2(u1, u0);
        if (angle < 0) angle += 2.0 * std::numbers::pi;
        LabeledSample s;
        s.y = std::min(num_classes - 1, static_cast<int>(angle / width));
        s.x.resize(dim);
        for (int j = 0; j < dim; ++j) s.x[j] = normal(rng);
        s.x[0] += scale * u0;
        s.x[1] += scale * u1;
        if (split > 0 && !gap_probes) s.x[2] += coin(rng) ? split : -split;
        samples.push_back(std::move(s));
    }
    return Dataset(std::move(samples), num_classes, gap_probes ? Origin::ood : Origin::in_distribution);
}

Dataset make_noise_ood(NoiseKind kind, int n, int dim, std::uint64_t seed, int num_classes) {
    if (n < 1) throw ArgumentError("n must be positive");
    if (dim < 1) throw ArgumentError("dimension must be positive");
    Rng rng = make_rng(seed);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::normal_distribution<double> gaussian(0.5, 1.0);
    std::vector<LabeledSample> samples(n);
    for (auto& s : samples) {
        s.x.resize(dim);
        for (int j = 0; j < dim; ++j)
            s.x[j] = kind == NoiseKind::uniform ? uniform(rng) : gaussian(rng);
    }
    return Dataset(std::move(samples), num_classes, Origin::ood);
}

std::vector<Dataset> split(const Dataset& dataset, std::span<const double> fractions,
                           std::uint64_t seed) {
    if (fractions.empty()) throw ArgumentError("no split fractions");
    double total = 0.0;
    for (double f : fractions) {
        if (!(f > 0)) throw ArgumentError("split fractions must be positive");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ArgumentError("split fractions must sum to 1");

    const std::size_t n = dataset.size();
    std::vector<std::size_t> sizes(fractions.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        const double exact = fractions[i] * static_cast<double>(n);
        sizes[i] = static_cast<std::size_t>(std::floor(exact));
        assigned += sizes[i];
        remainders.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++sizes[remainders[r].second];

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<Dataset> parts;
    std::size_t cursor = 0;
    for (std::size_t size : sizes) {
        if (size == 0) throw ArgumentError("split would produce an empty part");
        std::vector<LabeledSample> part;
        part.reserve(size);
        for (std::size_t k = 0; k < size; ++k) part.push_back(dataset[order[cursor++]]);
        parts.emplace_back(std::move(part), dataset.num_classes(), dataset.origin());
    }
    return parts;
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
    out << "d=" << dataset.dim() << " C=" << dataset.num_classes() << " n=" << dataset.size();
    if (dataset.origin() != Origin::in_distribution) out << " origin=" << to_string(dataset.origin());
    out << '\n';
    char buf[32];
    for (const auto& s : dataset) {
        out << s.y;
        for (Eigen::Index j = 0; j < s.x.size(); ++j) {
            std::snprintf(buf, sizeof buf, " %.9g", s.x[j]);
            out << buf;
        }
        out << '\n';
    }
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
    std::ofstream out(path);
    if (!out) throw ArgumentError("cannot open " + path.string() + " for writing");
    write_dataset(out, dataset);
}

Dataset read_dataset(std::istream& in, Origin fallback) {
    std::string header;
    if (!std::getline(in, header)) throw FormatError("missing dataset header", 0);
    std::size_t offset = header.size() + 1;
    int d = 0, c = 0;
    long long n = 0;
    char origin_buf[32] = {0};
    const int fields = std::sscanf(header.c_str(), "d=%d C=%d n=%lld origin=%31s", &d, &c, &n,
                                   origin_buf);
    if (fields < 3 || d < 1 || c < 1 || n < 1) throw FormatError("malformed dataset header", 0);
    Origin origin = fields == 4 ? origin_from_string(origin_buf) : fallback;

    std::vector<LabeledSample> samples;
    samples.reserve(static_cast<std::size_t>(n));
    std::string line;
    for (long long i = 0; i < n; ++i) {
        if (!std::getline(in, line))
            throw FormatError("dataset truncated after " + std::to_string(i) + " samples", offset);
        std::istringstream row(line);
        LabeledSample s;
        s.x.resize(d);
        if (!(row >> s.y)) throw FormatError("missing label", offset);
        for (int j = 0; j < d; ++j)
            if (!(row >> s.x[j])) throw FormatError("missing feature value", offset);
        if (s.y < 0 || s.y >= c) throw FormatError("label out of range", offset);
        offset += line.size() + 1;
        samples.push_back(std::move(s));
    }
    return Dataset(std::move(samples), c, origin);
}

Dataset read_dataset(const std::filesystem::path& path, Origin fallback) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot open " + path.string());
    return read_dataset(in, fallback);
}

}  // namespace dvn
