#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "dvn/classifier.hpp"
#include "dvn/dataset.hpp"
#include "dvn/errors.hpp"
#include "support/temp_dir.hpp"

using namespace dvn;

namespace {

std::string dump(const Dataset& d) {
    std::ostringstream os;
    write_dataset(os, d);
    return os.str();
}

std::multiset<std::string> rows(const Dataset& d) {
    std::multiset<std::string> out;
    for (const auto& s : d) {
        std::ostringstream os;
        os.precision(17);
        os << s.y;
        for (double v : s.x) os << ' ' << v;
        out.insert(os.str());
    }
    return out;
}

}  // namespace

TEST_SUITE("datasets") {

TEST_CASE("synthetic mixture cardinality and labels") {
    const Dataset d = make_synthetic_id(2, 2, 4, 6.0, 0);
    CHECK(d.size() == 4);
    CHECK(d.num_classes() == 2);
    CHECK(d.origin() == Origin::in_distribution);
    const auto y = d.labels();
    CHECK(std::count(y.begin(), y.end(), 0) == 2);
    CHECK(std::count(y.begin(), y.end(), 1) == 2);
}

TEST_CASE("generators are deterministic in the seed") {
    CHECK(dump(make_synthetic_id(3, 4, 50, 5.0, 0)) == dump(make_synthetic_id(3, 4, 50, 5.0, 0)));
    CHECK(dump(make_synthetic_id(3, 4, 50, 5.0, 0)) != dump(make_synthetic_id(3, 4, 50, 5.0, 1)));
    CHECK(make_noise_ood(NoiseKind::uniform, 20, 3, 9) == make_noise_ood(NoiseKind::uniform, 20, 3, 9));
    CHECK(make_sector_manifold(4, 3, 40, 6.0, 2, 4.0) == make_sector_manifold(4, 3, 40, 6.0, 2, 4.0));
}

TEST_CASE("class means are at least the separation apart") {
    for (int c : {2, 3, 5, 8}) {
        const auto means = synthetic_class_means(c, 3, 8.0);
        for (int i = 0; i < c; ++i)
            for (int j = i + 1; j < c; ++j) CHECK((means[i] - means[j]).norm() >= 8.0 - 1e-9);
    }
}

TEST_CASE("invalid generator arguments") {
    CHECK_THROWS_AS(make_synthetic_id(1, 2, 4, 6.0, 0), ArgumentError);
    CHECK_THROWS_AS(make_synthetic_id(3, 2, 2, 6.0, 0), ArgumentError);
    CHECK_THROWS_AS(make_synthetic_id(2, 2, 4, 0.0, 0), ArgumentError);
    CHECK_THROWS_AS(make_noise_ood(NoiseKind::uniform, 0, 2, 0), ArgumentError);
    CHECK_THROWS_AS(make_sector_manifold(4, 2, 40, 6.0, 0, 1.0), ArgumentError);
    CHECK_THROWS_AS(make_sector_manifold(4, 3, 40, 6.0, 0, -1.0), ArgumentError);
}

TEST_CASE("uniform noise has mean one half per coordinate") {
    const Dataset d = make_noise_ood(NoiseKind::uniform, 10000, 32, 7);
    CHECK(d.origin() == Origin::ood);
    const Eigen::RowVectorXd mean = d.features().colwise().mean();
    CHECK(mean.minCoeff() >= 0.48);
    CHECK(mean.maxCoeff() <= 0.52);
    CHECK(d.features().minCoeff() >= 0.0);
    CHECK(d.features().maxCoeff() <= 1.0);
}

TEST_CASE("gaussian noise has unit variance per coordinate") {
    const Eigen::MatrixXd x = make_noise_ood(NoiseKind::gaussian, 10000, 32, 7).features();
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Eigen::RowVectorXd var = (x.rowwise() - mean).array().square().colwise().sum() / (x.rows() - 1.0);
    CHECK(var.minCoeff() >= 0.95);
    CHECK(var.maxCoeff() <= 1.05);
    CHECK(mean.minCoeff() >= 0.45);
    CHECK(mean.maxCoeff() <= 0.55);
}

TEST_CASE("single uniform draw lies in the unit interval") {
    const Dataset d = make_noise_ood(NoiseKind::uniform, 1, 1, 123);
    CHECK(d.size() == 1);
    CHECK(d[0].x[0] >= 0.0);
    CHECK(d[0].x[0] <= 1.0);
}

TEST_CASE("noise lies farther from every class mean than the class spread") {
    const auto means = synthetic_class_means(3, 2, 8.0);
    const Dataset noise = make_noise_ood(NoiseKind::uniform, 500, 2, 3);
    double total = 0;
    for (const auto& s : noise) {
        double best = 1e300;
        for (const auto& m : means) best = std::min(best, (s.x - m).norm());
        total += best;
    }
    CHECK(total / noise.size() > 1.0);
}

TEST_CASE("split sizes use largest remainders") {
    const Dataset d = make_synthetic_id(2, 2, 10, 6.0, 0);
    const std::vector<double> f{0.8, 0.2};
    const auto parts = split(d, f, 4);
    REQUIRE(parts.size() == 2);
    CHECK(parts[0].size() == 8);
    CHECK(parts[1].size() == 2);
    const std::vector<double> thirds{1.0 / 3, 1.0 / 3, 1.0 / 3};
    const auto p3 = split(d, thirds, 4);
    CHECK(p3[0].size() + p3[1].size() + p3[2].size() == 10);
}

TEST_CASE("split with one part is the identity partition") {
    const Dataset d = make_synthetic_id(2, 2, 10, 6.0, 0);
    const std::vector<double> f{1.0};
    const auto parts = split(d, f, 4);
    REQUIRE(parts.size() == 1);
    CHECK(rows(parts[0]) == rows(d));
}

TEST_CASE("split conserves the multiset of samples and is deterministic") {
    const Dataset d = make_synthetic_id(3, 3, 97, 6.0, 5);
    const std::vector<double> f{0.6, 0.2, 0.2};
    const auto a = split(d, f, 11);
    const auto b = split(d, f, 11);
    std::multiset<std::string> joined;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i] == b[i]);
        const auto r = rows(a[i]);
        joined.insert(r.begin(), r.end());
    }
    CHECK(joined == rows(d));
}

TEST_CASE("split rejects bad fractions") {
    const Dataset d = make_synthetic_id(2, 2, 10, 6.0, 0);
    const std::vector<double> bad_sum{0.5, 0.4};
    const std::vector<double> negative{1.2, -0.2};
    CHECK_THROWS_AS(split(d, bad_sum, 0), ArgumentError);
    CHECK_THROWS_AS(split(d, negative, 0), ArgumentError);
}

TEST_CASE("text format round trips to nine significant digits") {
    const Dataset d = make_synthetic_id(3, 4, 30, 6.0, 2);
    std::stringstream ss;
    write_dataset(ss, d);
    const Dataset back = read_dataset(ss);
    REQUIRE(back.size() == d.size());
    CHECK(back.num_classes() == 3);
    CHECK(back.origin() == Origin::in_distribution);
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(back[i].y == d[i].y);
        for (int j = 0; j < d.dim(); ++j)
            CHECK(back[i].x[j] == doctest::Approx(d[i].x[j]).epsilon(5e-9));
    }
    // Writing the parsed copy again reproduces the text exactly.
    CHECK(dump(back) == dump(d));
}

TEST_CASE("file round trip keeps the origin tag") {
    testing::TempDir dir;
    const Dataset d = make_noise_ood(NoiseKind::gaussian, 5, 2, 1, 3);
    write_dataset(dir / "noise.txt", d);
    CHECK(read_dataset(dir / "noise.txt").origin() == Origin::ood);
}

TEST_CASE("malformed dataset text") {
    std::istringstream empty("");
    CHECK_THROWS_AS(read_dataset(empty), FormatError);
    std::istringstream header("d=2 C=2\n");
    CHECK_THROWS_AS(read_dataset(header), FormatError);
    std::istringstream truncated("d=2 C=2 n=3\n0 1 2\n1 3 4\n");
    CHECK_THROWS_AS(read_dataset(truncated), FormatError);
    std::istringstream label("d=1 C=2 n=1\n5 0.5\n");
    CHECK_THROWS_AS(read_dataset(label), FormatError);
}

TEST_CASE("sector manifold labels and gap probes") {
    const Dataset d = make_sector_manifold(4, 3, 400, 6.0, 3, 4.0);
    // Noise-free positions sit in the labelled sector, so most noisy points do too.
    int agree = 0;
    for (const auto& s : d) {
        double a = std::atan2(s.x[1], s.x[0]);
        if (a < 0) a += 2 * M_PI;
        const int sector = std::min(3, static_cast<int>(a / (M_PI / 2)));
        agree += sector == s.y;
    }
    CHECK(agree > 0.8 * d.size());
    const Dataset probes = make_sector_manifold(4, 3, 400, 6.0, 3, 4.0, true);
    CHECK(probes.origin() == Origin::ood);
    double id_abs = 0, probe_abs = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        id_abs += std::abs(d[i].x[2]);
        probe_abs += std::abs(probes[i].x[2]);
    }
    CHECK(id_abs / d.size() > 3.0);
    CHECK(probe_abs / d.size() < 1.0);
}

TEST_CASE("linear classifier separates the three-class mixture") {
    const Dataset d = make_synthetic_id(3, 2, 3000, 8.0, 1);
    ClassifierArch arch;
    arch.input_dim = 2;
    arch.num_classes = 3;
    arch.hidden = {};
    ClassifierTrainConfig cfg;
    cfg.epochs = 10;
    cfg.seed = 1;
    const Classifier c = train_classifier(d, arch, cfg);
    CHECK(c.accuracy(d) >= 0.99);
}

}
