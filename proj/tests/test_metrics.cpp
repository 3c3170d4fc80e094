#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "keylabel/metrics.hpp"
#include "support.hpp"

using namespace kpl;

namespace {

template <typename F>
void expect_code(F&& fn, Errc code)
{
    try {
        fn();
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == code);
    }
}

Mask box_mask(int w, int h, int u0, int v0, int u1, int v1)
{
    Mask m(w, h);
    for (int v = v0; v < v1; ++v)
        for (int u = u0; u < u1; ++u)
            m.at(u, v) = 1;
    return m;
}

}  // namespace

TEST_CASE("2D keypoint error: 3-4-5 triangle")
{
    const std::vector<std::optional<Pixel>> a{Pixel(0, 0)};
    const std::vector<std::optional<Pixel>> b{Pixel(3, 4)};
    CHECK(keypoint_error_2d(a, b) == 5.0);
}

TEST_CASE("2D keypoint error agrees with a brute-force mean")
{
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 640);
    std::bernoulli_distribution vis(0.7);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::optional<Pixel>> a;
        std::vector<std::optional<Pixel>> b;
        double sum = 0.0;
        int n = 0;
        for (int k = 0; k < 12; ++k) {
            const Pixel pa(u(rng), u(rng));
            const Pixel pb(u(rng), u(rng));
            const bool va = vis(rng) || k == 0;
            const bool vb = vis(rng) || k == 0;
            a.push_back(va ? std::optional<Pixel>(pa) : std::nullopt);
            b.push_back(vb ? std::optional<Pixel>(pb) : std::nullopt);
            if (va && vb) {
                sum += std::hypot(pa.x() - pb.x(), pa.y() - pb.y());
                ++n;
            }
        }
        CHECK(keypoint_error_2d(a, b) == doctest::Approx(sum / n).epsilon(1e-12));
    }
    const std::vector<std::optional<Pixel>> one{Pixel(1, 1)};
    const std::vector<std::optional<Pixel>> none{std::nullopt};
    const std::vector<std::optional<Pixel>> two{Pixel(1, 1), Pixel(2, 2)};
    expect_code([&] { keypoint_error_2d(one, none); }, Errc::EmptyComparison);
    expect_code([&] { keypoint_error_2d(one, two); }, Errc::LengthMismatch);
}

TEST_CASE("IoU of identical, disjoint and overlapping masks")
{
    const Mask a = box_mask(20, 20, 0, 0, 10, 10);
    CHECK(iou(a, a).value == 1.0);
    CHECK(iou(a, box_mask(20, 20, 10, 10, 20, 20)).value == 0.0);
    // 10x10 vs shifted by 5: intersection 50, union 150.
    CHECK(iou(a, box_mask(20, 20, 5, 0, 15, 10)).value == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    const IouResult empty = iou(Mask(20, 20), Mask(20, 20));
    CHECK(empty.both_empty);
    CHECK(empty.value == 1.0);
    expect_code([&] { iou(a, Mask(20, 21)); }, Errc::DimensionMismatch);
}

TEST_CASE("rotation geodesic matches the quaternion angle oracle")
{
    const Eigen::Matrix3d rz = Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    CHECK(rotation_geodesic(Eigen::Matrix3d::Identity(), rz) == doctest::Approx(M_PI / 2).epsilon(1e-14));
    CHECK(rotation_geodesic(rz, rz) < 1e-12);
    CHECK(radians_to_degrees(M_PI / 2) == doctest::Approx(90.0));

    std::mt19937_64 rng(3);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const auto a = test::random_transform(rng).rotation();
        const auto b = test::random_transform(rng).rotation();
        const auto c = test::random_transform(rng).rotation();
        const double oracle = 2.0 * std::acos(std::min(1.0, std::abs(a.dot(b))));
        const double d_ab = rotation_geodesic(a.toRotationMatrix(), b.toRotationMatrix());
        worst = std::max(worst, std::abs(d_ab - oracle));
        CHECK(std::abs(d_ab - rotation_geodesic(b.toRotationMatrix(), a.toRotationMatrix())) < 1e-12);
        const double d_bc = rotation_geodesic(b.toRotationMatrix(), c.toRotationMatrix());
        const double d_ac = rotation_geodesic(a.toRotationMatrix(), c.toRotationMatrix());
        CHECK(d_ac <= d_ab + d_bc + 1e-12);
    }
    CHECK(worst < 1e-9);

    // Near a half turn the quaternion form stays accurate.
    const Eigen::Matrix3d almost = Eigen::AngleAxisd(M_PI - 1e-7, Eigen::Vector3d::UnitX()).toRotationMatrix();
    CHECK(rotation_geodesic(Eigen::Matrix3d::Identity(), almost) == doctest::Approx(M_PI - 1e-7).epsilon(1e-12));
}

TEST_CASE("sparse model error with and without gauge alignment")
{
    std::mt19937_64 rng(6);
    std::vector<Point3> truth;
    for (int i = 0; i < 6; ++i)
        truth.push_back(test::random_point(rng, 0.1));
    const RigidTransformd g = test::random_transform(rng);
    std::vector<Point3> est;
    for (const auto& p : truth)
        est.push_back(g * p);
    CHECK(sparse_model_error(est, truth, true).rms < 1e-12);
    CHECK(sparse_model_error(est, truth, true).gauge_aligned);
    const auto raw = sparse_model_error(est, truth, false);
    double sq = 0.0;
    std::vector<double> d;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        d.push_back((est[i] - truth[i]).norm());
        sq += d.back() * d.back();
    }
    CHECK(raw.rms == doctest::Approx(std::sqrt(sq / 6.0)));
    std::sort(d.begin(), d.end());
    CHECK(raw.median == doctest::Approx((d[2] + d[3]) / 2));
    CHECK_FALSE(raw.gauge_aligned);

    std::vector<Point3> shorter(truth.begin(), truth.begin() + 4);
    expect_code([&] { sparse_model_error(shorter, truth, false); }, Errc::LengthMismatch);
    expect_code([&] { sparse_model_error(std::vector<Point3>{}, std::vector<Point3>{}, false); },
                Errc::EmptyComparison);
}

TEST_CASE("median")
{
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}
