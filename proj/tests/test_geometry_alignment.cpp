#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

using namespace arinspect;
using namespace arinspect::geometry;
using namespace testsupport;

namespace {

void expect_vec_near(const Vec3& a, const Vec3& b, double tol = 1e-12) {
    EXPECT_NEAR((a - b).norm(), 0.0, tol) << "got (" << a.transpose() << ") want (" << b.transpose() << ")";
}

}  // namespace

// ---------------------------------------------------------------------------
// Transforms

TEST(Transform, ComposeIdentityIsNeutral) {
    std::mt19937_64 rng(1);
    const auto t = random_transform(rng);
    const auto c = compose(Transform::identity(), t);
    expect_vec_near(c.translation(), t.translation());
    EXPECT_NEAR(rotation_angle_between(c.rotation(), t.rotation()), 0.0, 1e-9);
    EXPECT_DOUBLE_EQ(c.scale(), t.scale());
}

TEST(Transform, ComposeTranslationsAdd) {
    const auto c = compose(Transform::translation(10, 0, 0), Transform::translation(1, 2, 0));
    expect_vec_near(c.translation(), {11, 2, 0});
}

TEST(Transform, ComposeScaleCarriesChildTranslation) {
    const auto c = compose(Transform::scaling(2), Transform::translation(1, 2, 0));
    const auto oracle = mul(homogeneous(Transform::scaling(2)), homogeneous(Transform::translation(1, 2, 0)));
    expect_vec_near(c.translation(), {2, 4, 0});
    EXPECT_LT(max_abs_diff(homogeneous(c), oracle), 1e-12);
}

TEST(Transform, InverseExamples) {
    EXPECT_EQ(inverse(Transform::identity()), Transform::identity());
    expect_vec_near(inverse(Transform::translation(3, 0, 0)).translation(), {-3, 0, 0});

    const Transform t({10, 0, 0}, Quat::Identity(), 2.0);
    const auto round = compose(t, inverse(t));
    EXPECT_LT(max_abs_diff(homogeneous(round), homogeneous(Transform::identity())), 1e-12);
    EXPECT_LT(max_abs_diff(homogeneous(inverse(t)), invert(homogeneous(t))), 1e-12);
}

TEST(Transform, ToModelCoordinatesExamples) {
    expect_vec_near(to_model_coordinates({11, 2, 0}, Transform::translation(10, 0, 0)), {1, 2, 0});
    const Transform rotated({4, 5, 6}, axis_angle({0, 1, 0}, 1.1), 3.0);
    expect_vec_near(to_model_coordinates({4, 5, 6}, rotated), {0, 0, 0});
    const Transform scaled({10, 0, 0}, Quat::Identity(), 2.0);
    expect_vec_near(to_model_coordinates({12, 4, 0}, scaled), {1, 2, 0});
    expect_vec_near(transform_point(invert(homogeneous(scaled)), {12, 4, 0}), {1, 2, 0});
}

TEST(Transform, ToWorldCoordinatesExamples) {
    const Transform t({4, 5, 6}, axis_angle({1, 1, 0}, 0.3), 1.5);
    expect_vec_near(to_world_coordinates({0, 0, 0}, t), {4, 5, 6});
    expect_vec_near(to_world_coordinates({1, 2, 0}, Transform::translation(10, 0, 0)), {11, 2, 0});
    const Transform scaled({10, 0, 0}, Quat::Identity(), 2.0);
    expect_vec_near(to_world_coordinates({1, 2, 0}, scaled), {12, 4, 0});
    expect_vec_near(transform_point(homogeneous(scaled), {1, 2, 0}), {12, 4, 0});
}

TEST(Transform, RejectsBadScale) {
    EXPECT_THROW(Transform::scaling(0.0), ValidationError);
    EXPECT_THROW(Transform::scaling(-1.0), ValidationError);
    EXPECT_THROW(Transform::scaling(std::nan("")), ValidationError);
    EXPECT_THROW(Pose({0, 0, 0}, Quat(0, 0, 0, 0)), ValidationError);
    EXPECT_THROW(Pose({std::nan(""), 0, 0}, Quat::Identity()), ValidationError);
}

TEST(TransformProperty, RoundTripAndMatrixOracle) {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 2000; ++i) {
        const auto t = random_transform(rng);
        const Vec3 p = random_vec(rng, 50.0);
        const Vec3 back = to_world_coordinates(to_model_coordinates(p, t), t);
        EXPECT_LT((back - p).norm(), 1e-9);
        EXPECT_LT((to_world_coordinates(p, t) - transform_point(homogeneous(t), p)).norm(), 1e-9);
    }
}

TEST(TransformProperty, ComposeIsAssociative) {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 500; ++i) {
        const auto a = random_transform(rng), b = random_transform(rng), c = random_transform(rng);
        const auto l = homogeneous(compose(compose(a, b), c));
        const auto r = homogeneous(compose(a, compose(b, c)));
        // Entries grow with scale^3 * translation; compare relative to magnitude.
        double mag = 1.0;
        for (const auto& row : l)
            for (double v : row) mag = std::max(mag, std::abs(v));
        EXPECT_LT(max_abs_diff(l, r) / mag, 1e-12);
    }
}

// ---------------------------------------------------------------------------
// Rotation metric and offsets

TEST(RotationAngle, Examples) {
    EXPECT_EQ(rotation_angle_between(Quat::Identity(), Quat::Identity()), 0.0);
    EXPECT_NEAR(rotation_angle_between(Quat::Identity(), quat_wxyz(0, 0, 0, 1)), 180.0, 1e-12);
    const Quat q = axis_angle({0.3, -1, 2}, 0.7);
    const Quat neg(-q.w(), -q.x(), -q.y(), -q.z());
    EXPECT_EQ(rotation_angle_between(q, neg), 0.0);
    const double h = std::sqrt(0.5);
    EXPECT_NEAR(rotation_angle_between(Quat::Identity(), quat_wxyz(h, h, 0, 0)), 90.0, 1e-9);
    EXPECT_NEAR(trace_angle_deg(Quat::Identity(), quat_wxyz(h, h, 0, 0)), 90.0, 1e-9);
}

TEST(RotationAngle, RejectsNonUnit) {
    EXPECT_THROW(rotation_angle_between(Quat::Identity(), quat_wxyz(0.5, 0, 0, 0)), ValidationError);
}

TEST(RotationAngleProperty, SymmetricAndMatchesTraceOracle) {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 2000; ++i) {
        const auto a = random_unit_quat(rng), b = random_unit_quat(rng);
        const double ab = rotation_angle_between(a, b);
        EXPECT_EQ(ab, rotation_angle_between(b, a));
        EXPECT_GE(ab, 0.0);
        EXPECT_LE(ab, 180.0);
        EXPECT_NEAR(ab, trace_angle_deg(a, b), 1e-6);
    }
}

TEST(TranslationOffset, Examples) {
    EXPECT_EQ(translation_offset({0, 0, 0}, {0, 0, 0}), 0.0);
    EXPECT_DOUBLE_EQ(translation_offset({0, 0, 0}, {3, 4, 0}), 5.0);
    EXPECT_NEAR(translation_offset({0, 0, 0}, {0.05, 0, 0.12}), 0.13, 1e-12);
}

// ---------------------------------------------------------------------------
// Field of view

TEST(Fov, FootprintsAtInspectionDistances) {
    const FovSpec hl2{43.0, 29.0};
    const auto f15 = fov_footprint(hl2, 15.0);
    EXPECT_NEAR(f15.width_m, 11.82, 0.005);
    EXPECT_NEAR(f15.height_m, 7.76, 0.005);
    const auto f20 = fov_footprint(hl2, 20.0);
    EXPECT_NEAR(f20.width_m, 15.756, 0.0005);
    EXPECT_NEAR(f20.height_m, 10.34, 0.005);
    const auto f0 = fov_footprint(hl2, 0.0);
    EXPECT_EQ(f0.width_m, 0.0);
    EXPECT_EQ(f0.height_m, 0.0);
}

TEST(Fov, LinearInDistanceAndValidated) {
    const FovSpec fov{60.0, 40.0};
    const auto a = fov_footprint(fov, 3.0), b = fov_footprint(fov, 12.0);
    EXPECT_NEAR(b.width_m, 4.0 * a.width_m, 1e-12);
    EXPECT_NEAR(b.height_m, 4.0 * a.height_m, 1e-12);
    EXPECT_THROW(fov_footprint(fov, -1.0), ValidationError);
    EXPECT_THROW(fov_footprint({180.0, 20.0}, 1.0), ValidationError);
    EXPECT_THROW(fov_footprint({0.0, 20.0}, 1.0), ValidationError);
}

// ---------------------------------------------------------------------------
// Alignment statistics

using namespace arinspect::alignment;

TEST(TrialErrors, Examples) {
    const Pose p({1, 2, 3}, Quat::Identity());
    const auto same = compute_trial_errors({2.0, 1, p, p});
    EXPECT_EQ(same.translation_cm, 0.0);
    EXPECT_EQ(same.rotation_deg, 0.0);

    const auto shifted = compute_trial_errors({2.0, 1, Pose({0, 0, 0}, Quat::Identity()),
                                               Pose({0.05, 0, 0.12}, Quat::Identity())});
    EXPECT_NEAR(shifted.translation_cm, 13.0, 1e-9);
    EXPECT_EQ(shifted.rotation_deg, 0.0);

    const auto turned = compute_trial_errors(
        {2.0, 1, Pose({0, 0, 0}, Quat::Identity()), Pose({0, 0, 0}, axis_angle({0, 0, 1}, std::numbers::pi / 2))});
    EXPECT_EQ(turned.translation_cm, 0.0);
    EXPECT_NEAR(turned.rotation_deg, 90.0, 1e-9);
    EXPECT_THROW(compute_trial_errors({0.0, 1, p, p}), ValidationError);
}

TEST(TrialErrorsProperty, SymmetricUnderPoseSwap) {
    std::mt19937_64 rng(10);
    for (int i = 0; i < 300; ++i) {
        const Pose a(random_vec(rng, 5), random_unit_quat(rng)), b(random_vec(rng, 5), random_unit_quat(rng));
        const auto x = compute_trial_errors({3.0, i, a, b});
        const auto y = compute_trial_errors({3.0, i, b, a});
        EXPECT_EQ(x.translation_cm, y.translation_cm);
        EXPECT_EQ(x.rotation_deg, y.rotation_deg);
    }
}

TEST(Percentile, Examples) {
    const std::vector<double> v = {10, 20, 30, 40, 50};
    EXPECT_DOUBLE_EQ(percentile(v, 50), 30.0);
    EXPECT_DOUBLE_EQ(percentile(v, 95), 48.0);
    for (double p : {0.0, 37.0, 100.0}) EXPECT_EQ(percentile(std::vector<double>{7.0}, p), 7.0);
    EXPECT_THROW(percentile(std::vector<double>{}, 50), ValidationError);
    EXPECT_THROW(percentile(v, 101), ValidationError);
}

TEST(Rmse, Examples) {
    EXPECT_DOUBLE_EQ(rmse(std::vector<double>{5, 5, 5}), 5.0);
    EXPECT_NEAR(rmse(std::vector<double>{3, 4}), 3.5355, 5e-5);
    EXPECT_EQ(rmse(std::vector<double>{0}), 0.0);
    EXPECT_THROW(rmse(std::vector<double>{}), ValidationError);
}

TEST(StatsProperty, AgreesWithBruteForce) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 300; ++i) {
        const auto v = random_dataset(rng, 1000);
        for (double p : {0.0, 5.0, 25.0, 50.0, 75.0, 95.0, 99.0, 100.0, uniform(rng, 0, 100)}) {
            EXPECT_NEAR(percentile(v, p), brute_percentile(v, p), 1e-9);
        }
        EXPECT_NEAR(rmse(v), brute_rmse(v), 1e-9);
        const auto s = summarize(v);
        EXPECT_LE(s.p50, s.p95);
        EXPECT_GE(s.rmse, 0.0);
        const auto c = cdf(v);
        for (std::size_t k = 1; k < c.size(); ++k) {
            EXPECT_LE(c[k - 1].fraction, c[k].fraction);
            EXPECT_LE(c[k - 1].value, c[k].value);
        }
        EXPECT_EQ(c.back().fraction, 1.0);
        const double tol = uniform(rng, 0, 60);
        const auto within = std::count_if(v.begin(), v.end(), [&](double x) { return x <= tol; });
        EXPECT_DOUBLE_EQ(tolerance_compliance(v, tol), static_cast<double>(within) / static_cast<double>(v.size()));
    }
}

TEST(SummarizeByDistance, Examples) {
    const Pose origin({0, 0, 0}, Quat::Identity());
    std::vector<AlignmentTrial> trials = {
        {2.0, 1, origin, Pose({0.10, 0, 0}, Quat::Identity())},
        {2.0, 2, origin, Pose({0, 0.20, 0}, Quat::Identity())},
        {3.0, 1, origin, Pose({0, 0, 0.07}, axis_angle({0, 1, 0}, 0.1))},
    };
    const auto s = summarize_by_distance(trials);
    ASSERT_EQ(s.size(), 2u);
    const auto& two = s.at(2.0).translation_cm;
    EXPECT_NEAR(two.rmse, 15.81, 0.005);
    EXPECT_NEAR(two.p50, 15.0, 1e-9);
    EXPECT_NEAR(two.p95, 19.5, 1e-9);
    EXPECT_EQ(two.n, 2u);
    const auto& three = s.at(3.0);
    EXPECT_NEAR(three.translation_cm.rmse, 7.0, 1e-9);
    EXPECT_EQ(three.translation_cm.rmse, three.translation_cm.p50);
    EXPECT_EQ(three.translation_cm.p50, three.translation_cm.p95);
    EXPECT_NEAR(three.rotation_deg.p50, rad_to_deg(0.1), 1e-9);
    EXPECT_THROW(summarize_by_distance(std::vector<AlignmentTrial>{}), ValidationError);
}

TEST(Cdf, Examples) {
    const auto one = cdf(std::vector<double>{5});
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0].value, 5.0);
    EXPECT_EQ(one[0].fraction, 1.0);
    const auto four = cdf(std::vector<double>{3, 1, 4, 2});
    ASSERT_EQ(four.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(four[i].value, static_cast<double>(i + 1));
        EXPECT_EQ(four[i].fraction, 0.25 * static_cast<double>(i + 1));
    }
    EXPECT_THROW(cdf(std::vector<double>{}), ValidationError);
}

TEST(Compliance, Examples) {
    const std::vector<double> v = {1, 2, 3};
    EXPECT_EQ(tolerance_compliance(v, 3), 1.0);
    EXPECT_EQ(tolerance_compliance(v, 0), 0.0);
    EXPECT_EQ(tolerance_compliance(std::vector<double>{10, 20, 30, 40}, 25), 0.5);
    EXPECT_THROW(tolerance_compliance(v, -1), ValidationError);
}

TEST(Compliance, FrozenDatasetMatchesReportedTolerances) {
    const auto& v = frozen_translation_errors();
    EXPECT_NEAR(percentile(v, 50), 13.0, 1e-9);
    EXPECT_NEAR(percentile(v, 75), 20.01, 1e-9);
    EXPECT_NEAR(percentile(v, 95), 28.35, 1e-9);
    EXPECT_DOUBLE_EQ(tolerance_compliance(v, 20), 0.75);
    EXPECT_DOUBLE_EQ(tolerance_compliance(v, 28), 0.95);
}

// ---------------------------------------------------------------------------
// Trial log

TEST(TrialLog, LoadsRecordsAndSkipsBlankLines) {
    std::stringstream empty;
    const auto none = load_trials(empty);
    EXPECT_TRUE(none.trials.empty());
    ASSERT_EQ(none.warnings.size(), 1u);

    const AlignmentTrial t{4.0, 3, Pose({1, 2, 3}, axis_angle({0, 0, 1}, 0.2)), Pose({1, 2, 3.1}, Quat::Identity())};
    std::stringstream in;
    in << "\n" << trial_to_json(t).dump() << "\n  \n";
    const auto one = load_trials(in);
    ASSERT_EQ(one.trials.size(), 1u);
    EXPECT_EQ(one.trials[0].run_id, 3);
    EXPECT_EQ(one.trials[0].model_pose, t.model_pose);
    EXPECT_TRUE(one.warnings.empty());
}

TEST(TrialLog, RejectsBadRecordsNamingTheLine) {
    std::stringstream in;
    in << R"({"distance_m":2,"run_id":1,"model_pose":{"pos":[0,0,0],"quat":[1,0,0,0]},"structure_pose":{"pos":[0,0,0],"quat":[1,0,0,0]}})"
       << "\n"
       << R"({"distance_m":2,"run_id":2,"model_pose":{"pos":[0,0,0],"quat":[0.5,0,0,0]},"structure_pose":{"pos":[0,0,0],"quat":[1,0,0,0]}})"
       << "\n";
    try {
        load_trials(in);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
    std::stringstream garbage("{not json\n");
    EXPECT_THROW(load_trials(garbage), ParseError);
}

TEST(Report, TableShapeForFourDistances) {
    std::vector<AlignmentTrial> trials;
    for (double d : {2.0, 3.0, 4.0, 5.0})
        for (int run = 1; run <= 5; ++run)
            trials.push_back({d, run, Pose({0, 0, 0}, Quat::Identity()), Pose({0.01 * run * d, 0, 0}, Quat::Identity())});
    const auto s = summarize_by_distance(trials);
    const auto rows = report_rows(s);
    ASSERT_EQ(rows.size(), 4u);
    for (const auto& r : rows) EXPECT_EQ(r.size(), report_columns().size());
    EXPECT_EQ(report_columns().size(), 7u);

    std::ostringstream csv;
    write_report_csv(csv, s);
    std::istringstream lines(csv.str());
    std::string header;
    std::getline(lines, header);
    EXPECT_EQ(header, "Distance,Trans_RMSE,Trans_Median,Trans_P95,Rot_RMSE,Rot_Median,Rot_P95");
    const auto j = report_to_json(s);
    ASSERT_EQ(j.size(), 4u);
    EXPECT_EQ(j[0]["Distance"], 2.0);
}

TEST(JsonIo, PoseRoundTripIsExact) {
    std::mt19937_64 rng(12);
    for (int i = 0; i < 100; ++i) {
        const Pose p(random_vec(rng, 10), random_unit_quat(rng));
        const auto back = json_io::pose_from_json(Json::parse(json_io::pose_to_json(p).dump()), "pose");
        EXPECT_EQ(back.position(), p.position());
        EXPECT_NEAR(rotation_angle_between(back.orientation(), p.orientation()), 0.0, 1e-9);
    }
    EXPECT_THROW(json_io::pose_from_json(Json::parse(R"({"pos":[0,0],"quat":[1,0,0,0]})"), "pose"), ParseError);
}
