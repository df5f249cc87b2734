#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace arinspect;
using namespace arinspect::damage;
using namespace testsupport;
using geometry::axis_angle;
using sync::FieldKey;

// ---------------------------------------------------------------------------
// Outline measurements

TEST(PolylineLength, Examples) {
    EXPECT_DOUBLE_EQ(polyline_length({{{0, 0, 0}, {1, 0, 0}}, false}), 1.0);
    EXPECT_DOUBLE_EQ(polyline_length({{{0, 0, 0}, {1, 0, 0}, {1, 1, 0}}, false}), 2.0);
    EXPECT_DOUBLE_EQ(polyline_length({{{0, 0, 0}, {3, 4, 0}}, false}), 5.0);
    EXPECT_THROW(polyline_length({{{0, 0, 0}}, false}), ValidationError);
}

TEST(PolygonPerimeter, Examples) {
    EXPECT_DOUBLE_EQ(polygon_perimeter(unit_square()), 4.0);
    EXPECT_DOUBLE_EQ(polygon_perimeter({{{0, 0, 0}, {3, 0, 0}, {3, 4, 0}}, true}), 12.0);
    EXPECT_THROW(polygon_perimeter({{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}, true}), ValidationError);
    EXPECT_THROW(polygon_perimeter({{{0, 0, 0}, {1, 0, 0}, {1, 1, 0}}, false}), ValidationError);
}

TEST(PolygonArea, Examples) {
    EXPECT_NEAR(polygon_area(unit_square()), 1.0, 1e-12);
    EXPECT_NEAR(polygon_area({{{0, 0, 0}, {3, 0, 0}, {3, 4, 0}}, true}), 6.0, 1e-12);
    SegmentationOutline rotated = unit_square();
    const auto r = axis_angle({1, 0, 0}, geometry::deg_to_rad(30.0));
    for (auto& p : rotated.points) p = r * p;
    EXPECT_NEAR(polygon_area(rotated), 1.0, 1e-12);
    EXPECT_NEAR(shoelace_area(rotated.points), 1.0, 1e-12);
}

TEST(PolygonArea, RejectsNonPlanarOutline) {
    SegmentationOutline bent = unit_square();
    bent.points[2].z() = 0.1;
    EXPECT_THROW(polygon_area(bent), ValidationError);
    SegmentationOutline slight = unit_square();
    slight.points[2].z() = 0.01;
    EXPECT_NO_THROW(polygon_area(slight));
}

TEST(PolygonAreaProperty, RigidInvarianceScalingAndShoelaceOracle) {
    std::mt19937_64 rng(21);
    for (int i = 0; i < 300; ++i) {
        // Star-shaped polygon in the z=0 plane, then a random similarity.
        const int n = 3 + static_cast<int>(rng() % 10);
        SegmentationOutline o;
        o.closed = true;
        for (int k = 0; k < n; ++k) {
            const double a = 2 * std::numbers::pi * k / n;
            const double rad = uniform(rng, 0.5, 2.0);
            o.points.push_back({rad * std::cos(a), rad * std::sin(a), 0});
        }
        const double base_area = polygon_area(o);
        const double base_perim = polygon_perimeter(o);
        EXPECT_NEAR(base_area, shoelace_area(o.points), 1e-9);

        const auto q = random_unit_quat(rng);
        const Vec3 t = random_vec(rng, 50);
        const double s = uniform(rng, 0.2, 5.0);
        SegmentationOutline moved = o, scaled = o;
        for (auto& p : moved.points) p = q * p + t;
        for (auto& p : scaled.points) p = s * p;
        EXPECT_NEAR(polygon_area(moved), base_area, 1e-9);
        EXPECT_NEAR(polygon_perimeter(moved), base_perim, 1e-9);
        EXPECT_NEAR(polygon_area(moved), shoelace_area(moved.points), 1e-9);
        EXPECT_NEAR(polygon_area(scaled), s * s * base_area, 1e-9 * s * s);
        EXPECT_NEAR(polygon_perimeter(scaled), s * base_perim, 1e-9 * s);
    }
}

TEST(MakeRecord, Examples) {
    const Date d{2024, 5, 17};
    const auto crack = make_record(1, "crack", {{{0, 0, 0}, {2, 0, 0}}, false}, d);
    EXPECT_DOUBLE_EQ(crack.length, 2.0);
    EXPECT_EQ(crack.area, 0.0);
    EXPECT_EQ(crack.perimeter, 0.0);

    const auto spall = make_record(2, "spalling", unit_square(), d);
    EXPECT_NEAR(spall.area, 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(spall.perimeter, 4.0);
    EXPECT_DOUBLE_EQ(spall.length, std::sqrt(2.0));
    EXPECT_EQ(spall.date.format(), "17/05/24");

    EXPECT_THROW(make_record(3, "spalling", {{{0, 0, 0}, {1, 0, 0}}, true}, d), ValidationError);
    EXPECT_THROW(make_record(3, "crack", unit_square(), d), ValidationError);
    EXPECT_THROW(make_record(3, "spalling", {{{0, 0, 0}, {1, 0, 0}, {1, 1, 0}}, false}, d), ValidationError);
}

TEST(Date, ParseFormatAndCalendar) {
    EXPECT_EQ(Date::parse("29/02/24"), (Date{2024, 2, 29}));
    EXPECT_THROW(Date::parse("31/02/24"), ValidationError);
    EXPECT_THROW(Date::parse("2024-02-01"), ValidationError);
    EXPECT_EQ(Date::from_timestamp_ms(1'700'000'000'000).format(), "14/11/23");
    EXPECT_EQ((Date{2009, 1, 2}).format(), "02/01/09");
}

TEST(RecordCodec, RejectsInvalidFields) {
    auto j = record_to_json(sample_record(5, "spalling", 1.0, 0.5));
    j["area"] = -1.0;
    EXPECT_THROW(record_from_json(j), ParseError);
    j["area"] = 0.5;
    j["date"] = "31/02/24";
    EXPECT_THROW(record_from_json(j), ParseError);
    auto bad = sample_record(5, "spalling", 1.0, 0.5);
    bad.area = -0.1;
    EXPECT_THROW(bad.validate(), ValidationError);
    EXPECT_THROW(parse_record("{"), ParseError);
}

TEST(RecordCodecProperty, RoundTripIsIdentity) {
    std::mt19937_64 rng(22);
    const char* labels[] = {"crack", "spalling", "Spalling", "efflorescence"};
    for (int i = 0; i < 1000; ++i) {
        DamageRecord r;
        r.id = static_cast<std::int64_t>(rng() >> 12);
        r.damage_label = labels[rng() % 4];
        r.length = uniform(rng, 0, 10);
        r.perimeter = uniform(rng, 0, 30);
        r.area = uniform(rng, 0, 5);
        r.date = {2000 + static_cast<int>(rng() % 100), static_cast<unsigned>(1 + rng() % 12),
                  static_cast<unsigned>(1 + rng() % 28)};
        EXPECT_EQ(parse_record(serialize_record(r)), r);
    }
}

// ---------------------------------------------------------------------------
// Ledger

TEST(Ledger, AppendExamples) {
    DamageLedger l;
    l = append_record(l, 7, sample_record(1, "spalling", 1, 0.5), 100);
    EXPECT_EQ(l.size(), 1u);
    l = append_record(l, 7, sample_record(2, "spalling", 1.2, 0.6), 200);
    EXPECT_EQ(l.size(), 2u);
    EXPECT_EQ(l.history(7, "spalling").size(), 2u);
    EXPECT_THROW(l.append(7, sample_record(1, "spalling", 1, 0.5), 300), ValidationError);
    EXPECT_EQ(l.size(), 2u);
}

TEST(Ledger, HistoryExamples) {
    DamageLedger l;
    l.append(3, sample_record(1, "spalling", 1, 0.9), 300);
    l.append(3, sample_record(2, "spalling", 1, 0.5), 100);
    l.append(3, sample_record(3, "crack", 2, 0), 150);
    l.append(3, sample_record(4, "spalling", 1, 0.7), 200);
    l.append(4, sample_record(5, "spalling", 1, 0.1), 50);
    EXPECT_TRUE(l.history(99, "spalling").empty());
    const auto h = l.history(3, "spalling");
    ASSERT_EQ(h.size(), 3u);
    EXPECT_EQ(h[0].timestamp_ms, 100);
    EXPECT_EQ(h[1].timestamp_ms, 200);
    EXPECT_EQ(h[2].timestamp_ms, 300);
    const auto cracks = l.history(3, "crack");
    ASSERT_EQ(cracks.size(), 1u);
    EXPECT_EQ(cracks[0].record.id, 3);
}

TEST(LedgerProperty, AppendsNeverHideHistory) {
    std::mt19937_64 rng(23);
    DamageLedger l;
    for (int i = 1; i <= 300; ++i) {
        const auto loc = static_cast<std::int64_t>(rng() % 3);
        const std::string label = rng() % 2 ? "crack" : "spalling";
        const auto before = l.history(loc, label);
        l.append(loc, sample_record(i, label, 1, 0.1), static_cast<std::int64_t>(rng() % 1000));
        const auto after = l.history(loc, label);
        ASSERT_EQ(after.size(), before.size() + 1);
        for (const auto& e : before) EXPECT_NE(std::find(after.begin(), after.end(), e), after.end());
        for (std::size_t k = 1; k < after.size(); ++k) EXPECT_LE(after[k - 1].timestamp_ms, after[k].timestamp_ms);
    }
}

// ---------------------------------------------------------------------------
// Last-write-wins register

TEST(LwwRegister, GreatestStampWinsAndTieBreaksOnClient) {
    using Reg = sync::LwwRegister<int, int>;
    Reg r;
    EXPECT_TRUE(r.insert({{100, "B", "e1"}, "", true, 1, nullptr}));
    EXPECT_TRUE(r.insert({{100, "A", "e2"}, "", false, 2, nullptr}));
    EXPECT_FALSE(r.insert({{100, "A", "e2"}, "", false, 3, nullptr}));
    EXPECT_EQ(r.winner()->value, 1);
    EXPECT_EQ(r.winner()->stamp.client_id, "B");
}

TEST(LwwRegister, BaseChainsDecideObservation) {
    using Reg = sync::LwwRegister<int, int>;
    Reg r;
    r.insert({{10, "A", "root"}, "", true, 0, nullptr});
    r.insert({{20, "A", "a1"}, "", false, 1, nullptr});
    r.insert({{30, "B", "b1"}, "a1", false, 2, nullptr});
    EXPECT_TRUE(r.concurrent_losses().empty());
    r.insert({{25, "C", "c1"}, "", false, 3, nullptr});
    const auto losses = r.concurrent_losses();
    ASSERT_EQ(losses.size(), 2u);
    EXPECT_EQ(losses[0].loser->stamp.event_id, "a1");
    EXPECT_EQ(losses[0].winner->stamp.event_id, "c1");
    EXPECT_EQ(losses[1].loser->stamp.event_id, "c1");
    EXPECT_EQ(losses[1].winner->stamp.event_id, "b1");
}

// ---------------------------------------------------------------------------
// Sync engine

namespace {

sync::AddMarker add_at(Vec3 world, std::string details = "") {
    sync::AddMarker a;
    a.world_position = world;
    a.metadata = {"crack", std::move(details)};
    return a;
}

sync::EditMarker edit_details(std::int64_t id, std::string details, std::string base = "") {
    return {id, sync::MarkerMetadata{"crack", std::move(details)}, std::nullopt, std::move(base)};
}

}  // namespace

TEST(SyncEngine, MarkerParentingExamples) {
    sync::SyncEngine s("m");
    s.apply_event(make_event("move1", "A", 10, sync::MoveModel{Transform::translation(10, 0, 0), ""}));
    const auto r = s.apply_event(make_event("add1", "A", 20, add_at({11, 2, 0})));
    EXPECT_EQ(r.version, 2u);
    const auto id = std::get<sync::AddMarker>(r.applied.payload).marker_id;
    EXPECT_EQ(id, 1);
    EXPECT_NEAR((s.marker(id)->local_position - Vec3(1, 2, 0)).norm(), 0.0, 1e-12);

    const Vec3 local_before = s.marker(id)->local_position;
    s.apply_event(make_event("move2", "A", 30, sync::MoveModel{Transform::translation(20, 0, 0), "move1"}));
    EXPECT_EQ(s.marker(id)->local_position, local_before);
    EXPECT_NEAR((s.world_position_of(id) - Vec3(21, 2, 0)).norm(), 0.0, 1e-12);

    s.apply_event(make_event("end", "A", 40, sync::EndSession{}));
    EXPECT_TRUE(s.sealed());
    EXPECT_THROW(s.apply_event(make_event("late", "A", 50, add_at({0, 0, 0}))), SealedError);
    EXPECT_EQ(s.version(), 4u);
}

TEST(SyncEngine, WorldPositionUnderRotatedModel) {
    sync::SyncEngine s;
    s.apply_event(make_event("a", "A", 10, add_at({1, 0, 0})));
    EXPECT_NEAR((s.world_position_of(1) - Vec3(1, 0, 0)).norm(), 0.0, 1e-15);
    const Transform t({5, 1, 2}, axis_angle({0, 1, 0}, std::numbers::pi / 2));
    s.apply_event(make_event("m", "A", 20, sync::MoveModel{t, ""}));
    EXPECT_NEAR((s.world_position_of(1) - Vec3(5, 1, 1)).norm(), 0.0, 1e-12);
    EXPECT_NEAR((s.world_position_of(1) - transform_point(homogeneous(t), {1, 0, 0})).norm(), 0.0, 1e-12);
    EXPECT_THROW(s.world_position_of(9), NotFoundError);
}

TEST(SyncEngine, MostRecentWriteKeptInEitherArrivalOrder) {
    for (bool forward : {true, false}) {
        sync::SyncEngine s;
        s.merge(make_event("add", "A", 50, add_at({0, 0, 0}, "initial")));
        const auto e1 = make_event("e1", "A", 100, edit_details(1, "minor"));
        const auto e2 = make_event("e2", "B", 200, edit_details(1, "severe"));
        s.merge(forward ? e1 : e2);
        s.merge(forward ? e2 : e1);
        EXPECT_EQ(s.marker(1)->details, "severe");
        const auto c = s.conflicts();
        ASSERT_EQ(c.size(), 1u);
        EXPECT_EQ(c[0].losing_event.event_id, "e1");
        EXPECT_EQ(c[0].superseded_value["details"], "minor");
        EXPECT_EQ(c[0].winning_event_id, "e2");
        EXPECT_EQ(c[0].target.to_string(), "marker:1/metadata");
    }
}

TEST(SyncEngine, SequentialWriteIsNotAConflict) {
    sync::SyncEngine s;
    s.apply_event(make_event("add", "A", 50, add_at({0, 0, 0})));
    s.apply_event(make_event("e1", "A", 100, edit_details(1, "minor")));
    s.apply_event(make_event("e2", "B", 200, edit_details(1, "severe", "e1")));
    EXPECT_TRUE(s.conflicts().empty());
}

TEST(SyncEngine, EqualTimestampsBreakTiesByClient) {
    sync::SyncEngine s;
    s.merge(make_event("add", "A", 50, add_at({0, 0, 0})));
    s.merge(make_event("eb", "B", 100, edit_details(1, "from B")));
    s.merge(make_event("ea", "A", 100, edit_details(1, "from A")));
    EXPECT_EQ(s.marker(1)->details, "from B");
}

TEST(SyncEngine, ValidationAndDuplicates) {
    sync::SyncEngine s;
    EXPECT_THROW(s.apply_event(make_event("", "A", 1, add_at({0, 0, 0}))), ValidationError);
    EXPECT_THROW(s.apply_event(make_event("x", "A", 0, add_at({0, 0, 0}))), ValidationError);
    EXPECT_THROW(s.apply_event(make_event("x", "A", 1, edit_details(4, "?"))), NotFoundError);
    EXPECT_THROW(s.apply_event(make_event("x", "A", 1, sync::EditMarker{1, std::nullopt, std::nullopt, ""})),
                 ValidationError);
    EXPECT_EQ(s.version(), 0u);
    const auto first = s.apply_event(make_event("x", "A", 1, add_at({0, 0, 0})));
    const auto again = s.apply_event(make_event("x", "A", 1, add_at({0, 0, 0})));
    EXPECT_TRUE(again.duplicate);
    EXPECT_EQ(again.version, first.version);
    EXPECT_EQ(s.markers().size(), 1u);
}

TEST(SyncEngine, SnapshotRestoreIsIdentity) {
    sync::SyncEngine empty("m0");
    EXPECT_EQ(sync::SyncEngine::restore(empty.snapshot()).snapshot(), empty.snapshot());

    sync::SyncEngine s("m1");
    for (int i = 0; i < 3; ++i) s.apply_event(make_event("add" + std::to_string(i), "A", 10 + i, add_at({1.0 * i, 2, 3})));
    s.apply_event(make_event("r1", "A", 20, sync::AppendRecord{1, sample_record(0, "spalling", 1, 0.5)}));
    s.apply_event(make_event("r2", "B", 21, sync::AppendRecord{2, sample_record(0, "crack", 2, 0)}));
    s.merge(make_event("c1", "B", 30, edit_details(1, "b")));
    s.merge(make_event("c2", "A", 31, edit_details(1, "a")));
    const auto snap = s.snapshot();
    const auto back = sync::SyncEngine::restore(Json::parse(snap.dump()));
    EXPECT_EQ(back.snapshot(), snap);
    EXPECT_EQ(back.markers(), s.markers());
    EXPECT_EQ(back.ledger(), s.ledger());
    EXPECT_EQ(back.ledger().size(), 2u);
    EXPECT_EQ(back.conflicts().size(), 1u);

    // A restored replica keeps accepting events with fresh ids.
    auto cont = back;
    const auto r = cont.apply_event(make_event("add9", "C", 40, add_at({0, 0, 0})));
    EXPECT_EQ(std::get<sync::AddMarker>(r.applied.payload).marker_id, 4);
}

TEST(SyncEngine, EventJsonRoundTrip) {
    const std::vector<sync::SessionEvent> events = {
        make_event("a", "A", 1, add_at({1, 2, 3}, "d")),
        make_event("b", "A", 2, edit_details(1, "x", "a")),
        make_event("c", "A", 3, sync::EditMarker{1, std::nullopt, Vec3(0.5, 0, 0), "a"}),
        make_event("d", "A", 4, sync::MoveModel{Transform({1, 0, 0}, axis_angle({0, 0, 1}, 0.4), 1.5), "z"}),
        make_event("e", "A", 5, sync::AppendRecord{3, sample_record(2, "crack", 1, 0)}),
        make_event("f", "A", 6, sync::EndSession{}),
    };
    for (const auto& e : events) {
        const auto j = sync::event_to_json(e);
        EXPECT_EQ(sync::event_to_json(sync::event_from_json(Json::parse(j.dump()))), j);
    }
    EXPECT_THROW(sync::event_from_json(Json::parse(R"({"event_id":"x","client_id":"A","timestamp_ms":1,"kind":"Nope"})")),
                 ParseError);
}

// ---------------------------------------------------------------------------
// Convergence properties

TEST(ConvergenceProperty, ReplicasAgreeForAnyDeliveryOrder) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto h = generate_race(seed, 3, 120);
        std::mt19937_64 rng(seed * 31);
        const auto reference = h.server.snapshot();
        for (int r = 0; r < 3; ++r) {
            const auto replica = replay(h.log, shuffled(h.log.size(), rng));
            ASSERT_EQ(replica.snapshot(), reference) << "seed " << seed << " replica " << r;
        }
        // Duplicate delivery changes nothing.
        auto order = shuffled(h.log.size(), rng);
        order.insert(order.end(), order.begin(), order.begin() + 30);
        EXPECT_EQ(replay(h.log, order).snapshot(), reference);
    }
}

TEST(ConvergenceProperty, LosersLoggedOnceAndWinnersNever) {
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        const auto h = generate_race(seed, 3, 150);
        const auto conflicts = h.server.conflicts();
        std::map<std::string, int> times_lost;
        for (const auto& c : conflicts) {
            ++times_lost[c.losing_event.event_id];
            EXPECT_LE(c.losing_event.timestamp_ms, c.winning_timestamp_ms);
            EXPECT_NE(h.server.head(c.target), c.losing_event.event_id);
        }
        for (const auto& [id, n] : times_lost) EXPECT_EQ(n, 1) << id;

        // Oracle: the winner of each field is its greatest-stamped write, and
        // every write its author never saw is logged as superseded.
        std::map<FieldKey, std::vector<std::size_t>> writes;
        for (std::size_t i = 0; i < h.log.size(); ++i)
            for (const auto& k : fields_of(h.log[i])) writes[k].push_back(i);
        for (const auto& [k, idx] : writes) {
            const auto w = *std::max_element(idx.begin(), idx.end(), [&](auto a, auto b) {
                return h.log[a].stamp() < h.log[b].stamp();
            });
            EXPECT_EQ(h.server.head(k), h.log[w].event_id);
            for (auto i : idx) {
                const bool root = std::holds_alternative<sync::AddMarker>(h.log[i].payload);
                if (i != w && !root && i >= h.seen[w]) {
                    EXPECT_EQ(times_lost[h.log[i].event_id], 1) << "unlogged loss of " << h.log[i].event_id;
                }
            }
        }
    }
}

TEST(ConvergenceProperty, MovesNeverChangeMarkerLocals) {
    const auto h = generate_race(7, 3, 200);
    sync::SyncEngine s;
    std::map<std::int64_t, Vec3> expected;
    for (const auto& e : h.log) {
        s.merge(e);
        if (std::holds_alternative<sync::MoveModel>(e.payload)) {
            for (const auto& [id, m] : s.markers()) EXPECT_EQ(m.local_position, expected.at(id));
        }
        for (const auto& [id, m] : s.markers()) expected[id] = m.local_position;
    }
}
