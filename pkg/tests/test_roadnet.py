import json
import math
import time

import numpy as np
import pytest

from conftest import network_from_rows, segments_csv

from openstreets.roadnet import (
    BadValue,
    DuplicateSegmentId,
    MissingColumn,
    UnknownSegmentId,
    build_dual,
    canonical_json,
    export_geojson,
    ingest_segments,
    snap,
    travel_time,
)


def write_csv(tmp_path, text):
    p = tmp_path / "segments.csv"
    p.write_text(text)
    return str(p)


class TestIngest:
    def test_two_segment_chain(self, two_segment_chain):
        net = two_segment_chain
        assert len(net.node_coords) == 3
        assert len(net.segments) == 2
        assert net.primal.arc_count == 4

    def test_lanes_zero_rejected(self, tmp_path):
        path = write_csv(tmp_path, segments_csv([
            {"segment_id": 1, "from_node": 1, "to_node": 2, "lanes": 0},
        ]))
        with pytest.raises(BadValue) as exc:
            ingest_segments(path)
        assert exc.value.column == "lanes"
        assert exc.value.row == 2

    def test_duplicate_segment_id(self, tmp_path):
        path = write_csv(tmp_path, segments_csv([
            {"segment_id": 1, "from_node": 1, "to_node": 2},
            {"segment_id": 1, "from_node": 2, "to_node": 3},
        ]))
        with pytest.raises(DuplicateSegmentId):
            ingest_segments(path)

    def test_missing_column(self, tmp_path):
        text = segments_csv([{"segment_id": 1, "from_node": 1, "to_node": 2}])
        lines = text.splitlines()
        lines[0] = lines[0].replace("speed_limit_kmh,", "")
        path = write_csv(tmp_path, "\n".join(lines))
        with pytest.raises(MissingColumn):
            ingest_segments(path)

    def test_self_loop_rejected(self, tmp_path):
        path = write_csv(tmp_path, segments_csv([
            {"segment_id": 1, "from_node": 5, "to_node": 5},
        ]))
        with pytest.raises(BadValue):
            ingest_segments(path)

    def test_one_way_single_arc(self):
        net = network_from_rows([
            {"segment_id": 1, "from_node": 1, "to_node": 2, "one_way": 1},
        ])
        assert net.primal.arc_count == 1
        assert net.primal.out_arcs(2) == ()

    def test_city_scale_ingest_under_5s(self, tmp_path):
        # Long two-way chain at the full Manhattan segment count.
        n = 19391
        rows = [
            {"segment_id": i, "from_node": i, "to_node": i + 1,
             "from_lat": 40.0 + i * 1e-5, "to_lat": 40.0 + (i + 1) * 1e-5}
            for i in range(1, n + 1)
        ]
        path = write_csv(tmp_path, segments_csv(rows))
        start = time.monotonic()
        net = ingest_segments(path)
        elapsed = time.monotonic() - start
        assert len(net.segments) == n
        assert elapsed < 5.0


class TestTravelTime:
    def test_unit_arithmetic(self):
        net = network_from_rows([
            {"segment_id": 1, "from_node": 1, "to_node": 2,
             "length_m": 1000, "speed_limit_kmh": 36},
        ])
        assert travel_time(net.segment(1)) == pytest.approx(100.0)

    def test_hand_arithmetic(self):
        net = network_from_rows([
            {"segment_id": 1, "from_node": 1, "to_node": 2,
             "length_m": 804.67, "speed_limit_kmh": 40.2},
        ])
        assert travel_time(net.segment(1)) == pytest.approx(72.06, abs=0.01)

    def test_zero_length_rejected_at_ingestion(self, tmp_path):
        path = write_csv(tmp_path, segments_csv([
            {"segment_id": 1, "from_node": 1, "to_node": 2, "length_m": 0.0},
        ]))
        with pytest.raises(BadValue):
            ingest_segments(path)

    def test_two_way_arcs_share_travel_time(self, two_segment_chain):
        net = two_segment_chain
        fwd = {(a[0], a[1]): a[2] for a in net.primal.out_arcs(1)}
        rev = {(a[0], a[1]): a[2] for a in net.primal.out_arcs(2)}
        assert fwd[(2, 1)] == rev[(1, 1)]


class TestDual:
    def test_two_segments_sharing_node(self, two_segment_chain):
        dual = two_segment_chain.dual
        assert dual.degree(1) == 1
        assert dual.degree(2) == 1
        assert dual.neighbors[1] == ((2, pytest.approx(1.0)),)

    def test_isolated_segment(self):
        net = network_from_rows([
            {"segment_id": 1, "from_node": 1, "to_node": 2},
            {"segment_id": 2, "from_node": 10, "to_node": 11},
        ])
        assert net.dual.degree(2) == 0
        assert net.dual.neighbors[2] == ()

    def test_four_segment_star_is_clique(self):
        # Hand enumeration: all four spokes share the hub, so every pair is
        # dual-adjacent; each has dual degree 3 and weight 1/3.
        net = network_from_rows([
            {"segment_id": i, "from_node": 0, "to_node": i} for i in (1, 2, 3, 4)
        ])
        dual = net.dual
        for sid in (1, 2, 3, 4):
            assert dual.degree(sid) == 3
            for other, w in dual.neighbors[sid]:
                assert other != sid
                assert w == pytest.approx(1.0 / 3.0)

    def test_symmetry_and_weight_sum_bound(self):
        rng = np.random.default_rng(7)
        rows = []
        sid = 1
        for _ in range(40):
            u, v = rng.integers(0, 12, size=2)
            if u == v:
                continue
            rows.append({"segment_id": sid, "from_node": int(u), "to_node": int(v)})
            sid += 1
        net = network_from_rows(rows)
        dual = build_dual(net)
        weights = {}
        for u in dual.order:
            for v, w in dual.neighbors[u]:
                weights[(u, v)] = w
        for (u, v), w in weights.items():
            assert weights[(v, u)] == pytest.approx(w)
        for v in dual.order:
            total = sum(w for _, w in dual.neighbors[v])
            assert total <= math.sqrt(dual.degree(v)) + 1e-12


class TestSnap:
    def test_exact_hit(self, two_segment_chain):
        assert snap(40.701, -74.00, two_segment_chain) == 2

    def test_tie_break_lowest_id(self):
        # Exactly representable coordinates so the tie is exact in floats.
        net = network_from_rows([
            {"segment_id": 1, "from_node": 7, "to_node": 3,
             "from_lat": 40.0, "from_lon": -74.0, "to_lat": 42.0, "to_lon": -74.0},
        ])
        assert snap(41.0, -74.0, net) == 3

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(3)
        rows = []
        for i in range(30):
            rows.append({
                "segment_id": i + 1, "from_node": 2 * i, "to_node": 2 * i + 1,
                "from_lat": 40 + rng.uniform(0, 0.1), "from_lon": -74 + rng.uniform(0, 0.1),
                "to_lat": 40 + rng.uniform(0, 0.1), "to_lon": -74 + rng.uniform(0, 0.1),
            })
        net = network_from_rows(rows)
        for _ in range(100):
            lat = 40 + rng.uniform(0, 0.1)
            lon = -74 + rng.uniform(0, 0.1)
            cos_lat = math.cos(math.radians(lat))
            best = min(
                sorted(net.node_coords),
                key=lambda n: (
                    (net.node_coords[n][0] - lat) ** 2
                    + ((net.node_coords[n][1] - lon) * cos_lat) ** 2,
                    n,
                ),
            )
            assert snap(lat, lon, net) == best


class TestGeoJson:
    def test_empty_overlay_all_null(self, two_segment_chain):
        doc = json.loads(export_geojson(two_segment_chain))
        assert doc["type"] == "FeatureCollection"
        assert all(f["properties"]["overlay"] is None for f in doc["features"])

    def test_overlay_value_attached(self, two_segment_chain):
        doc = json.loads(export_geojson(two_segment_chain, {2: 0.25}))
        by_id = {f["properties"]["segment_id"]: f for f in doc["features"]}
        assert by_id[2]["properties"]["overlay"] == 0.25
        assert by_id[1]["properties"]["overlay"] is None

    def test_unknown_overlay_key(self, two_segment_chain):
        with pytest.raises(UnknownSegmentId):
            export_geojson(two_segment_chain, {99: 1.0})

    def test_round_trip_byte_identical(self, two_segment_chain):
        text = export_geojson(two_segment_chain, {1: 0.125})
        reparsed = canonical_json(json.loads(text))
        assert reparsed == text
