from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oddownscale.geo import (
    ODFlowTable,
    Point,
    Polygon,
    SpatialIndex,
    TripColumns,
    TripRecord,
    Zoning,
    ZoningError,
    assign_unit,
    assign_unit_scan,
    containment_map,
    filter_and_aggregate,
    ingest_trips,
    point_in_polygon,
    points_in_polygon,
    representative_point,
    write_trips,
)
from shapes import grid_zoning, oracle_assign, oracle_contains, random_polygon, random_zoning, ray_crossings_left

UNIT_SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1)]
L_SHAPE = [(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)]


def square(x0, y0, size=1.0):
    return Polygon.from_coords([(x0, y0), (x0 + size, y0), (x0 + size, y0 + size), (x0, y0 + size)])


def trip(px, py, dx, dy):
    return TripRecord.from_coords(px, py, dx, dy)


class TestPointInPolygon:
    def test_interior_of_square(self):
        assert point_in_polygon(Point(0.5, 0.5), Polygon.from_coords(UNIT_SQUARE))

    def test_outside_bounding_box(self):
        assert not point_in_polygon(Point(2, 0.5), Polygon.from_coords(UNIT_SQUARE))

    def test_l_shape_notch(self):
        poly = Polygon.from_coords(L_SHAPE)
        count, boundary = ray_crossings_left(1.5, 1.5, poly.exterior)
        assert (count, boundary) == (2, False)
        assert not point_in_polygon(Point(1.5, 1.5), poly)
        assert point_in_polygon(Point(0.5, 1.5), poly)

    @pytest.mark.parametrize("p", [(0, 0), (0.5, 0), (1, 0.3), (1, 1), (0, 0.999)])
    def test_boundary_points_are_inside(self, p):
        assert point_in_polygon(Point(*p), Polygon.from_coords(UNIT_SQUARE))

    def test_hole_excludes_interior(self):
        poly = Polygon.from_coords([(0, 0), (4, 0), (4, 4), (0, 4)], [[(1, 1), (3, 1), (3, 3), (1, 3)]])
        assert not point_in_polygon(Point(2, 2), poly)
        assert point_in_polygon(Point(0.5, 2), poly)
        # the hole's edge is part of the polygon's boundary
        assert point_in_polygon(Point(1, 2), poly)

    def test_closing_vertex_is_optional(self):
        a = Polygon.from_coords(UNIT_SQUARE)
        b = Polygon.from_coords(UNIT_SQUARE + [UNIT_SQUARE[0]])
        assert np.array_equal(a.exterior, b.exterior)

    @given(st.integers(0, 10_000))
    def test_matches_exact_ray_oracle(self, seed):
        rng = np.random.default_rng(seed)
        poly = random_polygon(rng, 0.0, 0.0, 1.0)
        pts = rng.uniform(-1.2, 1.2, size=(40, 2))
        for x, y in pts:
            assert point_in_polygon(Point(x, y), poly) == oracle_contains((x, y), poly)

    @given(st.integers(0, 10_000))
    def test_vectorised_path_agrees_with_scalar(self, seed):
        rng = np.random.default_rng(seed)
        poly = random_polygon(rng, 0.0, 0.0, 1.0)
        pts = np.vstack([rng.uniform(-1.2, 1.2, size=(50, 2)), *[r for r in poly.rings]])
        vec = points_in_polygon(pts[:, 0], pts[:, 1], poly)
        scalar = [point_in_polygon(Point(x, y), poly) for x, y in pts]
        assert vec.tolist() == scalar
        # every vertex is on the boundary
        assert vec[50:].all()

    @given(st.integers(0, 10_000))
    def test_representative_point_is_inside(self, seed):
        poly = random_polygon(np.random.default_rng(seed), 3.0, -2.0, 1.5)
        p = representative_point(poly)
        assert point_in_polygon(p, poly)


class TestPolygonValidation:
    def test_too_few_vertices(self):
        with pytest.raises(ZoningError, match="need >= 3"):
            Polygon.from_coords([(0, 0), (1, 1)])

    def test_repeated_vertices_do_not_count(self):
        with pytest.raises(ZoningError):
            Polygon.from_coords([(0, 0), (0, 0), (1, 1), (0, 0)])

    def test_self_intersecting_ring(self):
        with pytest.raises(ZoningError, match="self-intersecting"):
            Polygon.from_coords([(0, 0), (2, 1), (2, 0), (0, 2)])

    def test_zero_area(self):
        with pytest.raises(ZoningError):
            Polygon.from_coords([(0, 0), (1, 1), (2, 2)])

    def test_non_finite(self):
        with pytest.raises(ZoningError, match="non-finite"):
            Polygon.from_coords([(0, 0), (1, np.nan), (1, 1)])

    def test_trip_record_rejects_nan(self):
        with pytest.raises(ValueError):
            TripRecord.from_coords(0, 0, np.inf, 1)


def collection(*features):
    return {"type": "FeatureCollection", "features": list(features)}


def feature(uid, ring, **props):
    return {
        "type": "Feature",
        "properties": {"unit_id": uid, **props},
        "geometry": {"type": "Polygon", "coordinates": [ring]},
    }


class TestZoning:
    def test_geojson_round_trip(self, tmp_path):
        z = grid_zoning(3, 2)
        path = tmp_path / "z.geojson"
        path.write_text(json.dumps(z.to_geojson()))
        back = Zoning.from_geojson(path, "unit_id", level="g")
        assert back.unit_ids == z.unit_ids
        for uid in z.unit_ids:
            assert np.array_equal(back.units[uid][0].exterior, z.units[uid][0].exterior)

    def test_duplicate_ids_merge_into_multipolygon(self):
        doc = collection(feature("A", UNIT_SQUARE), feature("A", [(5, 5), (6, 5), (6, 6), (5, 6)]))
        z = Zoning.from_geojson(doc, "unit_id")
        assert len(z) == 1 and len(z.units["A"]) == 2
        index = SpatialIndex(z)
        assert assign_unit(index, z, Point(5.5, 5.5)) == "A"

    def test_multipolygon_geometry(self):
        doc = collection({
            "type": "Feature",
            "properties": {"unit_id": "M"},
            "geometry": {"type": "MultiPolygon", "coordinates": [[UNIT_SQUARE], [[(3, 3), (4, 3), (4, 4)]]]},
        })
        z = Zoning.from_geojson(doc, "unit_id")
        assert len(z.units["M"]) == 2

    def test_integer_ids_become_strings(self):
        z = Zoning.from_geojson(collection(feature(7, UNIT_SQUARE)), "unit_id")
        assert z.unit_ids == ["7"]

    def test_missing_id_property(self):
        with pytest.raises(ZoningError, match="lacks id property"):
            Zoning.from_geojson(collection(feature("A", UNIT_SQUARE)), "zone_id")

    def test_residential_flag(self):
        doc = collection(feature("A", UNIT_SQUARE, residential=False), feature("B", [(2, 0), (3, 0), (3, 1)]))
        z = Zoning.from_geojson(doc, "unit_id")
        assert z.residential == {"A": False, "B": True}

    def test_invalid_polygon_names_unit(self):
        with pytest.raises(ZoningError, match="'bad'"):
            Zoning.from_geojson(collection(feature("bad", [(0, 0), (1, 1), (1, 0), (0, 1)])), "unit_id")

    def test_empty_zoning(self):
        with pytest.raises(ZoningError):
            Zoning("z", {})


class TestAssignUnit:
    def setup_method(self):
        self.zoning = Zoning("z", {"A": [square(0, 0)], "B": [square(3, 0)]})
        self.index = SpatialIndex(self.zoning)

    def test_inside_b(self):
        assert assign_unit(self.index, self.zoning, Point(3.5, 0.5)) == "B"

    def test_outside_everything(self):
        assert assign_unit(self.index, self.zoning, Point(2.0, 0.5)) is None
        assert assign_unit(self.index, self.zoning, Point(-50, 40)) is None

    @pytest.mark.parametrize("order", [("A", "B"), ("B", "A")])
    def test_shared_edge_goes_to_first_in_catalog(self, order):
        polys = {"A": [square(0, 0)], "B": [square(1, 0)]}
        z = Zoning("z", {k: polys[k] for k in order})
        index = SpatialIndex(z)
        for p in (Point(1.0, 0.5), Point(1.0, 0.0), Point(1.0, 1.0)):
            assert assign_unit(index, z, p) == order[0]
            assert assign_unit_scan(z, p) == order[0]

    @given(st.integers(0, 10_000), st.integers(1, 50))
    def test_index_matches_scan(self, seed, n_units):
        rng = np.random.default_rng(seed)
        z = random_zoning(rng, n_units)
        index = SpatialIndex(z)
        pts = rng.uniform(-1, 11, size=(200, 2))
        many = index.assign_many(pts[:, 0], pts[:, 1])
        ids = z.unit_ids
        for k, (x, y) in enumerate(pts):
            p = Point(x, y)
            expected = assign_unit_scan(z, p)
            assert assign_unit(index, z, p) == expected
            assert (ids[many[k]] if many[k] >= 0 else None) == expected

    @given(st.integers(0, 10_000))
    def test_candidates_are_a_superset(self, seed):
        rng = np.random.default_rng(seed)
        z = random_zoning(rng, 25)
        index = SpatialIndex(z)
        ids = z.unit_ids
        for x, y in rng.uniform(-1, 11, size=(100, 2)):
            cands = set(index.candidates(Point(x, y)))
            for pos, uid in enumerate(ids):
                if any(point_in_polygon(Point(x, y), poly) for poly in z.units[uid]):
                    assert pos in cands

    def test_scan_matches_exact_oracle(self):
        rng = np.random.default_rng(4)
        z = random_zoning(rng, 20)
        for x, y in rng.uniform(-1, 11, size=(300, 2)):
            assert assign_unit_scan(z, Point(x, y)) == oracle_assign(z, (x, y))


class TestODFlowTable:
    def test_rejects_negative_counts(self):
        with pytest.raises(ValueError):
            ODFlowTable("z", {("A", "B"): -1})

    def test_csv_round_trip(self, tmp_path):
        t = ODFlowTable("z", {("A", "B"): 3, ("B", "A"): 1, ("A", "A"): 7})
        t.to_csv(tmp_path / "f.csv")
        assert (tmp_path / "f.csv").read_text().splitlines()[0] == "origin_id,destination_id,count"
        assert ODFlowTable.from_csv(tmp_path / "f.csv", "z") == t
        assert t.total_trips == 11

    @given(st.dictionaries(st.tuples(st.sampled_from("ABC"), st.sampled_from("ABC")), st.integers(0, 50)),
           st.dictionaries(st.tuples(st.sampled_from("ABC"), st.sampled_from("ABC")), st.integers(0, 50)))
    def test_merge_is_commutative_and_additive(self, a, b):
        ta, tb = ODFlowTable("z", dict(a)), ODFlowTable("z", dict(b))
        assert ta.merge(tb) == tb.merge(ta)
        assert ta.merge(tb).total_trips == ta.total_trips + tb.total_trips


class TestFilterAndAggregate:
    def setup_method(self):
        self.zoning = Zoning("z", {"A": [square(0, 0)], "B": [square(3, 0)]})

    def test_three_trips_a_to_b(self):
        trips = [trip(0.5, 0.5, 3.5, 0.5)] * 3
        table, dropped = filter_and_aggregate(trips, self.zoning)
        assert table.counts == {("A", "B"): 3} and dropped == 0

    def test_pickup_outside_is_dropped(self):
        table, dropped = filter_and_aggregate([trip(10, 10, 3.5, 0.5)], self.zoning)
        assert len(table) == 0 and dropped == 1

    def test_dropoff_outside_is_dropped(self):
        table, dropped = filter_and_aggregate([trip(0.5, 0.5, -3, 0), trip(0.2, 0.2, 0.3, 0.3)], self.zoning)
        assert table.counts == {("A", "A"): 1} and dropped == 1

    @given(st.integers(0, 10_000), st.integers(1, 7))
    def test_conservation_and_chunking(self, seed, chunk):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-1, 5, size=(60, 4))
        trips = [trip(*row) for row in pts]
        table, dropped = filter_and_aggregate(trips, self.zoning, chunk_size=chunk)
        assert table.total_trips + dropped == len(trips)
        whole, _ = filter_and_aggregate(trips, self.zoning, chunk_size=1000)
        assert table == whole

    def test_nesting_consistency(self):
        coarse = grid_zoning(3, 3, size=2.0, prefix="c")
        fine = grid_zoning(6, 6, size=1.0, prefix="f")
        mapping = containment_map(fine, coarse)
        assert set(mapping.values()) == set(coarse.unit_ids)
        rng = np.random.default_rng(1)
        trips = [trip(*row) for row in rng.uniform(-0.5, 6.5, size=(2000, 4))]
        fine_t, fine_drop = filter_and_aggregate(trips, fine)
        coarse_t, coarse_drop = filter_and_aggregate(trips, coarse)
        assert fine_drop == coarse_drop
        assert fine_t.coarsen(mapping, "c") == coarse_t


class TestIngest:
    def write(self, path, lines):
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_counts_malformed_rows_separately(self, tmp_path):
        z = Zoning("z", {"A": [square(0, 0)], "B": [square(3, 0)]})
        path = self.write(tmp_path / "t.csv", [
            "pickup_x,pickup_y,dropoff_x,dropoff_y",
            "0.5,0.5,3.5,0.5",
            "0.5,0.5,3.5",
            "abc,0.5,3.5,0.5",
            "nan,0.5,3.5,0.5",
            "",
            "9,9,3.5,0.5",
        ])
        s = ingest_trips(path, z)
        assert (s.rows, s.retained, s.dropped, s.malformed) == (5, 1, 1, 3)

    def test_custom_columns_and_delimiter(self, tmp_path):
        z = Zoning("z", {"A": [square(0, 0)]})
        path = self.write(tmp_path / "t.tsv", ["id\tdx\tdy\tpx\tpy", "1\t0.1\t0.2\t0.3\t0.4"])
        s = ingest_trips(path, z, TripColumns("px", "py", "dx", "dy"), delimiter="\t")
        assert s.table.counts == {("A", "A"): 1}

    def test_missing_column_is_an_error(self, tmp_path):
        path = self.write(tmp_path / "t.csv", ["pickup_x,pickup_y,dropoff_x", "1,2,3"])
        with pytest.raises(ValueError, match="dropoff_y"):
            ingest_trips(path, grid_zoning(1, 1))

    def test_empty_file_needs_header(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("")
        with pytest.raises(ValueError, match="header"):
            ingest_trips(path, grid_zoning(1, 1))

    def test_several_zonings_in_one_pass(self, tmp_path):
        coarse = grid_zoning(2, 2, size=2.0, prefix="c")
        fine = grid_zoning(4, 4, size=1.0, prefix="f")
        rng = np.random.default_rng(3)
        trips = [trip(*row) for row in rng.uniform(-0.5, 4.5, size=(500, 4))]
        write_trips(tmp_path / "t.csv", trips)
        sc, sf = ingest_trips(tmp_path / "t.csv", [coarse, fine], chunk_size=64)
        assert sf.table.coarsen(containment_map(fine, coarse), "c") == sc.table
        assert sc.dropped == sf.dropped
        direct, dropped = filter_and_aggregate(trips, fine)
        assert direct == sf.table and dropped == sf.dropped

    @given(st.lists(
        st.one_of(
            st.tuples(*[st.floats(-1, 3, allow_nan=False)] * 4).map(lambda t: ",".join(repr(v) for v in t)),
            st.sampled_from(["", "1,2", "x,y,z,w", "inf,0,0,0", "1,2,3,4,5", "0.5,0.5,,0.5"]),
        ),
        max_size=60,
    ))
    def test_conservation_on_fuzzed_files(self, tmp_path_factory, lines):
        z = grid_zoning(2, 1)
        path = tmp_path_factory.mktemp("fuzz") / "t.csv"
        path.write_text("pickup_x,pickup_y,dropoff_x,dropoff_y\n" + "\n".join(lines) + "\n")
        s = ingest_trips(path, z, chunk_size=5)
        assert s.retained + s.dropped + s.malformed == s.rows
        assert s.rows == sum(1 for line in lines if line)
