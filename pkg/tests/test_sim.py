import math

import numpy as np
import pytest

from gridmotion.grid import GridSpec
from gridmotion.sim import (
    LABEL_DYNAMIC,
    LABEL_STATIC,
    MeasurementGrid,
    Scenario,
    ScenarioObject,
    canned_scenarios,
    ground_truth,
    load_scenario,
    object_mask,
    render_measurement,
    step_world,
)

SPEC = GridSpec(32, 1.0)


def wall(x=0.0, y=5.0, length=10.0, width=1.0):
    return ScenarioObject("wall", length, width, x, y, motion="stationary")


class TestStepWorld:
    def test_stationary_wall_unchanged(self):
        sc = Scenario([wall()], seed=0)
        step_world(sc, 0.5)
        assert (sc.objects[0].x, sc.objects[0].y) == (0.0, 5.0)

    def test_vehicle_kinematics(self):
        veh = ScenarioObject("vehicle", 4.4, 1.8, 0.0, 0.0, heading=0.0, speed=10.0)
        sc = Scenario([veh], seed=0)
        step_world(sc, 0.1)
        assert veh.x == pytest.approx(1.0)
        assert veh.y == pytest.approx(0.0)

    def test_waypoint_object_stops_at_end(self):
        obj = ScenarioObject("pedestrian", 0.7, 0.7, 0.0, 0.0, speed=1.0,
                             motion="waypoints", waypoints=[(2.0, 0.0)])
        sc = Scenario([obj], seed=0)
        for _ in range(40):
            step_world(sc, 0.1)
        assert (obj.x, obj.y) == pytest.approx((2.0, 0.0))
        assert not obj.is_moving()

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError):
            step_world(Scenario([], seed=0), 0.0)

    def test_clutter_respawns_deterministically(self):
        def run():
            sc = Scenario([], seed=9, extent=32.0)
            sc.clutter.count = 0
            sc.objects.append(sc._spawn_clutter())
            xs = []
            for _ in range(30):
                step_world(sc, 0.1)
                xs.append((sc.objects[0].x, sc.objects[0].y))
            return xs

        assert run() == run()


class TestRenderMeasurement:
    def test_empty_world_all_observed_cells_free(self):
        sc = Scenario([], seed=0)
        meas = render_measurement(sc, SPEC, beams=360)
        # every cell the beams touch is free; corners beyond max range stay 0.5
        observed = meas.l_occ != 0.5
        assert observed.sum() > 0.9 * 32 * 32
        assert np.all(meas.l_occ[observed] == 0.15)
        assert np.all(meas.l_free[observed] == 0.85)

    def test_wall_casts_occlusion_shadow(self):
        sc = Scenario([wall(y=5.0)], seed=0)
        meas = render_measurement(sc, SPEC, beams=720)
        # straight above the sensor: hit at y≈5, unknown behind, free before
        col = 16  # x in [0,1): directly above center
        rows_hit = np.where(meas.l_occ[:, col] == 0.85)[0]
        assert len(rows_hit) >= 1
        assert np.all(rows_hit >= 20)  # y=4.5..5.5 -> rows 20/21
        behind = meas.l_occ[rows_hit.max() + 1:, col]
        assert np.all(behind == 0.5)
        before = meas.l_occ[17:rows_hit.min(), col]
        assert np.all(before == 0.15)

    def test_occluded_object_contributes_no_hits(self):
        # three objects on one ray: near wall, a vehicle behind it, far wall
        near = wall(x=0.0, y=4.0, length=14.0, width=1.0)
        hidden = ScenarioObject("vehicle", 4.4, 1.8, 0.0, 8.0, motion="stationary")
        far = wall(x=0.0, y=12.0, length=14.0, width=1.0)
        sc = Scenario([near, hidden, far], seed=0)
        meas = render_measurement(sc, SPEC, beams=720)

        # brute-force single-ray oracle: march every beam over the mask
        mask = object_mask(sc, SPEC)
        hit_cells = set()
        for b in range(720):
            ang = 2 * math.pi * b / 720
            for t in np.arange(0.35, 23.0, 0.35):
                x, y = t * math.cos(ang), t * math.sin(ang)
                row, col = SPEC.cell_of(x, y)
                if not (0 <= row < 32 and 0 <= col < 32):
                    break
                if mask[row, col]:
                    hit_cells.add((int(row), int(col)))
                    break
        got = set(map(tuple, np.argwhere(meas.l_occ == 0.85)))
        assert got == hit_cells
        # the hidden vehicle's cells all stayed unobserved
        veh_mask = object_mask(sc, SPEC, include=lambda o: o.kind == "vehicle")
        assert np.all(meas.l_occ[veh_mask] == 0.5)

    def test_rejects_too_few_beams(self):
        with pytest.raises(ValueError):
            render_measurement(Scenario([], seed=0), SPEC, beams=8)

    def test_occupancy_probability_of_pairs(self):
        m = MeasurementGrid(np.array([[0.85, 0.5]]), np.array([[0.15, 0.5]]))
        np.testing.assert_allclose(m.occupancy_probability(), [[0.85, 0.5]])


class TestGroundTruth:
    def test_parked_vehicle_is_static(self):
        sc = Scenario([ScenarioObject("vehicle", 4.4, 1.8, 0.0, 0.0,
                                      motion="stationary")], seed=0)
        labels, heading = ground_truth(sc, SPEC)
        assert np.all(labels == LABEL_STATIC)
        assert np.all(np.isnan(heading))

    def test_moving_pedestrian_cells_dynamic_with_heading(self):
        ped = ScenarioObject("pedestrian", 1.5, 1.5, 0.0, 0.0,
                             heading=math.pi / 2, speed=1.4)
        sc = Scenario([ped], seed=0)
        labels, heading = ground_truth(sc, SPEC)
        dyn = labels == LABEL_DYNAMIC
        assert dyn.sum() >= 1
        assert np.allclose(heading[dyn], math.pi / 2)
        # background cells are static and carry no heading
        assert np.all(np.isnan(heading[~dyn]))

    def test_heading_support_equals_dynamic_support(self):
        sc = load_scenario("multi_lane", extent=SPEC.extent)
        labels, heading = ground_truth(sc, SPEC)
        np.testing.assert_array_equal(~np.isnan(heading), labels == LABEL_DYNAMIC)

    def test_clutter_labeled_static(self):
        sc = Scenario([], seed=3, extent=SPEC.extent)
        sc.objects.append(sc._spawn_clutter())
        labels, _ = ground_truth(sc, SPEC)
        assert np.all(labels == LABEL_STATIC)

    def test_slow_object_below_threshold_static(self):
        slow = ScenarioObject("vehicle", 4.4, 1.8, 0.0, 0.0, speed=0.05)
        labels, _ = ground_truth(Scenario([slow], seed=0), SPEC)
        assert np.all(labels == LABEL_STATIC)


class TestScenarioFiles:
    def test_ships_at_least_four_canned_scenarios(self):
        names = canned_scenarios()
        assert len(names) >= 4
        for name in names:
            sc = load_scenario(name, extent=32.0)
            assert len(sc.objects) >= 1

    def test_measurement_deterministic_given_seed(self):
        def run():
            sc = load_scenario("clutter_lot", extent=32.0)
            frames = []
            for _ in range(5):
                step_world(sc, 0.1)
                frames.append(render_measurement(sc, SPEC, beams=180).l_occ)
            return np.stack(frames)

        np.testing.assert_array_equal(run(), run())

    def test_unknown_scenario_raises(self):
        with pytest.raises(FileNotFoundError):
            load_scenario("no_such_place")
