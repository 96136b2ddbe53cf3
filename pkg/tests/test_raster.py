import math
from pathlib import Path

import numpy as np
import pytest

from trajcover.geometry import PolygonSet
from trajcover.raster import (
    AgentState,
    AgentTrack,
    RasterImage,
    SceneContext,
    SceneMap,
    downsample_features,
    history_saturation,
    render,
    write_png,
    write_ppm,
)

from conftest import history_track, make_scene, rect_ring

DATA_DIR = Path(__file__).parent / "data"

RED = (255, 0, 0)
YELLOW = (255, 255, 0)
GRAY = (60, 60, 60)


def golden_scene():
    """Fixed scene exercising map, lanes, history fade, and both agent kinds."""
    drivable = PolygonSet([rect_ring(-25.0, -6.0, 90.0, 6.0), rect_ring(30.0, -30.0, 44.0, 6.0)])
    lanes = [np.array([[-25.0, 0.0], [90.0, 0.0]]), np.array([[37.0, 0.0], [37.0, -30.0]])]
    other = history_track("veh-1", "vehicle", [(6.0, 3.0), (8.0, 3.0), (10.0, 3.0), (12.0, 3.0), (14.0, 3.0)],
                          t_now=2.0, freq=2.0)
    walker = history_track("ped-1", "pedestrian", [(20.0, 5.0), (20.0, 5.4), (20.0, 5.8), (20.2, 6.0), (20.4, 6.2)],
                           t_now=2.0, freq=2.0, length=0.6, width=0.6)
    return make_scene(
        scene_id="golden",
        drivable=drivable,
        lanes=lanes,
        extra_agents=(other, walker),
        target_pose=(0.0, 0.0, 0.0),
        speed=6.0,
    )


class TestSceneContext:
    def test_missing_target_rejected(self):
        track = history_track("a", "vehicle", [(0, 0)], t_now=2.0, freq=2.0)
        with pytest.raises(ValueError):
            SceneContext("s", SceneMap(PolygonSet([rect_ring(0, 0, 1, 1)]), ()), (track,),
                         "target", 2.0, 2.0, 3.0, 2.0)

    def test_nonuniform_history_rejected(self):
        states = (AgentState(0.0, 0, 0, 0, 1, 0, 0), AgentState(0.7, 0, 0, 0, 1, 0, 0),
                  AgentState(2.0, 0, 0, 0, 1, 0, 0))
        track = AgentTrack("target", "vehicle", states)
        with pytest.raises(ValueError):
            SceneContext("s", SceneMap(PolygonSet([rect_ring(0, 0, 1, 1)]), ()), (track,),
                         "target", 2.0, 2.0, 3.0, 2.0)

    def test_future_shape_checked(self):
        with pytest.raises(ValueError):
            make_scene(future=np.zeros((4, 2)))  # expects horizon * freq = 6 points
        ctx = make_scene(future=np.zeros((6, 2)))
        assert ctx.future_trajectory().n_points == 6


class TestRenderGeometry:
    def test_empty_map_is_background(self):
        ctx = make_scene(drivable=PolygonSet([rect_ring(500.0, 500.0, 501.0, 501.0)]))
        img = render(ctx, "map_only")
        assert np.all(img.pixels == 0)

    def test_target_box_at_agent_pixel_major_axis_vertical(self):
        ctx = make_scene()
        img = render(ctx)
        assert tuple(img.pixels[320, 200]) == RED
        # 4.5 m long x 2.0 m wide at 0.25 m/px: half-length 9 px vertical, half-width 4 px horizontal
        assert tuple(img.pixels[312, 200]) == RED
        assert tuple(img.pixels[328, 200]) == RED
        assert tuple(img.pixels[320, 196]) == RED
        assert tuple(img.pixels[312, 194]) != RED
        assert tuple(img.pixels[330, 200]) != RED

    def test_agent_ten_meters_ahead_lands_on_row_280(self):
        other = history_track("veh-1", "vehicle", [(10.0, 0.0)] * 5, t_now=2.0, freq=2.0)
        ctx = make_scene(extra_agents=(other,))
        img = render(ctx)
        assert tuple(img.pixels[280, 200]) == YELLOW

    def test_rows_map_affinely_to_longitudinal_meters(self):
        # 1 m wide marker columns at known forward distances; rows = 320 - 4 * x
        markers = [
            rect_ring(x - 0.1, -40.0, x + 0.1, 40.0) for x in (-15.0, 0.0, 25.0, 60.0, 79.9)
        ]
        ctx = make_scene(drivable=PolygonSet(markers))
        img = render(ctx, "map_only")
        for x in (-15.0, 0.0, 25.0, 60.0):
            row = 320 - int(4 * x)
            assert tuple(img.pixels[row, 200]) == GRAY
            assert tuple(img.pixels[row + 3, 200]) != GRAY
        assert tuple(img.pixels[0, 200]) == GRAY  # 79.9 m ahead is still visible at row 0

    def test_view_covers_80_ahead_20_behind(self):
        beyond = PolygonSet([rect_ring(81.0, -5.0, 90.0, 5.0), rect_ring(-30.0, -5.0, -20.6, 5.0)])
        ctx = make_scene(drivable=beyond)
        img = render(ctx, "map_only")
        assert np.all(img.pixels == 0)

    def test_rotated_target_alignment(self):
        # heading +y: a point 10 m along +y (ahead of agent) must land on row 280
        other = history_track("veh-1", "vehicle", [(0.0, 10.0)] * 5, t_now=2.0, freq=2.0, yaw=math.pi / 2)
        ctx = make_scene(target_pose=(0.0, 0.0, math.pi / 2), extra_agents=(other,))
        img = render(ctx)
        assert tuple(img.pixels[280, 200]) == YELLOW

    def test_left_of_agent_is_left_in_image(self):
        # 5 m to the agent's left (+y) -> 20 px to the image left: col 180
        other = history_track("veh-1", "vehicle", [(5.0, 5.0)] * 5, t_now=2.0, freq=2.0)
        ctx = make_scene(extra_agents=(other,))
        img = render(ctx)
        assert tuple(img.pixels[300, 180]) == YELLOW


class TestRenderSemantics:
    def test_full_is_map_only_plus_agent_paint(self):
        from trajcover.raster import PEDESTRIAN_HUE, TARGET_HUE, VEHICLE_HUE, _hsv_color

        ctx = golden_scene()
        map_px = render(ctx, "map_only").pixels
        full_px = render(ctx, "full").pixels
        diff = np.any(full_px != map_px, axis=2)
        assert diff.any()
        agent_colors = {
            _hsv_color(hue, history_saturation(age, ctx.history_window))
            for hue in (VEHICLE_HUE, PEDESTRIAN_HUE, TARGET_HUE)
            for age in (0.0, 0.5, 1.0, 1.5, 2.0)
        }
        painted = {tuple(c) for c in full_px[diff]}
        assert painted <= agent_colors

    def test_map_only_ignores_distractors(self):
        ctx = golden_scene()
        solo = make_scene(scene_id=ctx.scene_id, drivable=ctx.scene_map.drivable,
                          lanes=ctx.scene_map.lanes)
        np.testing.assert_array_equal(render(ctx, "map_only").pixels,
                                      render(solo, "map_only").pixels)

    def test_map_only_omits_every_agent(self):
        ctx = golden_scene()
        img = render(ctx, "map_only")
        flat = img.pixels.reshape(-1, 3)
        assert not np.any(np.all(flat == RED, axis=1))
        assert not np.any(np.all(flat == YELLOW, axis=1))

    def test_determinism(self):
        ctx = golden_scene()
        a, b = render(ctx), render(ctx)
        np.testing.assert_array_equal(a.pixels, b.pixels)

    def test_saturation_fades_linearly(self):
        assert history_saturation(0.0, 2.0) == 1.0
        assert history_saturation(2.0, 2.0) == pytest.approx(0.2)
        assert history_saturation(1.0, 2.0) == pytest.approx(0.6)
        ages = np.linspace(0, 2, 5)
        sats = [history_saturation(a, 2.0) for a in ages]
        assert all(a > b for a, b in zip(sats, sats[1:]))

    def test_older_history_boxes_are_less_saturated(self):
        # vehicle moving +x; each history frame 2 m apart so the boxes overlap;
        # sample a strip of frame centers and check green channel rises with age
        other = history_track("veh-1", "vehicle",
                              [(10.0, 3.0), (12.0, 3.0), (14.0, 3.0), (16.0, 3.0), (18.0, 3.0)],
                              t_now=2.0, freq=2.0)
        ctx = make_scene(extra_agents=(other,))
        img = render(ctx)
        # newest box (t_now) center: x=18 -> row 248; oldest visible pixel near x=8 tail
        newest = img.pixels[320 - 4 * 18, 200 - 4 * 3]
        oldest = img.pixels[320 - 4 * 8, 200 - 4 * 3]
        assert tuple(newest) == YELLOW
        assert oldest[2] > 0  # faded yellow has a blue component
        assert tuple(oldest) != YELLOW

    def test_imputed_dims_for_missing_extents(self):
        states = tuple(AgentState(t, 10.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0)
                       for t in (0.0, 0.5, 1.0, 1.5, 2.0))
        other = AgentTrack("veh-1", "vehicle", states)
        ctx = make_scene(extra_agents=(other,))
        img = render(ctx)
        # imputed 4.5 x 2.0 box: 10 m ahead -> row 280, half-length 9 px
        assert tuple(img.pixels[280, 200]) == YELLOW
        assert tuple(img.pixels[272, 200]) == YELLOW

    def test_draw_order_target_on_top(self):
        other = history_track("veh-1", "vehicle", [(0.0, 0.0)] * 5, t_now=2.0, freq=2.0)
        ctx = make_scene(extra_agents=(other,))
        img = render(ctx)
        assert tuple(img.pixels[320, 200]) == RED

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            render(make_scene(), "sideways")


class TestDownsample:
    def test_uniform_image(self):
        img = RasterImage(np.full((8, 8, 3), 100, dtype=np.uint8), 0.25, (4, 4))
        feats = downsample_features(img, (2, 2))
        np.testing.assert_allclose(feats, 100 / 255.0)
        assert feats.shape == (2 * 2 * 3,)

    def test_single_cell_is_global_mean(self):
        rng = np.random.default_rng(0)
        px = rng.integers(0, 256, (8, 8, 3)).astype(np.uint8)
        img = RasterImage(px, 0.25, (4, 4))
        np.testing.assert_allclose(downsample_features(img, (1, 1)),
                                   px.reshape(-1, 3).mean(axis=0) / 255.0)

    def test_checkerboard(self):
        px = np.zeros((4, 4, 3), dtype=np.uint8)
        px[:2, 2:] = 255
        px[2:, :2] = 255
        img = RasterImage(px, 0.25, (2, 2))
        feats = downsample_features(img, (2, 2)).reshape(2, 2, 3)
        np.testing.assert_allclose(feats[0, 0], 0.0)
        np.testing.assert_allclose(feats[0, 1], 1.0)
        np.testing.assert_allclose(feats[1, 0], 1.0)
        np.testing.assert_allclose(feats[1, 1], 0.0)

    def test_rejects_non_dividing_grid(self):
        img = RasterImage(np.zeros((8, 8, 3), dtype=np.uint8), 0.25, (4, 4))
        with pytest.raises(ValueError):
            downsample_features(img, (3, 2))


class TestImageFiles:
    def test_ppm_bytes(self, tmp_path):
        img = render(golden_scene())
        path = tmp_path / "img.ppm"
        write_ppm(img, path)
        data = path.read_bytes()
        assert data.startswith(b"P6\n400 400\n255\n")
        assert len(data) == len(b"P6\n400 400\n255\n") + 400 * 400 * 3

    def test_png_round_trip(self, tmp_path):
        from PIL import Image

        img = render(golden_scene())
        path = tmp_path / "img.png"
        write_png(img, path)
        loaded = np.asarray(Image.open(path).convert("RGB"))
        np.testing.assert_array_equal(loaded, img.pixels)

    def test_golden_file(self, tmp_path):
        golden = DATA_DIR / "golden_scene.ppm"
        out = tmp_path / "scene.ppm"
        write_ppm(render(golden_scene()), out)
        assert out.read_bytes() == golden.read_bytes()
