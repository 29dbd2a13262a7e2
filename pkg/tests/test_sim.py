import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from handoff.config import OBJECT_SPECS, GraspModelConfig, SceneConfig
from handoff.core import Action, GripCommand, JointCommand, ObjectKind, joints_from_synergy
from handoff.sim import (
    Camera,
    GraspStrategy,
    RestRegion,
    attempt_grasp,
    cam1_project,
    grasp_probability,
    outcome,
    render,
    spawn_world,
    step_world,
)

SCENE = SceneConfig()
MODEL = SCENE.grasp
DT = SCENE.dt


def still(grip=0.0):
    return Action(np.zeros(6), GripCommand(grip), 0.0)


def move(dx=0.0, dy=0.0, dz=0.0, grip=0.0):
    return Action(np.array([dx, dy, dz, 0, 0, 0]), GripCommand(grip), 0.0)


def single_object_world(kind=ObjectKind.TAPE, pos=(0.0, 0.2), hand=None, seed=0):
    return spawn_world(SCENE, seed, kinds=[kind], positions={kind: pos},
                       hand_start=hand)


class TestStepWorld:
    def test_free_space_motion(self):
        w = single_object_world(hand=(0.0, 0.4, 0.2))
        before = [(o.x, o.y, o.z) for o in w.objects]
        step_world(w, move(dx=0.01), DT)
        assert w.hand.x == pytest.approx(0.01)
        assert [(o.x, o.y, o.z) for o in w.objects] == before

    def test_velocity_clamp(self):
        w = single_object_world(hand=(0.0, 0.4, 0.2))
        step_world(w, move(dx=1.0), DT)
        assert w.hand.x == pytest.approx(SCENE.max_linear_speed * DT)

    def test_workspace_clamp(self):
        w = single_object_world(hand=(SCENE.workspace_x[1], 0.4, 0.2))
        step_world(w, move(dx=0.05), DT)
        assert w.hand.x == SCENE.workspace_x[1]

    def test_dt_must_be_positive(self):
        w = single_object_world()
        with pytest.raises(ValueError):
            step_world(w, still(), 0.0)

    def test_sticking_slide_moves_object_with_hand(self):
        spec = OBJECT_SPECS[ObjectKind.TAPE]
        w = single_object_world(ObjectKind.TAPE, pos=(0.0, 0.2),
                                hand=(0.0, 0.24, spec.height))
        w.joints = joints_from_synergy(0.5)
        w._prev_synergy = 0.5
        step_world(w, move(dy=-0.01, grip=0.5), DT)
        assert w.objects[0].y == pytest.approx(0.19)

    def test_open_hand_does_not_slide(self):
        spec = OBJECT_SPECS[ObjectKind.TAPE]
        w = single_object_world(ObjectKind.TAPE, pos=(0.0, 0.2),
                                hand=(0.0, 0.24, spec.height))
        step_world(w, move(dy=-0.01, grip=0.0), DT)
        assert w.objects[0].y == pytest.approx(0.2)

    def test_slide_monotone_until_overhang_gate(self):
        spec = OBJECT_SPECS[ObjectKind.TAPE]
        w = single_object_world(ObjectKind.TAPE, pos=(0.0, 0.12),
                                hand=(0.0, 0.16, spec.height))
        w.joints = joints_from_synergy(0.5)
        w._prev_synergy = 0.5
        distances = [w.objects[0].distance_to_edge()]
        while w.objects[0].overhang_fraction() < MODEL.overhang_threshold:
            step_world(w, move(dy=-0.01, grip=0.5), DT)
            distances.append(w.objects[0].distance_to_edge())
        assert all(b < a for a, b in zip(distances, distances[1:]))
        assert not w.objects[0].fallen

    def test_pushed_past_fall_threshold_drops(self):
        spec = OBJECT_SPECS[ObjectKind.TAPE]
        w = single_object_world(ObjectKind.TAPE, pos=(0.0, 0.05),
                                hand=(0.0, 0.09, spec.height))
        w.joints = joints_from_synergy(0.5)
        w._prev_synergy = 0.5
        for _ in range(20):
            step_world(w, move(dy=-0.01, grip=0.5), DT)
        assert w.objects[0].fallen

    def test_attached_object_does_not_fall(self):
        w = single_object_world(ObjectKind.TAPE, pos=(0.0, 0.02),
                                hand=(0.0, 0.02, OBJECT_SPECS[ObjectKind.TAPE].height / 2))
        w.attached = "tape"
        w.attachment_ever = True
        w.attach_offset = (0.0, 0.0, 0.0)
        w.joints = joints_from_synergy(0.85)
        w._prev_synergy = 0.85
        for _ in range(10):
            step_world(w, move(dy=-0.01, grip=0.85), DT)
        assert not w.objects[0].fallen
        assert w.objects[0].y == pytest.approx(w.hand.y)

    def test_release_and_settle_on_plate(self):
        plate = SCENE.plate_centers[list(SCENE.plate_centers)[0]]
        w = single_object_world(ObjectKind.PEPPER, pos=(plate[0], plate[1]),
                                hand=(plate[0], plate[1], 0.1))
        w.attached = "pepper"
        w.attachment_ever = True
        w.attach_offset = (0.0, 0.0, -0.02)
        w.joints = joints_from_synergy(0.85)
        w._prev_synergy = 0.85
        step_world(w, still(grip=0.0), DT)
        obj = w.objects[0]
        assert w.attached is None
        assert obj.z == pytest.approx(obj.rest_z)
        result = outcome(w, ObjectKind.PEPPER, "pepper")
        assert result.target_rest in (RestRegion.PLATE_YELLOW, RestRegion.PLATE_PURPLE)

    def test_close_near_object_triggers_one_attempt(self):
        spec = OBJECT_SPECS[ObjectKind.PEPPER]
        w = single_object_world(ObjectKind.PEPPER, pos=(0.0, 0.3),
                                hand=(0.0, 0.3, spec.height))
        for grip in (0.3, 0.6, 0.85, 0.85):
            step_world(w, still(grip=grip), DT)
        assert w.last_attempt is not None
        assert w.last_attempt.attempted

    def test_determinism_bitwise(self):
        def run(seed):
            w = spawn_world(SCENE, seed)
            frames = []
            for i in range(30):
                step_world(w, move(dx=0.01 if i % 2 else -0.005, dy=0.004,
                                   grip=(i % 7) / 7), DT)
                frames.append(render(w, Camera.CAM1_STATIC).pixels)
            return [(o.x, o.y, o.z) for o in w.objects], frames

        state_a, frames_a = run(42)
        state_b, frames_b = run(42)
        assert state_a == state_b
        assert frames_a == frames_b


class TestGraspModel:
    def test_direct_pick_baseline(self):
        q = grasp_probability(MODEL, ObjectKind.PEPPER, GraspStrategy.DIRECT_PICK,
                              overhang=0.0, planar_offset=0.0, height_offset=0.0)
        assert q == pytest.approx(MODEL.q_direct)

    def test_attenuation_at_15cm_below_half(self):
        q = grasp_probability(MODEL, ObjectKind.PEPPER, GraspStrategy.DIRECT_PICK,
                              overhang=0.0, planar_offset=0.15, height_offset=0.0)
        assert q <= 0.5 * MODEL.q_direct

    def test_slide_requires_edge_support(self):
        unsupported = grasp_probability(MODEL, ObjectKind.TAPE, GraspStrategy.SLIDE_AND_PICK,
                                        overhang=0.0, planar_offset=0.0, height_offset=0.0)
        supported = grasp_probability(MODEL, ObjectKind.TAPE, GraspStrategy.SLIDE_AND_PICK,
                                      overhang=0.4, planar_offset=0.0, height_offset=0.0)
        assert unsupported <= 0.05
        assert supported == pytest.approx(MODEL.q_slide_supported)

    def test_thin_direct_pick_height_gate(self):
        spec = OBJECT_SPECS[ObjectKind.TAPE]
        ok = grasp_probability(MODEL, ObjectKind.TAPE, GraspStrategy.DIRECT_PICK,
                               0.0, 0.0, height_offset=spec.direct_pick_height_tol)
        bad = grasp_probability(MODEL, ObjectKind.TAPE, GraspStrategy.DIRECT_PICK,
                                0.0, 0.0, height_offset=spec.direct_pick_height_tol + 0.01)
        assert ok == pytest.approx(MODEL.q_direct)
        assert bad == pytest.approx(MODEL.q_direct * MODEL.thin_height_penalty)

    def test_power_grasp_per_kind(self):
        for kind, expected in MODEL.q_power.items():
            q = grasp_probability(MODEL, kind, GraspStrategy.POWER_GRASP, 0.0, 0.0, 0.0)
            assert q == pytest.approx(expected)

    @given(st.lists(st.floats(min_value=0, max_value=0.5), min_size=2, max_size=20))
    def test_monotone_in_offset(self, offsets):
        offsets = sorted(offsets)
        qs = [grasp_probability(MODEL, ObjectKind.PEPPER, GraspStrategy.DIRECT_PICK,
                                0.0, d, 0.0) for d in offsets]
        assert all(b <= a + 1e-12 for a, b in zip(qs, qs[1:]))

    def test_no_object_in_range_is_noop(self):
        w = single_object_world(ObjectKind.TAPE, pos=(0.0, 0.2), hand=(0.5, 0.9, 0.5))
        result = attempt_grasp(w, GraspStrategy.DIRECT_PICK)
        assert not result.attempted and not result.attached
        assert w.attached is None

    def test_attempt_consumes_world_rng(self):
        spec = OBJECT_SPECS[ObjectKind.PEPPER]
        w = single_object_world(ObjectKind.PEPPER, pos=(0.0, 0.3),
                                hand=(0.0, 0.3, spec.height), seed=5)
        before = w.rng.bit_generator.state["state"]["state"]
        attempt_grasp(w, GraspStrategy.DIRECT_PICK)
        after = w.rng.bit_generator.state["state"]["state"]
        assert before != after

    def test_attach_rate_matches_probability(self):
        spec = OBJECT_SPECS[ObjectKind.PEPPER]
        hits = 0
        n = 400
        for seed in range(n):
            w = single_object_world(ObjectKind.PEPPER, pos=(0.0, 0.3),
                                    hand=(0.0, 0.3, spec.height), seed=seed)
            hits += attempt_grasp(w, GraspStrategy.DIRECT_PICK).attached
        assert hits / n == pytest.approx(MODEL.q_direct, abs=0.04)


class TestRender:
    def test_empty_table_determinism(self):
        w = spawn_world(SCENE, 1, kinds=[])
        a = render(w, Camera.CAM1_STATIC, 96, 72)
        b = render(w, Camera.CAM1_STATIC, 96, 72)
        assert a == b

    def test_resolution_validation(self):
        w = spawn_world(SCENE, 1, kinds=[])
        with pytest.raises(ValueError):
            render(w, Camera.CAM1_STATIC, 0, 10)

    def test_cam1_blob_centroid_matches_projection(self):
        # Independent oracle: the centroid of the painted footprint must land
        # on the documented projection of the object center.
        pos = (0.1, 0.3)
        w = single_object_world(ObjectKind.PEPPER, pos=pos, hand=(-0.3, 0.05, 0.4))
        img = render(w, Camera.CAM1_STATIC, 128, 96).to_array()
        color = np.array(OBJECT_SPECS[ObjectKind.PEPPER].color)
        mask = np.all(img == color, axis=-1)
        assert mask.any()
        vs, us = np.nonzero(mask)
        top = w.objects[0].top
        eu, ev = cam1_project(pos[0], pos[1] + 0.6 * top, 0.0, 128, 96)
        assert us.mean() == pytest.approx(eu, abs=1.0)
        assert vs.mean() == pytest.approx(ev, abs=1.0)

    def test_cam2_centered_over_object(self):
        pos = (0.05, 0.25)
        w = single_object_world(ObjectKind.TAPE, pos=pos, hand=(pos[0], pos[1], 0.1))
        img = render(w, Camera.CAM2_WRIST, 96, 96).to_array()
        color = np.array(OBJECT_SPECS[ObjectKind.TAPE].color)
        mask = np.all(img == color, axis=-1)
        assert mask.any()
        vs, us = np.nonzero(mask)
        assert us.mean() == pytest.approx((96 - 1) / 2, abs=1.5)
        assert vs.mean() == pytest.approx((96 - 1) / 2, abs=1.5)

    def test_fallen_object_not_drawn(self):
        w = single_object_world(ObjectKind.TAPE, pos=(0.0, 0.2))
        w.objects[0].fallen = True
        img = render(w, Camera.CAM1_STATIC, 96, 72).to_array()
        color = np.array(OBJECT_SPECS[ObjectKind.TAPE].color)
        assert not np.all(img == color, axis=-1).any()


class TestOutcome:
    def test_on_commanded_plate(self):
        yellow = SCENE.plate_centers[list(SCENE.plate_centers)[0]]
        w = single_object_world(ObjectKind.PEPPER, pos=yellow)
        w.attachment_ever = True
        result = outcome(w, ObjectKind.PEPPER, "pepper")
        assert result.target_rest is RestRegion.PLATE_YELLOW

    def test_fell_off_edge(self):
        w = single_object_world(ObjectKind.TAPE, pos=(0.0, 0.2))
        w.objects[0].fallen = True
        result = outcome(w, ObjectKind.TAPE, "tape")
        assert result.target_rest is RestRegion.FLOOR
        assert not result.attachment_ever

    def test_never_attached_flag(self):
        w = single_object_world(ObjectKind.TAPE, pos=(0.0, 0.2))
        result = outcome(w, ObjectKind.TAPE, None)
        assert not result.attachment_ever

    def test_held_at_termination(self):
        w = single_object_world(ObjectKind.TAPE, pos=(0.0, 0.2))
        w.attached = "tape"
        w.attachment_ever = True
        result = outcome(w, ObjectKind.TAPE, "tape")
        assert result.target_rest is RestRegion.HELD


class TestSpawn:
    def test_min_separation(self):
        for seed in range(25):
            w = spawn_world(SCENE, seed)
            for i, a in enumerate(w.objects):
                for b in w.objects[i + 1:]:
                    assert math.hypot(a.x - b.x, a.y - b.y) >= SCENE.min_object_separation

    def test_objects_rest_on_table(self):
        w = spawn_world(SCENE, 9)
        for obj in w.objects:
            assert obj.z == pytest.approx(obj.rest_z)
