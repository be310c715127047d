import math

import numpy as np
import pytest

from capascan import (
    AIR,
    PLYWOOD,
    STEEL,
    WOOD,
    Box,
    Cylinder,
    EmbeddedObject,
    Scene,
    SceneError,
    preset,
    rasterize,
    validate,
)
from capascan.scene import (
    PRESET_NAMES,
    load_scene_file,
    save_scene_file,
    scene_from_doc,
    scene_to_doc,
)


def test_validate_ok_scene(small_slab_scene):
    assert validate(small_slab_scene) == []


def test_validate_object_outside_extents():
    scene = Scene(
        extents_mm=(50, 50, 20),
        voxel_size_mm=1.0,
        objects=(
            EmbeddedObject(Box(10, 10, 5), position_mm=(48, 25, 10), material=STEEL),
        ),
    )
    violations = validate(scene)
    assert len(violations) == 1
    assert "objects[0]" in violations[0]
    assert "inside extents" in violations[0]


def test_validate_zero_voxel_size():
    scene = Scene(extents_mm=(50, 50, 20), voxel_size_mm=0.0)
    violations = validate(scene)
    assert any("voxel_size" in v for v in violations)


def test_validate_layers_exceed_depth():
    scene = Scene(extents_mm=(50, 50, 20), voxel_size_mm=1.0,
                  layers=((PLYWOOD, 15.0), (WOOD, 10.0)))
    assert any("exceeds z extent" in v for v in validate(scene))


def test_validate_non_divisible_extent():
    scene = Scene(extents_mm=(50.5, 50, 20), voxel_size_mm=1.0)
    assert any("divisible" in v for v in validate(scene))


def test_preset_scenes_valid():
    for name in PRESET_NAMES:
        assert validate(preset(name)) == [], name


def test_preset_unknown_name():
    with pytest.raises(KeyError):
        preset("fig11_submarine")


def test_preset_fig8_concrete_thickness():
    scene = preset("fig8_concrete_rebar")
    (mat, thickness), = scene.layers
    assert mat.name == "concrete"
    assert thickness == 35.0


def test_preset_fig10_one_metal_one_wood():
    scene = preset("fig10_metal_and_wood")
    (mat, thickness), = scene.layers
    assert mat.name == "plywood" and thickness == 25.0
    kinds = sorted(o.material.name for o in scene.objects)
    assert kinds == ["steel", "wood"]


def test_preset_fig7_two_crossed_bars():
    scene = preset("fig7_plywood_cross_bars")
    yaws = sorted(o.yaw_deg for o in scene.objects)
    assert yaws == [0.0, 90.0]
    assert all(o.material.is_conductor for o in scene.objects)


def test_rasterize_homogeneous_air(small_air_scene):
    grid = rasterize(small_air_scene)
    assert np.all(grid.eps_r == 1.0)
    assert not grid.conductor_mask.any()


def test_rasterize_layer_plane_count():
    scene = Scene(extents_mm=(30, 30, 40), voxel_size_mm=1.0, layers=((PLYWOOD, 25.0),))
    grid = rasterize(scene)
    planes = np.nonzero(np.all(grid.eps_r == PLYWOOD.relative_permittivity, axis=(0, 1)))[0]
    assert len(planes) == 25
    assert planes[0] == 0 and planes[-1] == 24


def test_rasterize_rejects_invalid():
    scene = Scene(extents_mm=(50, 50, 20), voxel_size_mm=0.0)
    with pytest.raises(SceneError) as e:
        rasterize(scene)
    assert e.value.violations


def _oracle_count(scene, obj):
    """Independent voxel-center containment count for one object."""
    h = scene.voxel_size_mm
    nx, ny, nz = scene.dims()
    count = 0
    a = math.radians(obj.yaw_deg)
    rot = np.array([[math.cos(a), math.sin(a)], [-math.sin(a), math.cos(a)]])
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                c = np.array([(i + 0.5) * h, (j + 0.5) * h])
                d = rot @ (c - np.array(obj.position_mm[:2]))
                dz = (k + 0.5) * h - obj.position_mm[2]
                if isinstance(obj.shape, Box):
                    inside = (
                        abs(d[0]) <= obj.shape.length_mm / 2
                        and abs(d[1]) <= obj.shape.width_mm / 2
                        and abs(dz) <= obj.shape.height_mm / 2
                    )
                else:
                    inside = (
                        abs(d[0]) <= obj.shape.length_mm / 2
                        and d[1] ** 2 + dz**2 <= obj.shape.radius_mm**2
                    )
                count += inside
    return count


@pytest.mark.parametrize("shape,yaw", [
    (Box(8.0, 20.0, 6.0), 0.0),
    (Box(8.0, 20.0, 6.0), 30.0),
    (Cylinder(5.0, 24.0), 90.0),
])
def test_rasterize_conductor_count_matches_oracle(shape, yaw):
    obj = EmbeddedObject(shape, position_mm=(20.0, 20.0, 10.0), material=STEEL, yaw_deg=yaw)
    scene = Scene(extents_mm=(40, 40, 20), voxel_size_mm=2.0, objects=(obj,))
    grid = rasterize(scene)
    assert int(grid.conductor_mask.sum()) == _oracle_count(scene, obj)


def test_rasterize_deterministic(bar_scene):
    g1 = rasterize(bar_scene)
    g2 = rasterize(bar_scene)
    assert np.array_equal(g1.eps_r, g2.eps_r)
    assert np.array_equal(g1.conductor_mask, g2.conductor_mask)
    assert g1.scene_digest == g2.scene_digest


def test_rasterize_mirror_about_x_axis():
    obj = EmbeddedObject(Box(8.0, 20.0, 6.0), position_mm=(24.0, 14.0, 10.0),
                         material=STEEL, yaw_deg=25.0)
    scene = Scene(extents_mm=(40, 40, 20), voxel_size_mm=2.0, objects=(obj,))
    ey = scene.extents_mm[1]
    mirrored_obj = EmbeddedObject(
        obj.shape,
        position_mm=(obj.position_mm[0], ey - obj.position_mm[1], obj.position_mm[2]),
        material=obj.material,
        yaw_deg=(-obj.yaw_deg) % 180.0,
    )
    mirrored = Scene(extents_mm=scene.extents_mm, voxel_size_mm=2.0, objects=(mirrored_obj,))
    g = rasterize(scene)
    gm = rasterize(mirrored)
    assert np.array_equal(gm.conductor_mask, g.conductor_mask[:, ::-1, :])
    assert np.array_equal(gm.eps_r, g.eps_r[:, ::-1, :])


def test_objects_override_layers():
    scene = Scene(
        extents_mm=(20, 20, 20),
        voxel_size_mm=2.0,
        layers=((PLYWOOD, 20.0),),
        objects=(
            EmbeddedObject(Box(8, 8, 8), position_mm=(10, 10, 10), material=STEEL),
        ),
    )
    grid = rasterize(scene)
    assert grid.conductor_mask.any()
    assert np.all(grid.eps_r[~grid.conductor_mask] == PLYWOOD.relative_permittivity)


def test_yaw_normalized():
    obj = EmbeddedObject(Box(5, 5, 5), position_mm=(10, 10, 10), material=AIR,
                         yaw_deg=270.0)
    assert obj.yaw_deg == 90.0


def test_scene_doc_roundtrip(bar_scene):
    doc = scene_to_doc(bar_scene)
    back = scene_from_doc(doc)
    assert back.digest() == bar_scene.digest()


def test_scene_doc_unknown_key_rejected(bar_scene):
    doc = scene_to_doc(bar_scene)
    doc["humidity"] = 0.4
    with pytest.raises(SceneError) as e:
        scene_from_doc(doc)
    assert "unknown keys" in e.value.violations[0]


def test_scene_doc_unknown_nested_key_rejected(bar_scene):
    doc = scene_to_doc(bar_scene)
    doc["objects"][0]["color"] = "red"
    with pytest.raises(SceneError):
        scene_from_doc(doc)


def test_scene_file_roundtrip(tmp_path, bar_scene):
    path = tmp_path / "scene.json"
    save_scene_file(bar_scene, path, assembly_doc={"note": "ignored by scene"})
    loaded, assembly_doc = load_scene_file(path)
    assert loaded.digest() == bar_scene.digest()
    assert assembly_doc == {"note": "ignored by scene"}


def test_background_strips_objects(bar_scene):
    from capascan.scene import background

    bg = background(bar_scene)
    assert bg.objects == ()
    assert bg.layers == bar_scene.layers
    assert not rasterize(bg).conductor_mask.any()
