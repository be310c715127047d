import numpy as np
import pytest

from capascan import (
    Circular,
    Comb,
    ElectrodeAssembly,
    OutOfDomainError,
    Plate,
    Scene,
    Triangular,
    footprint,
    rasterize,
    standard_assemblies,
)


@pytest.fixture(scope="module")
def grid():
    return rasterize(Scene(extents_mm=(120.0, 120.0, 10.0), voxel_size_mm=1.0))


def cells_set(arr):
    return set(map(tuple, arr))


def test_plate_pair_geometry(grid):
    asm = ElectrodeAssembly(Plate(20, 20), Plate(20, 20), separation_mm=4.0)
    fp = footprint(asm, grid, (60.0, 60.0))
    assert len(fp.positive) == 20 * 20
    assert len(fp.negative) == 20 * 20
    pos_x = sorted({i for i, _ in fp.positive})
    neg_x = sorted({i for i, _ in fp.negative})
    # 4 mm gap means a 4-cell gap between the inner edges at 1 mm voxels
    assert neg_x[0] - pos_x[-1] - 1 == 4


def test_footprint_disjoint_for_presets(grid):
    for name, asm in standard_assemblies().items():
        fp = footprint(asm, grid, (60.0, 60.0))
        assert not (cells_set(fp.positive) & cells_set(fp.negative)), name


def test_comb_teeth_interleave_along_y(grid):
    comb = Comb(teeth=4, tooth_width_mm=4.0, tooth_length_mm=20.0, pitch_mm=12.0,
                spine_width_mm=3.0)
    asm = ElectrodeAssembly(comb, comb, separation_mm=4.0)
    fp = footprint(asm, grid, (60.0, 60.0))
    # walk a column through the tooth-overlap region and record the
    # polarity order of the bands it crosses
    pos, neg = cells_set(fp.positive), cells_set(fp.negative)
    col = 60
    bands = []
    for j in range(grid.dims[1]):
        tag = "p" if (col, j) in pos else ("n" if (col, j) in neg else None)
        if tag and (not bands or bands[-1] != tag):
            bands.append(tag)
    assert len(bands) == 8
    assert all(a != b for a, b in zip(bands, bands[1:]))


def test_footprint_translation_equivariance(grid):
    asm = standard_assemblies()["comb_default"]
    fp0 = footprint(asm, grid, (60.0, 60.0))
    fp1 = footprint(asm, grid, (61.0, 62.0))
    shift = np.array([1, 2])
    assert cells_set(fp0.positive + shift) == cells_set(fp1.positive)
    assert cells_set(fp0.negative + shift) == cells_set(fp1.negative)


def test_footprint_count_independent_of_position(grid):
    asm = standard_assemblies()["circular_default"]
    counts = set()
    for head in [(50.0, 50.0), (60.0, 57.0), (70.0, 64.0)]:
        fp = footprint(asm, grid, head)
        counts.add((len(fp.positive), len(fp.negative)))
    assert len(counts) == 1


def test_footprint_out_of_bounds(grid):
    asm = standard_assemblies()["plate_default"]
    with pytest.raises(OutOfDomainError) as e:
        footprint(asm, grid, (10.0, 60.0))
    assert "x" in str(e.value)


def test_shield_cells_cover_pair(grid):
    asm = ElectrodeAssembly(Plate(10, 10), Plate(10, 10), separation_mm=4.0, shield=True)
    fp = footprint(asm, grid, (60.0, 60.0))
    assert len(fp.shield) > 0
    covered = cells_set(fp.shield)
    assert cells_set(fp.positive) <= covered
    assert cells_set(fp.negative) <= covered
    assert fp.shield_z_plane_mm == fp.z_plane_mm - 1.0


def test_standard_assembly_defaults():
    presets = standard_assemblies()
    assert set(presets) == {"comb_default", "circular_default", "triangular_default",
                            "plate_default"}
    for name, asm in presets.items():
        assert asm.excitation_v == 5.0, name
        assert asm.lift_off_mm == 1.0, name
        assert asm.separation_mm == 4.0, name


def test_standard_assembly_areas_within_5pct():
    # independent analytic area formulas

    def area(shape):
        if isinstance(shape, Plate):
            return shape.width_mm * shape.height_mm
        if isinstance(shape, Circular):
            return np.pi * shape.radius_mm**2
        if isinstance(shape, Triangular):
            return shape.base_mm * shape.height_mm / 2
        if isinstance(shape, Comb):
            spine = shape.spine_width_mm * (
                (shape.teeth - 1) * shape.pitch_mm + shape.tooth_width_mm
            )
            return shape.teeth * shape.tooth_width_mm * shape.tooth_length_mm + spine
        raise AssertionError

    areas = {n: area(a.positive) for n, a in standard_assemblies().items()}
    assert max(areas.values()) / min(areas.values()) <= 1.05, areas


def test_invalid_assembly_rejected():
    with pytest.raises(ValueError):
        ElectrodeAssembly(Plate(10, 10), Plate(10, 10), separation_mm=0.0)
    with pytest.raises(ValueError):
        ElectrodeAssembly(Plate(10, 10), Plate(10, 10), lift_off_mm=-1.0)
    with pytest.raises(ValueError):
        ElectrodeAssembly(Plate(10, 10), Plate(10, 10), excitation_v=0.0)
    with pytest.raises(ValueError):
        Comb(teeth=2, tooth_width_mm=5.0, tooth_length_mm=10.0, pitch_mm=4.0,
             spine_width_mm=2.0)


def test_assembly_doc_roundtrip():
    from capascan.electrodes import assembly_from_doc, assembly_to_doc

    for asm in standard_assemblies().values():
        assert assembly_from_doc(assembly_to_doc(asm)) == asm
