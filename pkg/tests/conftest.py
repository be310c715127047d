import numpy as np
import pytest

from capascan import (
    AIR,
    CONCRETE,
    PLYWOOD,
    STEEL,
    Box,
    ConverterState,
    EmbeddedObject,
    EncoderModel,
    Plate,
    Scene,
    ElectrodeAssembly,
    SolverConfig,
)


@pytest.fixture(scope="session")
def small_air_scene():
    return Scene(extents_mm=(80.0, 80.0, 24.0), voxel_size_mm=2.0)


@pytest.fixture(scope="session")
def small_slab_scene():
    return Scene(
        extents_mm=(80.0, 80.0, 24.0),
        voxel_size_mm=2.0,
        layers=((PLYWOOD, 12.0),),
    )


@pytest.fixture(scope="session")
def bar_scene():
    """Thin metal bar under plywood, small enough for fast exact solves."""
    return Scene(
        extents_mm=(160.0, 80.0, 24.0),
        voxel_size_mm=2.0,
        layers=((PLYWOOD, 10.0),),
        objects=(
            EmbeddedObject(
                Box(width_mm=16.0, length_mm=60.0, height_mm=8.0),
                position_mm=(80.0, 40.0, 16.0),
                material=STEEL,
                yaw_deg=90.0,
            ),
        ),
    )


@pytest.fixture(scope="session")
def plate_assembly():
    return ElectrodeAssembly(Plate(12.0, 12.0), Plate(12.0, 12.0), separation_mm=4.0)


@pytest.fixture(scope="session")
def fast_config():
    """Tight residual but lean padding; unit tests favor small domains."""
    return SolverConfig(pad_xy_mm=10.0, pad_top_mm=8.0, pad_bottom_mm=10.0,
                        min_domain_factor=2.0)


@pytest.fixture()
def quiet_converter():
    return ConverterState(rng_seed=1234)


@pytest.fixture(scope="session")
def encoder():
    return EncoderModel()
