"""capascan: software twin of a capacitive subsurface-imaging scanner.

Pipeline: describe a Scene, pick an ElectrodeAssembly, run the field
solver or a full scan, stitch the session into a SubsurfaceImage, and
detect what hides under the surface.  The cli module batches every
study; the server module drives live interactive sessions.
"""

__version__ = "0.1.0"

from .electrodes import (
    Circular,
    Comb,
    ElectrodeAssembly,
    Plate,
    Triangular,
    footprint,
    standard_assemblies,
)
from .errors import (
    CapascanError,
    ConvergenceError,
    FrameError,
    OutOfDomainError,
    ProtocolError,
    SceneError,
    SessionFormatError,
)
from .imaging import Detection, SubsurfaceImage, assemble, classify, detect
from .scan import ScanPath, ScanSession, default_path, run_scan, stream_scan
from .scene import (
    AIR,
    CONCRETE,
    DRYWALL,
    PLYWOOD,
    STEEL,
    WOOD,
    Box,
    Cylinder,
    EmbeddedObject,
    Material,
    PermittivityGrid,
    Scene,
    load_scene_file,
    preset,
    rasterize,
    save_scene_file,
    validate,
)
from .sensor import ConverterState, EncoderModel, ScanSample, measure, tick_distance
from .session_io import load_session, save_session, session_digest
from .solver import (
    PotentialField,
    SolverConfig,
    capacitance_charge,
    capacitance_energy,
    centerline_profile,
    sensitivity_map,
    solve,
    solve_plate_capacitor,
    sweep,
)
from .wire import Frame, FrameParser, encode_frame, parse_stream
