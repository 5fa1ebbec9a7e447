"""Study configuration: flat INI sections with catalog names and numbers only."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields

from .geometry import CellGeometry
from .models import BoundaryFluxModel, FluxModel, SourceTerm

STUDY_KINDS = (
    "elliptic_convergence",
    "parabolic_convergence",
    "trace_convergence",
    "two_scale_residual",
    "verify",
    "boundary_identity",
    "uniqueness",
)


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.replace(",", " ").split()]


@dataclass
class StudyConfig:
    kind: str = "verify"
    seed: int = 0
    out: str = "results"
    threads: int = 1
    geometry: CellGeometry = field(default_factory=lambda: CellGeometry.disk(0.25))
    flux: FluxModel = field(default_factory=lambda: FluxModel("monotone_nonlinear", "sinprod",
                                                              mu=1.0))
    gflux: BoundaryFluxModel = field(default_factory=lambda: BoundaryFluxModel(
        "cos_angle", "sin2_angle", "soft_abs"))
    offsets: bool = True
    source: SourceTerm = field(default_factory=lambda: SourceTerm("cosprod", 50.0, 10.0))
    initial: SourceTerm = field(default_factory=lambda: SourceTerm("cos1", 1.0, 0.0))
    lam: float = 50.0
    lam_list: list[float] = field(default_factory=lambda: [0.0, 1.0, 10.0, 50.0])
    n_list: list[int] = field(default_factory=lambda: [4, 8, 16])
    cell_h: float = 0.125
    macro_h: float = 1.0 / 32
    macro_h_list: list[float] = field(default_factory=lambda: [1.0 / 8, 1.0 / 16])
    tol: float = 1e-10
    xi_box: float = 4.0
    u_box: float = 4.0
    table_res: tuple[int, int] = (17, 9)
    T: float = 1.0
    dt: float = 1.0 / 64
    trace_field: str = "cos_angle"
    samples: int = 10000
    probe_samples: int = 200
    starts: int = 5

    def validate(self) -> "StudyConfig":
        if self.kind not in STUDY_KINDS:
            raise ConfigError(f"unknown study kind {self.kind!r}")
        if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ConfigError("n list must be strictly increasing")
        if any(n < 3 for n in self.n_list):
            raise ConfigError("every n must be at least 3")
        if self.dt <= 0 or self.T <= 0:
            raise ConfigError("T and dt must be positive")
        if not 0 < self.cell_h <= 0.25:
            raise ConfigError("cell h must be in (0, 1/4]")
        BoundaryFluxModel(self.trace_field)
        return self

    def echo(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if hasattr(v, "__dataclass_fields__"):
                v = {k: (list(x) if isinstance(x, tuple) else x) for k, x in asdict(v).items()}
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out


def _geometry(sec) -> CellGeometry:
    shape = sec.get("shape", "disk")
    center = tuple(_floats(sec.get("center", "0, 0")))
    if shape == "none":
        return CellGeometry.none()
    if shape == "disk":
        return CellGeometry.disk(sec.getfloat("radius", 0.25), center)
    if shape == "square":
        return CellGeometry.square(sec.getfloat("half_width", 0.25), center)
    if shape == "polygon":
        v = _floats(sec["vertices"])
        return CellGeometry.polygon(list(zip(v[0::2], v[1::2])))
    raise ConfigError(f"unknown hole shape {shape!r}")


def parse_config(text: str) -> StudyConfig:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    cfg = StudyConfig()
    if cp.has_section("study"):
        s = cp["study"]
        cfg.kind = s.get("kind", cfg.kind)
        cfg.seed = s.getint("seed", cfg.seed)
        cfg.out = s.get("out", cfg.out)
        cfg.threads = s.getint("threads", cfg.threads)
    if cp.has_section("geometry"):
        cfg.geometry = _geometry(cp["geometry"])
    if cp.has_section("flux"):
        s = cp["flux"]
        kappa = s.get("kappa", "").strip()
        cfg.flux = FluxModel(
            kind=s.get("kind", "linear"),
            catalog_field=s.get("catalog_field", "identity"),
            kappa=float(kappa) if kappa else None,
            mu=s.getfloat("mu", 0.0),
        )
    if cp.has_section("gflux"):
        s = cp["gflux"]
        cfg.gflux = BoundaryFluxModel(
            alpha_field=s.get("alpha_field", "zero"),
            beta_field=s.get("beta_field", "zero"),
            gamma=s.get("gamma", "identity"),
        )
        cfg.offsets = s.getboolean("offsets", True)
    if cp.has_section("source"):
        s = cp["source"]
        cfg.source = SourceTerm(s.get("kind", "const"), s.getfloat("amp", 1.0),
                                s.getfloat("shift", 0.0))
    if cp.has_section("initial"):
        s = cp["initial"]
        cfg.initial = SourceTerm(s.get("kind", "cos1"), s.getfloat("amp", 1.0),
                                 s.getfloat("shift", 0.0))
    if cp.has_section("problem"):
        s = cp["problem"]
        cfg.lam = s.getfloat("lambda", cfg.lam)
        if "lambda_list" in s:
            cfg.lam_list = _floats(s["lambda_list"])
        if "n_list" in s:
            cfg.n_list = _ints(s["n_list"])
        cfg.tol = s.getfloat("tol", cfg.tol)
        cfg.starts = s.getint("starts", cfg.starts)
    if cp.has_section("mesh"):
        s = cp["mesh"]
        cfg.cell_h = s.getfloat("cell_h", cfg.cell_h)
        cfg.macro_h = s.getfloat("macro_h", cfg.macro_h)
        if "macro_h_list" in s:
            cfg.macro_h_list = _floats(s["macro_h_list"])
    if cp.has_section("table"):
        s = cp["table"]
        cfg.xi_box = s.getfloat("xi_box", cfg.xi_box)
        cfg.u_box = s.getfloat("u_box", cfg.u_box)
        if "resolution" in s:
            r = _ints(s["resolution"])
            cfg.table_res = (r[0], r[-1])
    if cp.has_section("parabolic"):
        s = cp["parabolic"]
        cfg.T = s.getfloat("T", cfg.T)
        cfg.dt = s.getfloat("dt", cfg.dt)
    if cp.has_section("trace"):
        cfg.trace_field = cp["trace"].get("q_field", cfg.trace_field)
    if cp.has_section("verify"):
        s = cp["verify"]
        cfg.samples = s.getint("samples", cfg.samples)
        cfg.probe_samples = s.getint("probe_samples", cfg.probe_samples)
    return cfg.validate()


def load_config(path) -> StudyConfig:
    with open(path) as fh:
        return parse_config(fh.read())
