"""Run configuration: one JSON document driving every pipeline stage."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .detectability import FlatMtf, FlatNps, FluenceNps, FrequencyResponseModel, GaussianApertureMtf
from .errors import InvalidInputError
from .geometry import SystemGeometry
from .labeler import default_delta_min
from .model import TrainConfig
from .phantom import DEFAULT_DEFECT_RADIUS, DEFAULT_MU, GridSpec, Specimen, cube_grid_for_specimen, make_specimen
from .recon import ArtConfig

_MTF_KINDS = ("flat", "gaussian-aperture")
_NPS_KINDS = ("flat", "fluence")


def _mtf_from_obj(obj: dict) -> FrequencyResponseModel:
    kind = obj.get("kind", "gaussian-aperture")
    if kind == "flat":
        return FlatMtf(value=float(obj.get("value", 1.0)))
    if kind == "gaussian-aperture":
        return GaussianApertureMtf(sigma=float(obj.get("sigma", 0.1)))
    raise InvalidInputError(f"MTF kind must be one of {_MTF_KINDS}")


def _nps_from_obj(obj: dict) -> FrequencyResponseModel:
    kind = obj.get("kind", "fluence")
    if kind == "flat":
        return FlatNps(value=float(obj.get("value", 1.0)))
    if kind == "fluence":
        return FluenceNps(base=float(obj.get("base", 1.0)))
    raise InvalidInputError(f"NPS kind must be one of {_NPS_KINDS}")


@dataclass(eq=False)
class RunConfig:
    """Validated view of the run configuration document."""

    raw: dict
    out_dir: Path
    seed: int

    def __post_init__(self):
        # Fail early on anything structurally wrong.
        self.geometry()
        self.specimens()
        self.n_positions()
        self.k()
        self.mtf_model()
        self.nps_model()
        self.art_config()
        self.train_config()
        if not set(self.split()["train"]) <= {n for n, _ in self.specimens()}:
            raise InvalidInputError("train split references unknown specimens")
        if not set(self.split()["test"]) <= {n for n, _ in self.specimens()}:
            raise InvalidInputError("test split references unknown specimens")

    # -- sections ---------------------------------------------------------

    def geometry(self) -> SystemGeometry:
        g = self.raw.get("geometry", {})
        return SystemGeometry(
            source_isocentre_distance=float(g.get("source_isocentre_distance", 1.0)),
            detector_isocentre_distance=float(g.get("detector_isocentre_distance", 3.0)),
            detector_pixels=tuple(g.get("detector_pixels", (375, 375))),
            pixel_pitch=tuple(g.get("pixel_pitch", (400e-6, 400e-6))),
        )

    def specimen_params(self) -> dict:
        return self.raw.get("specimen", {})

    def specimens(self) -> list[tuple[str, Specimen]]:
        sp = self.specimen_params()
        entries = self.raw.get("specimens")
        if not entries:
            raise InvalidInputError("config must list at least one specimen")
        out = []
        for entry in entries:
            name = entry["name"]
            out.append(
                (
                    name,
                    make_specimen(
                        variant=sp.get("preset", "default"),
                        defect_centre=entry["defect_centre"],
                        mu=float(sp.get("mu", DEFAULT_MU)),
                        defect_radius=float(sp.get("defect_radius", DEFAULT_DEFECT_RADIUS)),
                    ),
                )
            )
        if len({n for n, _ in out}) != len(out):
            raise InvalidInputError("specimen names must be unique")
        return out

    def specimen_by_name(self, name: str) -> Specimen:
        for n, s in self.specimens():
            if n == name:
                return s
        raise InvalidInputError(f"unknown specimen {name!r}")

    def n_positions(self) -> int:
        n = int(self.raw.get("n_positions", 1000))
        if n < 1:
            raise InvalidInputError("n_positions must be at least 1")
        return n

    def k(self) -> int:
        k = int(self.raw.get("k", 100))
        if not (1 <= k <= self.n_positions()):
            raise InvalidInputError("k must lie in [1, n_positions]")
        return k

    def delta_min(self) -> float:
        raw = self.raw.get("delta_min", "auto")
        if raw == "auto":
            return default_delta_min(self.k())
        value = float(raw)
        if value < 0:
            raise InvalidInputError("delta_min must be non-negative")
        return value

    def photons(self) -> float | None:
        p = self.raw.get("photons")
        return None if p is None else float(p)

    def detectability_params(self) -> dict:
        return self.raw.get("detectability", {})

    def mtf_model(self) -> FrequencyResponseModel:
        return _mtf_from_obj(self.detectability_params().get("mtf", {}))

    def nps_model(self) -> FrequencyResponseModel:
        return _nps_from_obj(self.detectability_params().get("nps", {}))

    def roi_radius(self) -> float:
        r = float(self.detectability_params().get("roi_radius", 0.01))
        if r <= 0:
            raise InvalidInputError("roi radius must be positive")
        return r

    def task_grid(self, specimen: Specimen) -> GridSpec:
        n = int(self.detectability_params().get("task_grid", 16))
        return cube_grid_for_specimen(specimen, n)

    def recon_params(self) -> dict:
        return self.raw.get("recon", {})

    def recon_grid(self, specimen: Specimen) -> GridSpec:
        n = int(self.recon_params().get("grid_n", 32))
        return cube_grid_for_specimen(specimen, n)

    def art_config(self) -> ArtConfig:
        r = self.recon_params()
        return ArtConfig(
            iterations=int(r.get("iterations", 3)),
            relaxation=float(r.get("relaxation", 0.3)),
            row_order=r.get("row_order", "shuffled"),
            seed=int(r.get("seed", self.seed)),
            nonneg=bool(r.get("nonneg", True)),
        )

    def train_config(self) -> TrainConfig:
        t = self.raw.get("train", {})
        return TrainConfig(
            learning_rate=float(t.get("learning_rate", 3e-5)),
            epochs=int(t.get("epochs", 600)),
            eps=float(t.get("eps", 1.0)),
            k=self.k(),
            clamp=float(t.get("clamp", 0.01)),
            beta1=float(t.get("beta1", 0.9)),
            beta2=float(t.get("beta2", 0.999)),
            adam_epsilon=float(t.get("adam_epsilon", 1e-8)),
            seed=int(t.get("seed", self.seed)),
        )

    def split(self) -> dict:
        split = self.raw.get("split")
        if not split or "train" not in split or "test" not in split:
            raise InvalidInputError("config must define split.train and split.test")
        return split

    def evaluate_targets(self) -> list[str]:
        targets = self.raw.get("evaluate", {}).get("targets", "test")
        if targets == "test":
            return list(self.split()["test"])
        if targets == "all":
            return [n for n, _ in self.specimens()]
        return list(targets)

    def evaluate_slices(self) -> list[int] | None:
        slices = self.raw.get("evaluate", {}).get("slices")
        return None if slices is None else [int(s) for s in slices]

    def figures_enabled(self) -> bool:
        return bool(self.raw.get("evaluate", {}).get("figures", True))

    # -- output layout ------------------------------------------------------

    def specimen_dir(self, name: str) -> Path:
        return self.out_dir / "specimens" / name

    def projections_dir(self, name: str) -> Path:
        return self.specimen_dir(name) / "projections"

    def positions_path(self) -> Path:
        return self.out_dir / "positions.json"

    def pdi_path(self, name: str) -> Path:
        return self.specimen_dir(name) / "pdi.csv"

    def label_path(self, name: str) -> Path:
        return self.specimen_dir(name) / "label.json"

    def prediction_path(self, name: str) -> Path:
        return self.specimen_dir(name) / "prediction.json"

    def checkpoint_path(self) -> Path:
        return self.out_dir / "checkpoint.bin"

    def loss_history_path(self) -> Path:
        return self.out_dir / "loss_history.csv"

    def recon_path(self, name: str, method: str) -> Path:
        return self.specimen_dir(name) / f"recon_{method}"

    def report_path(self) -> Path:
        return self.out_dir / "report.csv"


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` overrides; values parse as JSON, else strings."""
    for item in overrides:
        if "=" not in item:
            raise InvalidInputError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise InvalidInputError(f"override {key!r} walks through a non-object")
        node[parts[-1]] = value
    return raw


def load_config(
    path,
    out: str | None = None,
    seed: int | None = None,
    overrides: list[str] | None = None,
) -> RunConfig:
    with open(path) as f:
        raw = json.load(f)
    if overrides:
        raw = apply_overrides(raw, overrides)
    out_dir = Path(out) if out is not None else Path(raw.get("out_dir", "run"))
    run_seed = int(seed) if seed is not None else int(raw.get("seed", 0))
    return RunConfig(raw=raw, out_dir=out_dir, seed=run_seed)
