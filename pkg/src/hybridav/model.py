"""A complete single-model pipeline, its configuration and checkpoint files."""

from __future__ import annotations

import copy
import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import bfs as bfs_mod
from . import dml as dml_mod
from . import o2d2 as o2d2_mod
from . import ual as ual_mod
from .encoder import Document, EncoderParams, HashedNgramEncoder, encode
from .ensemble import ANSWER_NUDGE, NONRESPONSE
from .errors import DataError, InvalidConfig

CHECKPOINT_FORMAT = "hybridav-checkpoint/1"


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    # learning rate of the BFS and UAL layers; None = lr
    head_lr: float | None = 1e-2
    seed: int = 0
    # architecture
    d_feat: int = 4096
    d_emb: int = 128
    d_lev: int = 64
    d_bfs: int = 16
    d_ual: int = 32
    d_h1: int = 64
    d_h2: int = 32
    n_grams: tuple = (2, 3, 4, 5)
    min_tokens: int = 32
    encoder_init_scale: float = 0.1
    bfs_init_scale: float = 1.0
    # losses
    tau_s: float = dml_mod.TAU_S
    tau_d: float = dml_mod.TAU_D
    gamma: float = 1.0
    alpha: float = 1.0
    train_kernel: bool = True
    beta: float = ual_mod.DEFAULT_BETA
    # optimizer
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # inverted dropout on the hashed n-gram features during stage-1 training
    feature_dropout: float = 0.0
    # decoupled weight decay on the encoder and DML weight matrices
    weight_decay: float = 0.0
    # early stopping on the development overall score (0 disables)
    patience: int = 5
    # pairs per subset and epoch: an explicit count, or None to draw until every
    # eligible document has been used ``*_passes`` times
    train_passes: int = 4
    calib_passes: int = 8
    train_quotas: dict = field(default_factory=lambda: {"SA_SF": None, "SA_DF": None, "DA_SF": None, "DA_DF": None})
    calib_quotas: dict = field(default_factory=lambda: {"SA_SF": None, "SA_DF": None, "DA_SF": None, "DA_DF": None})
    # detector
    epsilon: float = 0.10
    eps_grid: tuple = o2d2_mod.EPS_GRID
    o2d2_epochs: int = 10
    o2d2_lr: float = 1e-3
    o2d2_batch_size: int = 32
    # "none": plain cross entropy; "inverse": inverse-frequency class weights
    o2d2_class_weighting: str = "none"

    def __post_init__(self):
        self.n_grams = tuple(int(n) for n in self.n_grams)
        self.eps_grid = tuple(float(e) for e in self.eps_grid)
        if self.epochs < 0 or self.batch_size < 1 or self.o2d2_batch_size < 1 or self.o2d2_epochs < 0:
            raise InvalidConfig("epochs must be >= 0 and batch sizes >= 1")
        if not (0.0 <= self.tau_d < self.tau_s <= 1.0):
            raise InvalidConfig(f"need 0 <= tau_d < tau_s <= 1, got {self.tau_s}, {self.tau_d}")
        if self.o2d2_class_weighting not in ("none", "inverse"):
            raise InvalidConfig(f"o2d2_class_weighting must be 'none' or 'inverse', got {self.o2d2_class_weighting!r}")
        if self.train_passes < 1 or self.calib_passes < 1:
            raise InvalidConfig("train_passes and calib_passes must be >= 1")
        if not 0.0 <= self.feature_dropout < 1.0:
            raise InvalidConfig("feature_dropout must lie in [0, 1)")
        if self.beta < 0:
            raise InvalidConfig("beta must be >= 0")
        if self.lr <= 0 or self.o2d2_lr <= 0 or (self.head_lr is not None and self.head_lr <= 0):
            raise InvalidConfig("learning rates must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_grams"] = list(self.n_grams)
        d["eps_grid"] = list(self.eps_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def replace(self, **kw) -> "TrainConfig":
        d = self.to_dict()
        d.update(kw)
        return TrainConfig.from_dict(d)


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ScoreOutput:
    y1: np.ndarray
    y2: np.ndarray
    p_dml: np.ndarray
    llr: np.ndarray
    p_bfs: np.ndarray
    cm: np.ndarray
    p_ual: np.ndarray   # p(H1) after uncertainty adaptation
    p_h2: np.ndarray    # detector output; zeros when no detector is trained

    def answers(self) -> np.ndarray:
        """Single-model PAN answers: 0.5 where the detector fires, else the UAL posterior."""
        values = np.where(self.p_ual == NONRESPONSE, NONRESPONSE - ANSWER_NUDGE, self.p_ual)
        return np.where(self.p_h2 >= 0.5, NONRESPONSE, values)


@dataclass
class DocTable:
    """Per-document quantities of a frozen stage-1 model."""

    index: dict
    y: np.ndarray


class Pipeline:
    """Encoder, DML, BFS and UAL layers plus an optional O2D2 detector."""

    def __init__(self, config: TrainConfig, encoder: EncoderParams, dml: dml_mod.DmlParams,
                 bfs: bfs_mod.BfsParams, ual: ual_mod.UalParams, o2d2: o2d2_mod.O2d2Params | None = None):
        self.config = config
        self.encoder = encoder
        self.dml = dml
        self.bfs = bfs
        self.ual = ual
        self.o2d2 = o2d2
        self.meta: dict = {}

    @classmethod
    def init(cls, config: TrainConfig, seed: int | None = None) -> "Pipeline":
        seed = config.seed if seed is None else seed
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        c = config
        return cls(
            c,
            EncoderParams.init(c.d_feat, c.d_emb, rng, c.encoder_init_scale),
            dml_mod.DmlParams.init(c.d_emb, c.d_lev, rng, gamma=c.gamma, alpha=c.alpha),
            bfs_mod.BfsParams.init(c.d_lev, c.d_bfs, rng, scale=c.bfs_init_scale),
            ual_mod.UalParams.init(c.d_lev, c.d_ual, rng, beta=c.beta),
        )

    def copy(self) -> "Pipeline":
        return copy.deepcopy(self)

    @property
    def doc_encoder(self) -> HashedNgramEncoder:
        return HashedNgramEncoder(self.encoder, self.config.n_grams, self.config.min_tokens)

    def components(self) -> dict[str, object]:
        out = {"encoder": self.encoder, "dml": self.dml, "bfs": self.bfs, "ual": self.ual}
        if self.o2d2 is not None:
            out["o2d2"] = self.o2d2
        return out

    # -- inference ---------------------------------------------------------

    def features(self, docs: Sequence[Document]) -> np.ndarray:
        return self.doc_encoder.features(docs)

    def levs_from_features(self, feats: np.ndarray) -> np.ndarray:
        return dml_mod.project(encode(feats, self.encoder), self.dml)

    def doc_table(self, docs: Sequence[Document], feats: np.ndarray | None = None) -> DocTable:
        """LEVs for a set of documents, rows ordered by document id."""
        unique = {}
        for d in docs:
            prev = unique.get(d.id)
            if prev is not None and prev.text != d.text:
                raise DataError(f"document id {d.id} used for two different texts")
            unique[d.id] = d
        ids = sorted(unique)
        ordered = [unique[i] for i in ids]
        if feats is None:
            feats = self.features(ordered)
        return DocTable({i: k for k, i in enumerate(ids)}, self.levs_from_features(feats))

    def score_levs(self, y1: np.ndarray, y2: np.ndarray) -> ScoreOutput:
        y1 = np.atleast_2d(y1)
        y2 = np.atleast_2d(y2)
        d = dml_mod.distance(y1, y2)
        p_dml = dml_mod.kernel_prob(d, self.dml.gamma, self.dml.alpha)
        fw = bfs_mod.bfs_forward(y1, y2, self.bfs)
        uf = ual_mod.ual_forward(y1, y2, fw.posterior, self.ual)
        p_ual = uf.p_ual[:, 1]
        if self.o2d2 is not None:
            p_h2 = o2d2_mod.o2d2_forward(o2d2_mod.build_input(y1, y2, uf.cm), self.o2d2)
        else:
            p_h2 = np.zeros_like(p_ual)
        return ScoreOutput(y1, y2, p_dml, fw.llr, fw.posterior, uf.cm, p_ual, p_h2)

    def score_pairs(self, table: DocTable, pairs: Sequence[tuple[str, str]]) -> ScoreOutput:
        i1 = np.array([table.index[a] for a, _ in pairs], dtype=int)
        i2 = np.array([table.index[b] for _, b in pairs], dtype=int)
        return self.score_levs(table.y[i1], table.y[i2])

    def score_trials(self, trials, table: DocTable | None = None) -> ScoreOutput:
        if table is None:
            table = self.doc_table([d for t in trials for d in (t.doc1, t.doc2)])
        return self.score_pairs(table, [(t.doc1.id, t.doc2.id) for t in trials])

    # -- persistence -------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, comp in self.components().items():
            for k, v in comp.arrays().items():
                out[f"{name}/{k}"] = v
        return out

    def param_digest(self, names: Sequence[str] | None = None) -> str:
        h = hashlib.sha256()
        for key, arr in sorted(self.state_arrays().items()):
            if names is not None and key.split("/")[0] not in names:
                continue
            h.update(key.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {
            "format": CHECKPOINT_FORMAT,
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "beta": self.ual.beta,
            "epsilon": None if self.o2d2 is None else self.o2d2.epsilon,
        }
        meta.update(self.meta)
        if extra_meta:
            meta.update(extra_meta)
        save_npz(path, self.state_arrays(), meta)

    @classmethod
    def load(cls, path) -> "Pipeline":
        arrays, meta = load_npz(path)
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"{path}: not a pipeline checkpoint")
        config = TrainConfig.from_dict(meta["config"])

        def part(prefix):
            return {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith(prefix + "/")}

        enc = EncoderParams(**part("encoder"))
        dml = dml_mod.DmlParams(**part("dml"))
        bfs = bfs_mod.BfsParams(**part("bfs"))
        ual = ual_mod.UalParams(**part("ual"), beta=meta["beta"])
        o2 = part("o2d2")
        o2d2 = o2d2_mod.O2d2Params(**o2, epsilon=meta["epsilon"]) if o2 else None
        pipe = cls(config, enc, dml, bfs, ual, o2d2)
        pipe.meta = {k: v for k, v in meta.items()
                     if k not in ("format", "config", "config_hash", "beta", "epsilon")}
        return pipe


_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


def save_npz(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """npz-compatible archive with fixed timestamps, so equal content gives equal bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        entries = dict(sorted(arrays.items()))
        entries["__meta__"] = np.frombuffer(blob, dtype=np.uint8)
        for name, arr in entries.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_FIXED_DATE), buf.getvalue())


def load_npz(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k].copy() for k in data.files if k != "__meta__"}
        if "__meta__" not in data.files:
            raise DataError(f"{path}: missing metadata")
        meta = json.loads(data["__meta__"].tobytes().decode("utf-8"))
    for k, v in arrays.items():
        if v.ndim == 0:
            arrays[k] = np.array(v)
    return arrays, meta


def save_bundle(directory, pipelines: Sequence[Pipeline], seeds: Sequence[int]) -> None:
    """Ensemble bundle: one checkpoint per member plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    members = []
    for m, (pipe, seed) in enumerate(zip(pipelines, seeds)):
        fname = f"member_{m:03d}.npz"
        pipe.save(directory / fname)
        members.append({"file": fname, "seed": int(seed)})
    manifest = {
        "format": "hybridav-bundle/1",
        "n_members": len(members),
        "config_hash": pipelines[0].config.hash() if pipelines else None,
        "members": members,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_bundle(directory) -> tuple[list[Pipeline], dict]:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise DataError(f"{directory}: no manifest.json") from exc
    pipes = [Pipeline.load(directory / m["file"]) for m in manifest["members"]]
    return pipes, manifest
