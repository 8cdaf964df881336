"""Depth-type factored per-module hyperparameter multipliers.

Each hyperparameter kind carries one log2 multiplier per module type plus an
optional per-depth log2 vector; the multiplier applied to the tensor of type
``m`` at depth ``l`` is ``2**(type[m] + depth[l])``, composed multiplicatively
with the batch/horizon multipliers and the width/depth transfer factor.  The
factorisation is over-parameterised (a constant can move freely between the
depth vector and the type values), so depth vectors are gauge-fixed to mean
zero on construction, with the mean absorbed into the depth-indexed type
multipliers.

All multiplier arithmetic is in log2 space; search proposals multiply the
incumbent by ``2**x``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from hpxfer.sde import SDEMultipliers

__all__ = [
    "MultiplierKind",
    "ModuleType",
    "ModuleTypeTaxonomy",
    "PerModuleMultipliers",
    "FullMultiplierGrid",
    "KindLayout",
    "compose",
    "sde_factor_for",
    "interpolate_depth",
    "expand_kronecker",
    "project_to_kronecker",
    "project_to_typed_only",
    "free_parameter_count",
    "reference_taxonomy",
    "reference_layouts",
    "pack_layouts",
    "unpack_point",
    "multiplier_set_to_json",
    "multiplier_set_from_json",
]


class MultiplierKind(enum.Enum):
    LR = "lr"
    WEIGHT_DECAY = "weight_decay"
    EPS = "eps"
    ONE_MINUS_BETA1 = "one_minus_beta1"
    ONE_MINUS_BETA2 = "one_minus_beta2"
    INIT_STD = "init_std"
    # residual-branch multipliers are searchable like the optimizer kinds and
    # compose multiplicatively with the depth**(-alpha) wiring factor
    RESIDUAL = "residual"


OPTIMIZER_KINDS = (
    MultiplierKind.LR,
    MultiplierKind.WEIGHT_DECAY,
    MultiplierKind.EPS,
    MultiplierKind.ONE_MINUS_BETA1,
    MultiplierKind.ONE_MINUS_BETA2,
    MultiplierKind.INIT_STD,
)


@dataclass(frozen=True)
class ModuleType:
    """One searchable module type.

    ``depth_indexed`` marks block-local types (they consume the depth
    vector); ``residual`` marks the non-trainable residual-branch
    multipliers; ``random_init`` is False for tensors initialised at a
    constant (biases at zero, norm scales at one), which therefore carry no
    init-scale multiplier.
    """

    name: str
    depth_indexed: bool
    residual: bool = False
    random_init: bool = True


@dataclass(frozen=True)
class ModuleTypeTaxonomy:
    """Ordered, closed list of module types for one model family."""

    name: str
    version: int
    types: tuple[ModuleType, ...]

    def __post_init__(self) -> None:
        names = [t.name for t in self.types]
        if len(set(names)) != len(names):
            raise ValueError("module type names must be unique")

    def __contains__(self, type_name: str) -> bool:
        return any(t.name == type_name for t in self.types)

    def get(self, type_name: str) -> ModuleType:
        for t in self.types:
            if t.name == type_name:
                return t
        raise KeyError(f"module type {type_name!r} not in taxonomy {self.name!r}")

    @property
    def trainable(self) -> tuple[ModuleType, ...]:
        return tuple(t for t in self.types if not t.residual)

    @property
    def residual_types(self) -> tuple[ModuleType, ...]:
        return tuple(t for t in self.types if t.residual)

    def depth_indexed_names(self) -> frozenset[str]:
        return frozenset(t.name for t in self.types if t.depth_indexed)


def reference_taxonomy() -> ModuleTypeTaxonomy:
    """The 13-type reference taxonomy used for counting and defaults.

    Nine block-local types (including the two residual-branch multipliers)
    and four types outside the blocks.
    """
    block = [
        ModuleType("qk_norm_scale", True, random_init=False),
        ModuleType("qkv_weight", True),
        ModuleType("attn_out_weight", True),
        ModuleType("mlp_in_weight", True),
        ModuleType("mlp_out_weight", True),
        ModuleType("hidden_bias", True, random_init=False),
        ModuleType("block_norm_scale", True, random_init=False),
        ModuleType("residual_mha", True, residual=True, random_init=False),
        ModuleType("residual_mlp", True, residual=True, random_init=False),
    ]
    outer = [
        ModuleType("input_embedding", False),
        ModuleType("unembed_weight", False),
        ModuleType("unembed_bias", False, random_init=False),
        ModuleType("final_norm_scale", False, random_init=False),
    ]
    return ModuleTypeTaxonomy(name="reference", version=1, types=tuple(block + outer))


@dataclass(frozen=True)
class PerModuleMultipliers:
    """Log2 multipliers for one hyperparameter kind.

    ``depth_mult`` (if present) is gauge-fixed to mean zero on construction;
    the mean is folded into the type multipliers of every depth-indexed
    type so composed values are unchanged.
    """

    kind: MultiplierKind
    type_mult: dict[str, float]
    depth_mult: np.ndarray | None
    depth_types: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.depth_mult is not None:
            vec = np.asarray(self.depth_mult, dtype=np.float64)
            if vec.ndim != 1 or vec.size < 1:
                raise ValueError("depth_mult must be a nonempty 1-d vector")
            if not np.all(np.isfinite(vec)):
                raise ValueError("depth_mult entries must be finite")
            mean = float(vec.mean())
            if mean != 0.0:
                vec = vec - mean
                adjusted = dict(self.type_mult)
                for name in self.depth_types:
                    adjusted[name] = adjusted[name] + mean
                object.__setattr__(self, "type_mult", adjusted)
            object.__setattr__(self, "depth_mult", vec)
        if not all(np.isfinite(v) for v in self.type_mult.values()):
            raise ValueError("type multipliers must be finite")
        unknown = self.depth_types - set(self.type_mult)
        if unknown:
            raise ValueError(f"depth_types not present in type_mult: {sorted(unknown)}")

    @property
    def base_depth(self) -> int:
        return 0 if self.depth_mult is None else int(self.depth_mult.shape[0])

    @classmethod
    def neutral(
        cls,
        kind: MultiplierKind,
        taxonomy: ModuleTypeTaxonomy,
        types: Iterable[str],
        depth: int | None,
    ) -> "PerModuleMultipliers":
        """All multipliers 1.0 (log2 value 0) for the given types."""
        names = tuple(types)
        depth_names = frozenset(n for n in names if taxonomy.get(n).depth_indexed)
        return cls(
            kind=kind,
            type_mult={n: 0.0 for n in names},
            depth_mult=None if depth is None else np.zeros(depth),
            depth_types=depth_names,
        )


def sde_factor_for(kind: MultiplierKind, mults: SDEMultipliers | None) -> float:
    """The batch/horizon multiplier entering the composition for one kind."""
    if mults is None:
        return 1.0
    return {
        MultiplierKind.LR: mults.m_eta,
        MultiplierKind.WEIGHT_DECAY: mults.m_lambda,
        MultiplierKind.EPS: mults.m_eps,
        MultiplierKind.ONE_MINUS_BETA1: mults.m_one_minus_beta,
        MultiplierKind.ONE_MINUS_BETA2: mults.m_one_minus_beta,
        MultiplierKind.INIT_STD: 1.0,
        MultiplierKind.RESIDUAL: 1.0,
    }[kind]


def compose(
    mults: PerModuleMultipliers,
    module: str,
    depth_index: int | None = None,
    sde: SDEMultipliers | None = None,
    cp_factor: float = 1.0,
) -> float:
    """Final multiplier for one tensor: 2**(type + depth) * sde * transfer.

    ``depth_index`` is 1-based and required for depth-indexed modules when a
    depth vector is present; non-depth-indexed modules contribute no depth
    term.
    """
    if module not in mults.type_mult:
        raise KeyError(f"module type {module!r} outside this multiplier set")
    log2 = mults.type_mult[module]
    if mults.depth_mult is not None and module in mults.depth_types:
        if depth_index is None:
            raise ValueError(f"depth-indexed module {module!r} requires depth_index")
        if not 1 <= depth_index <= mults.base_depth:
            raise ValueError(
                f"depth_index {depth_index} out of range 1..{mults.base_depth}"
            )
        log2 = log2 + float(mults.depth_mult[depth_index - 1])
    return 2.0**log2 * sde_factor_for(mults.kind, sde) * cp_factor


def interpolate_depth(mults: PerModuleMultipliers, new_depth: int) -> PerModuleMultipliers:
    """Resample the depth vector onto ``new_depth`` layers.

    Knots sit at relative depth l/L for the base vector; the new vector
    samples the piecewise-linear interpolant at l'/L', constant beyond the
    first knot.  The result is re-gauged, so the interpolated mean moves into
    the type multipliers.
    """
    if new_depth < 1:
        raise ValueError("new_depth must be >= 1")
    if mults.depth_mult is None:
        raise ValueError("multiplier set has no depth vector to interpolate")
    base_depth = mults.base_depth
    knots = np.arange(1, base_depth + 1) / base_depth
    targets = np.arange(1, new_depth + 1) / new_depth
    values = np.interp(targets, knots, mults.depth_mult)
    return PerModuleMultipliers(
        kind=mults.kind,
        type_mult=dict(mults.type_mult),
        depth_mult=values,
        depth_types=mults.depth_types,
    )


@dataclass(frozen=True)
class FullMultiplierGrid:
    """Fully uncoupled log2 multipliers: one value per (type, depth) pair."""

    kind: MultiplierKind
    types: tuple[str, ...]
    values: np.ndarray  # shape (len(types), depth)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape[0] != len(self.types):
            raise ValueError("grid row count must match the number of types")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid entries must be finite")
        object.__setattr__(self, "values", values)


def expand_kronecker(mults: PerModuleMultipliers) -> FullMultiplierGrid:
    """grid[m][l] = type[m] + depth[l] over the depth-indexed types."""
    if mults.depth_mult is None:
        raise ValueError("multiplier set has no depth vector to expand")
    types = tuple(n for n in mults.type_mult if n in mults.depth_types)
    rows = np.array([mults.type_mult[n] for n in types])[:, None]
    return FullMultiplierGrid(
        kind=mults.kind, types=types, values=rows + mults.depth_mult[None, :]
    )


def project_to_kronecker(grid: FullMultiplierGrid) -> PerModuleMultipliers:
    """Least-squares projection onto the additive type+depth subspace.

    Row means give the type values and centred column means the depth
    vector; under the mean-zero gauge this is the exact least-squares
    solution for the additive model.
    """
    row_mean = grid.values.mean(axis=1)
    col_mean = grid.values.mean(axis=0)
    grand = grid.values.mean()
    return PerModuleMultipliers(
        kind=grid.kind,
        type_mult={name: float(m) for name, m in zip(grid.types, row_mean)},
        depth_mult=col_mean - grand,
        depth_types=frozenset(grid.types),
    )


def project_to_typed_only(grid: FullMultiplierGrid) -> PerModuleMultipliers:
    """Row-mean projection: one value per type, zero depth vector."""
    row_mean = grid.values.mean(axis=1)
    return PerModuleMultipliers(
        kind=grid.kind,
        type_mult={name: float(m) for name, m in zip(grid.types, row_mean)},
        depth_mult=np.zeros(grid.values.shape[1]),
        depth_types=frozenset(grid.types),
    )


# ---------------------------------------------------------------------------
# Search-space layout: which kinds are searched over which types, and which
# carry a depth vector.  The flat log2 vector seen by the search packs these
# layouts in order.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KindLayout:
    kind: MultiplierKind
    types: tuple[str, ...]
    depth: int | None

    @property
    def size(self) -> int:
        return len(self.types) + (self.depth or 0)


def free_parameter_count(layouts: Sequence[KindLayout]) -> int:
    """Total searchable multipliers: per kind, one per type plus the depth vector."""
    return sum(layout.size for layout in layouts)


def reference_layouts(depth: int = 4) -> tuple[KindLayout, ...]:
    """The joint search configuration over the reference taxonomy.

    Learning rate and epsilon (the kinds with depth-dependent transfer
    rules) and the init scale (the classic per-depth residual-initialisation
    knob) are additionally tuned per depth.  Init-scale multipliers exist
    only for randomly-initialised tensors, i.e. the six weight types;
    constant-initialised biases and norm scales have none.  The two
    residual-branch multipliers form their own depth-indexed kind.  For the
    default 4-block base model this counts
    (11+4) + 11 + (11+4) + 11 + 11 + (6+4) + (2+4) = 79 searchable values.
    """
    tax = reference_taxonomy()
    trainable = tuple(t.name for t in tax.trainable)
    init_types = tuple(t.name for t in tax.trainable if t.random_init)
    residual = tuple(t.name for t in tax.residual_types)
    return (
        KindLayout(MultiplierKind.LR, trainable, depth),
        KindLayout(MultiplierKind.WEIGHT_DECAY, trainable, None),
        KindLayout(MultiplierKind.EPS, trainable, depth),
        KindLayout(MultiplierKind.ONE_MINUS_BETA1, trainable, None),
        KindLayout(MultiplierKind.ONE_MINUS_BETA2, trainable, None),
        KindLayout(MultiplierKind.INIT_STD, init_types, depth),
        KindLayout(MultiplierKind.RESIDUAL, residual, depth),
    )


def pack_layouts(layouts: Sequence[KindLayout]) -> int:
    """Dimension of the flat search vector for these layouts."""
    return free_parameter_count(layouts)


def unpack_point(
    point: np.ndarray,
    layouts: Sequence[KindLayout],
    taxonomy: ModuleTypeTaxonomy,
) -> dict[MultiplierKind, PerModuleMultipliers]:
    """Slice a flat log2 search point into per-kind multiplier sets."""
    point = np.asarray(point, dtype=np.float64)
    if point.shape != (free_parameter_count(layouts),):
        raise ValueError(
            f"point has dimension {point.shape}, expected ({free_parameter_count(layouts)},)"
        )
    out: dict[MultiplierKind, PerModuleMultipliers] = {}
    offset = 0
    for layout in layouts:
        n = len(layout.types)
        type_mult = {name: float(point[offset + i]) for i, name in enumerate(layout.types)}
        offset += n
        depth_mult = None
        if layout.depth is not None:
            depth_mult = point[offset : offset + layout.depth].copy()
            offset += layout.depth
        depth_names = frozenset(
            n for n in layout.types if taxonomy.get(n).depth_indexed
        )
        out[layout.kind] = PerModuleMultipliers(
            kind=layout.kind,
            type_mult=type_mult,
            depth_mult=depth_mult,
            depth_types=depth_names,
        )
    return out


# ---------------------------------------------------------------------------
# Serialization: multiplier sets are the unit of transfer between search and
# training.
# ---------------------------------------------------------------------------

_FORMAT_VERSION = 1


def multiplier_set_to_json(
    mult_sets: Mapping[MultiplierKind, PerModuleMultipliers],
    taxonomy: ModuleTypeTaxonomy,
) -> str:
    doc = {
        "format_version": _FORMAT_VERSION,
        "taxonomy": {"name": taxonomy.name, "version": taxonomy.version},
        "kinds": [
            {
                "hp_kind": pm.kind.value,
                "type_mult": pm.type_mult,
                "depth_mult": None if pm.depth_mult is None else pm.depth_mult.tolist(),
                "depth_types": sorted(pm.depth_types),
                "base_depth": pm.base_depth,
            }
            for pm in mult_sets.values()
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def multiplier_set_from_json(
    text: str, taxonomy: ModuleTypeTaxonomy
) -> dict[MultiplierKind, PerModuleMultipliers]:
    doc = json.loads(text)
    if doc.get("format_version") != _FORMAT_VERSION:
        raise ValueError(f"unsupported multiplier-set format {doc.get('format_version')!r}")
    got = doc["taxonomy"]
    if (got["name"], got["version"]) != (taxonomy.name, taxonomy.version):
        raise ValueError(
            f"taxonomy mismatch: file has {got['name']} v{got['version']}, "
            f"expected {taxonomy.name} v{taxonomy.version}"
        )
    out: dict[MultiplierKind, PerModuleMultipliers] = {}
    for entry in doc["kinds"]:
        kind = MultiplierKind(entry["hp_kind"])
        depth = entry["depth_mult"]
        out[kind] = PerModuleMultipliers(
            kind=kind,
            type_mult={k: float(v) for k, v in entry["type_mult"].items()},
            depth_mult=None if depth is None else np.asarray(depth, dtype=np.float64),
            depth_types=frozenset(entry["depth_types"]),
        )
    return out
