"""Per-tensor hyperparameter resolution across width, depth, batch and token scale.

Every trainable tensor of a decoder-only transformer is classified into a
:class:`TensorRole`.  Given base hyperparameters tuned at some reference scale
and the :class:`ScaleRatios` relating the target model to that reference,
:func:`resolve` returns the hyperparameters the target model should train
with.  Two rule sets are supported:

* ``MUP`` -- width-only scaling (no depth, batch or token-horizon factors).
* ``COMPLETE_DP`` -- width and depth scaling with corrections for
  head-shared query/key-norm parameters and the embedding epsilon, plus the
  square-root batch/horizon rules derived from the AdamW diffusion limit.

All ratios are target/base: ``width=2`` means the target is twice as wide.

The rule set also ships as a versioned data file
(``data/scaling_table_v1.json``) that encodes each (role, hyperparameter,
variant) cell as exponents on the five scale quantities.  The data file is an
independent encoding used to cross-check this module; :func:`resolve` never
reads it.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from importlib import resources

__all__ = [
    "TensorRole",
    "Parameterisation",
    "HPKind",
    "ScaleRatios",
    "BaseHyperParams",
    "ResolvedHyperParams",
    "TensorDescriptor",
    "classify_tensor",
    "resolve",
    "scale_factor",
    "residual_multiplier",
    "adamlh_lambda_multiplier",
    "load_rule_table",
    "rule_table_factor",
]


class TensorRole(enum.Enum):
    """Closed taxonomy of trainable-tensor roles; one role per tensor."""

    INPUT_EMBEDDING = "input_embedding"
    HIDDEN_WEIGHT = "hidden_weight"
    HIDDEN_BIAS_OR_NORM = "hidden_bias_or_norm"
    QK_NORM = "qk_norm"
    UNEMBED_NORM = "unembed_norm"
    UNEMBED_WEIGHT = "unembed_weight"
    RESIDUAL_MHA = "residual_mha"
    RESIDUAL_MLP = "residual_mlp"


RESIDUAL_ROLES = frozenset({TensorRole.RESIDUAL_MHA, TensorRole.RESIDUAL_MLP})


class Parameterisation(enum.Enum):
    MUP = "mup"
    COMPLETE_DP = "complete_dp"


class HPKind(enum.Enum):
    """The per-tensor hyperparameters the rule table scales."""

    LR = "lr"
    INIT_VAR = "init_var"
    EPS = "eps"
    WEIGHT_DECAY = "weight_decay"
    ONE_MINUS_BETA1 = "one_minus_beta1"
    ONE_MINUS_BETA2 = "one_minus_beta2"


@dataclass(frozen=True)
class ScaleRatios:
    """Target/base scale ratios plus the residual depth exponent.

    ``alpha`` governs the per-block residual multiplier ``depth**-alpha`` and
    the depth exponents of the learning-rate and epsilon rules; it must lie
    in [0.5, 1].  Identity ratios (all 1.0) resolve every hyperparameter to
    its base value exactly.
    """

    width: float = 1.0
    depth: float = 1.0
    batch: float = 1.0
    tokens: float = 1.0
    alpha: float = 1.0

    def __post_init__(self) -> None:
        for name in ("width", "depth", "batch", "tokens"):
            value = getattr(self, name)
            if not value > 0.0:
                raise ValueError(f"ratio {name!r} must be positive, got {value}")
        if not 0.5 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0.5, 1], got {self.alpha}")

    def compose(self, other: "ScaleRatios") -> "ScaleRatios":
        """Elementwise product of ratios; alpha must agree."""
        if other.alpha != self.alpha:
            raise ValueError("cannot compose ratios with different alpha")
        return ScaleRatios(
            width=self.width * other.width,
            depth=self.depth * other.depth,
            batch=self.batch * other.batch,
            tokens=self.tokens * other.tokens,
            alpha=self.alpha,
        )


@dataclass(frozen=True)
class BaseHyperParams:
    """Hyperparameters at the reference scale (AdamW semantics)."""

    lr: float
    init_var: float
    eps: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.95

    def __post_init__(self) -> None:
        if not self.lr > 0.0:
            raise ValueError("lr must be positive")
        if not self.init_var > 0.0:
            raise ValueError("init_var must be positive")
        if not self.eps > 0.0:
            raise ValueError("eps must be positive")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be nonnegative")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {b}")


@dataclass(frozen=True)
class ResolvedHyperParams:
    """Per-tensor hyperparameters after all scaling rules.

    ``residual_mult`` is set only for residual roles.  ``momentum_clamped``
    flags that a resolved (1 - beta) exceeded 1 and was clamped; callers must
    surface the flag rather than ignore it.
    """

    lr: float
    init_var: float
    eps: float
    weight_decay: float
    beta1: float
    beta2: float
    num_steps_multiplier: float
    residual_mult: float | None = None
    momentum_clamped: bool = False

    def as_base(self) -> BaseHyperParams:
        """Reinterpret as base hyperparameters (for rule composition)."""
        return BaseHyperParams(
            lr=self.lr,
            init_var=self.init_var,
            eps=self.eps,
            weight_decay=self.weight_decay,
            beta1=self.beta1,
            beta2=self.beta2,
        )


@dataclass(frozen=True)
class TensorDescriptor:
    """Structural description of one trainable tensor.

    ``location`` is ``"embedding"``, ``"block"`` or ``"unembedding"``;
    ``kind`` is one of ``"weight"``, ``"bias"``, ``"norm_scale"``,
    ``"qk_norm"``, ``"residual_mha"``, ``"residual_mlp"``.  ``block_index``
    is required for block-local tensors.
    """

    location: str
    kind: str
    block_index: int | None = None


_BLOCK_KIND_ROLES = {
    "weight": TensorRole.HIDDEN_WEIGHT,
    "bias": TensorRole.HIDDEN_BIAS_OR_NORM,
    "norm_scale": TensorRole.HIDDEN_BIAS_OR_NORM,
    "qk_norm": TensorRole.QK_NORM,
    "residual_mha": TensorRole.RESIDUAL_MHA,
    "residual_mlp": TensorRole.RESIDUAL_MLP,
}

_UNEMBED_KIND_ROLES = {
    "weight": TensorRole.UNEMBED_WEIGHT,
    "bias": TensorRole.UNEMBED_NORM,
    "norm_scale": TensorRole.UNEMBED_NORM,
}


def classify_tensor(descriptor: TensorDescriptor) -> TensorRole:
    """Map a tensor description onto its role.  Unknown kinds are an error.

    Query/key-norm scale parameters map to ``QK_NORM`` rather than
    ``HIDDEN_BIAS_OR_NORM`` because they are shared across attention heads
    and therefore follow different epsilon scaling.
    """
    loc, kind = descriptor.location, descriptor.kind
    if loc == "embedding":
        if kind == "weight":
            return TensorRole.INPUT_EMBEDDING
        raise ValueError(f"unrecognized embedding tensor kind {kind!r}")
    if loc == "block":
        if descriptor.block_index is None:
            raise ValueError("block tensors require a block_index")
        try:
            return _BLOCK_KIND_ROLES[kind]
        except KeyError:
            raise ValueError(f"unrecognized block tensor kind {kind!r}") from None
    if loc == "unembedding":
        try:
            return _UNEMBED_KIND_ROLES[kind]
        except KeyError:
            raise ValueError(f"unrecognized unembedding tensor kind {kind!r}") from None
    raise ValueError(f"unrecognized tensor location {loc!r}")


# Roles whose learning rate carries the 1/width factor.
_LR_WIDTH_ROLES = frozenset({TensorRole.HIDDEN_WEIGHT, TensorRole.UNEMBED_WEIGHT})
# Roles whose learning rate carries the depth**(alpha-1) factor.
_LR_DEPTH_ROLES = frozenset(
    {TensorRole.HIDDEN_WEIGHT, TensorRole.HIDDEN_BIAS_OR_NORM, TensorRole.QK_NORM}
)
# Roles whose epsilon carries the 1/width factor.  QK-norm scales are
# head-shared, so their gradient (and epsilon) stays O(1) in width.
_EPS_WIDTH_ROLES = frozenset(
    {TensorRole.HIDDEN_WEIGHT, TensorRole.HIDDEN_BIAS_OR_NORM, TensorRole.INPUT_EMBEDDING}
)
# Roles whose epsilon carries the depth**(-alpha) factor.
_EPS_DEPTH_ROLES = frozenset(
    {TensorRole.HIDDEN_WEIGHT, TensorRole.HIDDEN_BIAS_OR_NORM, TensorRole.QK_NORM}
)
# Roles whose weight decay carries the width factor; all other roles are
# the "rest" row (factor 1).
_WD_WIDTH_ROLES = frozenset({TensorRole.HIDDEN_WEIGHT, TensorRole.UNEMBED_WEIGHT})


def scale_factor(
    role: TensorRole,
    kind: HPKind,
    ratios: ScaleRatios,
    variant: Parameterisation = Parameterisation.COMPLETE_DP,
) -> float:
    """Multiplicative factor applied to the base value of one hyperparameter.

    Under ``MUP`` only the width rules apply.  ``COMPLETE_DP`` adds the depth
    rules and the batch/horizon block: lr and weight decay scale by
    sqrt(batch/tokens), epsilon by sqrt(tokens/batch) and both (1 - beta)
    terms by batch/tokens.
    """
    if not isinstance(role, TensorRole):
        raise ValueError(f"unknown tensor role {role!r}")
    w, d, a = ratios.width, ratios.depth, ratios.alpha
    complete = variant is Parameterisation.COMPLETE_DP
    factor = 1.0
    if kind is HPKind.LR:
        if role in _LR_WIDTH_ROLES:
            factor *= w**-1.0
        if complete and role in _LR_DEPTH_ROLES:
            factor *= d ** (a - 1.0)
    elif kind is HPKind.INIT_VAR:
        if role is TensorRole.HIDDEN_WEIGHT:
            factor *= w**-1.0
        elif role is TensorRole.UNEMBED_WEIGHT:
            factor *= w**-2.0
    elif kind is HPKind.EPS:
        if role in _EPS_WIDTH_ROLES:
            factor *= w**-1.0
        if complete and role in _EPS_DEPTH_ROLES:
            factor *= d**-a
    elif kind is HPKind.WEIGHT_DECAY:
        if role in _WD_WIDTH_ROLES:
            factor *= w
    elif kind in (HPKind.ONE_MINUS_BETA1, HPKind.ONE_MINUS_BETA2):
        pass
    else:
        raise ValueError(f"unknown hyperparameter kind {kind!r}")

    if complete:
        if kind in (HPKind.LR, HPKind.WEIGHT_DECAY):
            factor *= (ratios.batch / ratios.tokens) ** 0.5
        elif kind is HPKind.EPS:
            factor *= (ratios.tokens / ratios.batch) ** 0.5
        elif kind in (HPKind.ONE_MINUS_BETA1, HPKind.ONE_MINUS_BETA2):
            factor *= ratios.batch / ratios.tokens
    return factor


def residual_multiplier(ratios: ScaleRatios) -> float:
    """Per-block residual-branch multiplier, depth**(-alpha)."""
    return ratios.depth**-ratios.alpha


def adamlh_lambda_multiplier(m_eta: float) -> float:
    """Weight-decay multiplier for the decoupled (AdamLH) decay variant.

    When the decay term is not premultiplied by the learning rate, keeping
    the diffusion limit fixed requires the decay to scale as the square of
    the learning-rate multiplier.
    """
    if not m_eta > 0.0:
        raise ValueError("m_eta must be positive")
    return m_eta**2


def _apply(base: float, factor: float) -> float:
    # factor == 1.0 leaves the base bitwise unchanged
    return base if factor == 1.0 else base * factor


def resolve(
    role: TensorRole,
    base: BaseHyperParams,
    ratios: ScaleRatios,
    variant: Parameterisation = Parameterisation.COMPLETE_DP,
) -> ResolvedHyperParams:
    """Resolve one tensor's hyperparameters at the target scale.

    The momenta are resolved on (1 - beta); products that exceed 1 are
    clamped back to 1 and flagged via ``momentum_clamped``.  The resolved
    ``num_steps_multiplier`` is always tokens/batch: it tracks how the
    iteration count changes with the training configuration, independent of
    the parameterisation variant.
    """
    lr = _apply(base.lr, scale_factor(role, HPKind.LR, ratios, variant))
    init_var = _apply(base.init_var, scale_factor(role, HPKind.INIT_VAR, ratios, variant))
    eps = _apply(base.eps, scale_factor(role, HPKind.EPS, ratios, variant))
    wd = _apply(base.weight_decay, scale_factor(role, HPKind.WEIGHT_DECAY, ratios, variant))

    clamped = False
    betas = []
    for b, kind in ((base.beta1, HPKind.ONE_MINUS_BETA1), (base.beta2, HPKind.ONE_MINUS_BETA2)):
        one_minus = _apply(1.0 - b, scale_factor(role, kind, ratios, variant))
        if one_minus > 1.0:
            one_minus = 1.0
            clamped = True
        betas.append(1.0 - one_minus)

    residual_mult: float | None = None
    if role in RESIDUAL_ROLES:
        if variant is Parameterisation.COMPLETE_DP:
            residual_mult = residual_multiplier(ratios)
        else:
            residual_mult = 1.0

    return ResolvedHyperParams(
        lr=lr,
        init_var=init_var,
        eps=eps,
        weight_decay=wd,
        beta1=betas[0],
        beta2=betas[1],
        num_steps_multiplier=ratios.tokens / ratios.batch,
        residual_mult=residual_mult,
        momentum_clamped=clamped,
    )


def load_rule_table() -> dict:
    """Load the versioned machine-readable rule table shipped with the package."""
    text = resources.files("hpxfer").joinpath("data/scaling_table_v1.json").read_text()
    table = json.loads(text)
    if table.get("version") != 1:
        raise ValueError(f"unsupported rule-table version {table.get('version')!r}")
    return table


def rule_table_factor(cell: dict, ratios: ScaleRatios) -> float:
    """Literal exponent product for one rule-table record.

    Each record stores exponents on width, depth**alpha, depth**(alpha-1),
    batch and tokens.
    """
    return (
        ratios.width ** cell["width"]
        * (ratios.depth**ratios.alpha) ** cell["depth_alpha"]
        * (ratios.depth ** (ratios.alpha - 1.0)) ** cell["depth_alpha_minus_1"]
        * ratios.batch ** cell["batch"]
        * ratios.tokens ** cell["tokens"]
    )
