import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hpxfer.scaling import (
    BaseHyperParams,
    HPKind,
    Parameterisation,
    ScaleRatios,
    TensorDescriptor,
    TensorRole,
    adamlh_lambda_multiplier,
    classify_tensor,
    load_rule_table,
    residual_multiplier,
    resolve,
    rule_table_factor,
    scale_factor,
)

MUP = Parameterisation.MUP
CDP = Parameterisation.COMPLETE_DP

BASE = BaseHyperParams(lr=1e-2, init_var=4e-4, eps=1e-8, weight_decay=0.1, beta1=0.9, beta2=0.95)


def test_hidden_weight_width_scaling():
    r = ScaleRatios(width=2.0)
    out = resolve(TensorRole.HIDDEN_WEIGHT, BASE, r, CDP)
    assert out.lr == pytest.approx(5e-3, rel=1e-12)
    assert out.init_var == pytest.approx(BASE.init_var / 2, rel=1e-12)
    assert out.eps == pytest.approx(BASE.eps / 2, rel=1e-12)
    assert out.weight_decay == pytest.approx(BASE.weight_decay * 2, rel=1e-12)


def test_hidden_weight_depth_scaling():
    r = ScaleRatios(depth=4.0, alpha=1.0)
    out = resolve(TensorRole.HIDDEN_WEIGHT, BASE, r, CDP)
    # depth**(alpha-1) is 1 at alpha=1; eps picks up depth**(-alpha)
    assert out.lr == BASE.lr
    assert out.eps == pytest.approx(BASE.eps / 4, rel=1e-12)
    assert out.weight_decay == BASE.weight_decay


def test_unembed_weight_width_scaling():
    r = ScaleRatios(width=4.0)
    out = resolve(TensorRole.UNEMBED_WEIGHT, BASE, r, CDP)
    assert out.init_var == pytest.approx(BASE.init_var / 16, rel=1e-12)
    assert out.lr == pytest.approx(BASE.lr / 4, rel=1e-12)
    assert out.eps == BASE.eps
    assert out.weight_decay == pytest.approx(BASE.weight_decay * 4, rel=1e-12)


def test_qk_norm_scaling():
    r = ScaleRatios(width=8.0, depth=2.0, alpha=0.5)
    out = resolve(TensorRole.QK_NORM, BASE, r, CDP)
    # head-shared parameters: no width factor on eps, only depth**(-alpha)
    assert out.eps == pytest.approx(BASE.eps * 2.0**-0.5, rel=1e-12)
    assert out.lr == pytest.approx(BASE.lr * 2.0 ** (0.5 - 1.0), rel=1e-12)


def test_input_embedding_scaling():
    r = ScaleRatios(width=4.0)
    out = resolve(TensorRole.INPUT_EMBEDDING, BASE, r, CDP)
    assert out.lr == BASE.lr
    assert out.init_var == BASE.init_var
    assert out.eps == pytest.approx(BASE.eps / 4, rel=1e-12)


@pytest.mark.parametrize("role", list(TensorRole))
@pytest.mark.parametrize("variant", [MUP, CDP])
def test_identity_ratios_bitwise(role, variant):
    out = resolve(role, BASE, ScaleRatios(), variant)
    assert out.lr == BASE.lr
    assert out.init_var == BASE.init_var
    assert out.eps == BASE.eps
    assert out.weight_decay == BASE.weight_decay
    assert out.beta1 == BASE.beta1
    assert out.beta2 == BASE.beta2
    assert out.num_steps_multiplier == 1.0
    assert not out.momentum_clamped


def test_mup_applies_width_only():
    r = ScaleRatios(width=4.0, depth=8.0, batch=16.0, tokens=2.0, alpha=0.5)
    out = resolve(TensorRole.HIDDEN_WEIGHT, BASE, r, MUP)
    assert out.lr == pytest.approx(BASE.lr / 4, rel=1e-12)
    assert out.eps == pytest.approx(BASE.eps / 4, rel=1e-12)
    assert out.weight_decay == pytest.approx(BASE.weight_decay * 4, rel=1e-12)
    assert out.beta1 == BASE.beta1 and out.beta2 == BASE.beta2
    # iteration-count bookkeeping is variant-independent
    assert out.num_steps_multiplier == pytest.approx(2.0 / 16.0, rel=1e-12)


def test_batch_horizon_column():
    r = ScaleRatios(batch=4.0, tokens=16.0)
    out = resolve(TensorRole.HIDDEN_WEIGHT, BASE, r, CDP)
    assert out.lr == pytest.approx(BASE.lr * 0.5, rel=1e-12)
    assert out.weight_decay == pytest.approx(BASE.weight_decay * 0.5, rel=1e-12)
    assert out.eps == pytest.approx(BASE.eps * 2.0, rel=1e-12)
    assert 1.0 - out.beta1 == pytest.approx((1.0 - BASE.beta1) * 0.25, rel=1e-12)
    assert 1.0 - out.beta2 == pytest.approx((1.0 - BASE.beta2) * 0.25, rel=1e-12)
    assert out.num_steps_multiplier == pytest.approx(4.0, rel=1e-12)


def test_momentum_clamp_is_flagged():
    base = BaseHyperParams(lr=1e-2, init_var=1e-4, eps=1e-8, beta1=0.5, beta2=0.9)
    out = resolve(TensorRole.HIDDEN_WEIGHT, base, ScaleRatios(batch=8.0), CDP)
    # (1 - beta1) * 8 = 4 > 1 clamps to 1
    assert out.beta1 == 0.0
    assert out.momentum_clamped
    assert 1.0 - out.beta2 == pytest.approx(0.8, rel=1e-12)


def test_residual_multiplier_values():
    assert residual_multiplier(ScaleRatios(depth=1.0, alpha=1.0)) == 1.0
    assert residual_multiplier(ScaleRatios(depth=4.0, alpha=1.0)) == pytest.approx(0.25)
    assert residual_multiplier(ScaleRatios(depth=4.0, alpha=0.5)) == pytest.approx(0.5)


def test_residual_roles_carry_multiplier():
    r = ScaleRatios(depth=4.0, alpha=1.0)
    assert resolve(TensorRole.RESIDUAL_MHA, BASE, r, CDP).residual_mult == pytest.approx(0.25)
    assert resolve(TensorRole.RESIDUAL_MLP, BASE, r, MUP).residual_mult == 1.0
    assert resolve(TensorRole.HIDDEN_WEIGHT, BASE, r, CDP).residual_mult is None


def test_classify_tensor():
    assert classify_tensor(TensorDescriptor("block", "qk_norm", 3)) == TensorRole.QK_NORM
    assert classify_tensor(TensorDescriptor("unembedding", "weight")) == TensorRole.UNEMBED_WEIGHT
    assert classify_tensor(TensorDescriptor("block", "bias", 0)) == TensorRole.HIDDEN_BIAS_OR_NORM
    assert classify_tensor(TensorDescriptor("embedding", "weight")) == TensorRole.INPUT_EMBEDDING
    assert classify_tensor(TensorDescriptor("unembedding", "norm_scale")) == TensorRole.UNEMBED_NORM
    assert classify_tensor(TensorDescriptor("block", "residual_mha", 1)) == TensorRole.RESIDUAL_MHA


def test_classify_tensor_rejects_unknown():
    with pytest.raises(ValueError):
        classify_tensor(TensorDescriptor("block", "banana", 0))
    with pytest.raises(ValueError):
        classify_tensor(TensorDescriptor("embedding", "qk_norm"))
    with pytest.raises(ValueError):
        classify_tensor(TensorDescriptor("block", "weight", None))
    with pytest.raises(ValueError):
        classify_tensor(TensorDescriptor("sideways", "weight"))


def test_adamlh_lambda_multiplier():
    assert adamlh_lambda_multiplier(1.0) == 1.0
    assert adamlh_lambda_multiplier(math.sqrt(2.0)) == pytest.approx(2.0, rel=1e-12)
    assert adamlh_lambda_multiplier(2.0) == 4.0
    with pytest.raises(ValueError):
        adamlh_lambda_multiplier(0.0)


def test_invalid_inputs_rejected():
    with pytest.raises(ValueError):
        ScaleRatios(width=0.0)
    with pytest.raises(ValueError):
        ScaleRatios(batch=-1.0)
    with pytest.raises(ValueError):
        ScaleRatios(alpha=0.4)
    with pytest.raises(ValueError):
        ScaleRatios(alpha=1.2)
    with pytest.raises(ValueError):
        BaseHyperParams(lr=-1.0, init_var=1.0, eps=1e-8)
    with pytest.raises(ValueError):
        BaseHyperParams(lr=1.0, init_var=1.0, eps=1e-8, beta1=1.0)
    with pytest.raises(ValueError):
        resolve("not-a-role", BASE, ScaleRatios())


# ---------------------------------------------------------------------------
# Golden-table equivalence: the shipped data file is an independent encoding
# of the same rules; enumerate every cell over a grid of ratio tuples.
# ---------------------------------------------------------------------------

RATIO_GRID = [
    ScaleRatios(),
    ScaleRatios(width=2.0),
    ScaleRatios(width=16.0),
    ScaleRatios(depth=2.0),
    ScaleRatios(depth=8.0, alpha=0.5),
    ScaleRatios(depth=3.0, alpha=0.75),
    ScaleRatios(batch=4.0),
    ScaleRatios(batch=0.5),
    ScaleRatios(tokens=4.0),
    ScaleRatios(tokens=0.25),
    ScaleRatios(batch=4.0, tokens=4.0),
    ScaleRatios(width=4.0, depth=4.0),
    ScaleRatios(width=8.0, depth=2.0, batch=2.0, tokens=8.0),
    ScaleRatios(width=0.5, depth=0.5, batch=0.5, tokens=0.5, alpha=0.5),
    ScaleRatios(width=3.0, depth=5.0, batch=7.0, tokens=11.0, alpha=0.6),
    ScaleRatios(width=1024.0, depth=32.0, batch=64.0, tokens=4096.0),
]


def test_golden_table_equivalence():
    table = load_rule_table()
    cells = table["cells"]
    assert len(cells) == len(TensorRole) * len(HPKind) * len(Parameterisation)
    seen = set()
    for cell in cells:
        role = TensorRole(cell["role"])
        kind = HPKind(cell["hp"])
        variant = Parameterisation(cell["variant"])
        key = (role, kind, variant)
        assert key not in seen
        seen.add(key)
        for ratios in RATIO_GRID:
            expected = rule_table_factor(cell, ratios)
            actual = scale_factor(role, kind, ratios, variant)
            assert actual == pytest.approx(expected, rel=1e-12), (role, kind, variant, ratios)


def test_variant_divergence_matches_scale_columns():
    """The two variants differ exactly where depth/batch/token exponents are nonzero."""
    table = load_rule_table()
    by_key = {(c["role"], c["hp"]): {} for c in table["cells"]}
    for c in table["cells"]:
        by_key[(c["role"], c["hp"])][c["variant"]] = c
    probe = ScaleRatios(width=3.0, depth=5.0, batch=7.0, tokens=11.0, alpha=0.75)
    for (role, hp), variants in by_key.items():
        cdp = variants["complete_dp"]
        differs = rule_table_factor(cdp, probe) != rule_table_factor(variants["mup"], probe)
        has_scale_column = (
            cdp["depth_alpha"] != 0
            or cdp["depth_alpha_minus_1"] != 0
            or cdp["batch"] != 0
            or cdp["tokens"] != 0
        )
        assert differs == has_scale_column, (role, hp)
        # width exponents always agree between the two variants
        assert cdp["width"] == variants["mup"]["width"], (role, hp)


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------

ratio_values = st.floats(min_value=0.25, max_value=8.0, allow_nan=False)
alphas = st.floats(min_value=0.5, max_value=1.0, allow_nan=False)


@st.composite
def ratios_strategy(draw, alpha=None):
    a = alpha if alpha is not None else draw(alphas)
    return ScaleRatios(
        width=draw(ratio_values),
        depth=draw(ratio_values),
        batch=draw(ratio_values),
        tokens=draw(ratio_values),
        alpha=a,
    )


@settings(max_examples=60, deadline=None)
@given(st.data(), st.sampled_from(list(TensorRole)), st.sampled_from([MUP, CDP]))
def test_composition_of_ratios(data, role, variant):
    alpha = data.draw(alphas)
    r1 = data.draw(ratios_strategy(alpha=alpha))
    r2 = data.draw(ratios_strategy(alpha=alpha))
    # use momenta close to 1 so no clamping occurs in the composed range
    base = BaseHyperParams(lr=3e-3, init_var=2e-4, eps=1e-9, weight_decay=0.05, beta1=0.999, beta2=0.9999)
    once = resolve(role, base, r1.compose(r2), variant)
    twice = resolve(role, resolve(role, base, r1, variant).as_base(), r2, variant)
    assert not once.momentum_clamped and not twice.momentum_clamped
    for field in ("lr", "init_var", "eps", "weight_decay"):
        assert getattr(twice, field) == pytest.approx(getattr(once, field), rel=1e-9)
    assert 1.0 - twice.beta1 == pytest.approx(1.0 - once.beta1, rel=1e-9)
    assert 1.0 - twice.beta2 == pytest.approx(1.0 - once.beta2, rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(min_value=1.0, max_value=64.0),
    st.floats(min_value=1.0, max_value=64.0),
    alphas,
)
def test_hidden_weight_monotonicity(scale_a, scale_b, alpha):
    assert scale_a <= scale_b or True  # ordering handled below
    lo, hi = min(scale_a, scale_b), max(scale_a, scale_b)
    # lr nonincreasing in width and tokens
    assert scale_factor(
        TensorRole.HIDDEN_WEIGHT, HPKind.LR, ScaleRatios(width=hi, alpha=alpha), CDP
    ) <= scale_factor(TensorRole.HIDDEN_WEIGHT, HPKind.LR, ScaleRatios(width=lo, alpha=alpha), CDP)
    assert scale_factor(
        TensorRole.HIDDEN_WEIGHT, HPKind.LR, ScaleRatios(tokens=hi, alpha=alpha), CDP
    ) <= scale_factor(TensorRole.HIDDEN_WEIGHT, HPKind.LR, ScaleRatios(tokens=lo, alpha=alpha), CDP)
    # eps nonincreasing in width and depth
    assert scale_factor(
        TensorRole.HIDDEN_WEIGHT, HPKind.EPS, ScaleRatios(width=hi, alpha=alpha), CDP
    ) <= scale_factor(TensorRole.HIDDEN_WEIGHT, HPKind.EPS, ScaleRatios(width=lo, alpha=alpha), CDP)
    assert scale_factor(
        TensorRole.HIDDEN_WEIGHT, HPKind.EPS, ScaleRatios(depth=hi, alpha=alpha), CDP
    ) <= scale_factor(TensorRole.HIDDEN_WEIGHT, HPKind.EPS, ScaleRatios(depth=lo, alpha=alpha), CDP)
