import numpy as np
import pytest

from hpxfer.per_module import (
    FullMultiplierGrid,
    ModuleType,
    ModuleTypeTaxonomy,
    MultiplierKind,
    PerModuleMultipliers,
    compose,
    expand_kronecker,
    free_parameter_count,
    interpolate_depth,
    multiplier_set_from_json,
    multiplier_set_to_json,
    project_to_kronecker,
    project_to_typed_only,
    reference_layouts,
    reference_taxonomy,
    unpack_point,
)
from hpxfer.sde import SDEMultipliers


def tiny_taxonomy():
    return ModuleTypeTaxonomy(
        name="tiny",
        version=1,
        types=(
            ModuleType("w", True),
            ModuleType("v", True),
            ModuleType("emb", False),
        ),
    )


def make_mults(type_mult, depth, depth_types=("w", "v")):
    return PerModuleMultipliers(
        kind=MultiplierKind.LR,
        type_mult=dict(type_mult),
        depth_mult=None if depth is None else np.asarray(depth, dtype=float),
        depth_types=frozenset(depth_types),
    )


def test_compose_neutral_is_one():
    m = make_mults({"w": 0.0, "v": 0.0, "emb": 0.0}, [0.0, 0.0])
    assert compose(m, "w", 1) == 1.0
    assert compose(m, "emb") == 1.0


def test_compose_cancellation():
    m = make_mults({"w": 1.0, "v": 0.0}, [-1.0, 1.0])
    assert compose(m, "w", 1) == 1.0
    assert compose(m, "w", 2) == 4.0


def test_compose_with_sde_and_transfer_factor():
    m = make_mults({"w": 2.0, "v": 0.0}, None)
    sde = SDEMultipliers(m_eta=0.5, m_lambda=0.5, m_eps=2.0, m_one_minus_beta=0.25, m_steps=4.0)
    # direct scalar computation: 2**2 * 0.5 * 1.0
    assert compose(m, "w", sde=sde) == pytest.approx(4.0 * 0.5, rel=1e-15)
    assert compose(m, "w", sde=sde, cp_factor=0.25) == pytest.approx(0.5, rel=1e-15)


def test_compose_errors():
    m = make_mults({"w": 0.0, "v": 0.0}, [0.0, 0.0])
    with pytest.raises(KeyError):
        compose(m, "unknown", 1)
    with pytest.raises(ValueError):
        compose(m, "w", 3)
    with pytest.raises(ValueError):
        compose(m, "w")


def test_gauge_normalized_on_construction():
    m = make_mults({"w": 1.0, "v": 0.0, "emb": 0.5}, [1.0, 3.0], depth_types=("w", "v"))
    assert m.depth_mult.mean() == 0.0
    assert m.type_mult["w"] == 3.0  # absorbed mean 2
    assert m.type_mult["v"] == 2.0
    assert m.type_mult["emb"] == 0.5  # non-depth types untouched


def test_gauge_shift_is_invisible_to_compose():
    # dyadic values keep the arithmetic exact, so equality is bitwise
    a = make_mults({"w": 1.0, "v": -0.5}, [0.5, -0.5])
    c = 0.25
    b = make_mults({"w": 1.0 - c, "v": -0.5 - c}, [0.5 + c, -0.5 + c])
    for module in ("w", "v"):
        for depth in (1, 2):
            assert compose(a, module, depth) == compose(b, module, depth)


def test_interpolation_constant_profile():
    m = make_mults({"w": 0.7, "v": 0.0}, [0.0, 0.0, 0.0])
    out = interpolate_depth(m, 7)
    assert np.array_equal(out.depth_mult, np.zeros(7))
    assert out.type_mult == m.type_mult


def test_interpolation_two_to_four():
    a, b = -0.6, 0.6  # mean zero avoids a gauge shift in construction
    m = make_mults({"w": 0.0, "v": 0.0}, [a, b])
    out = interpolate_depth(m, 4)
    # composed log2 values must equal the interpolant sampled at l'/4:
    # {a, a, (a+b)/2, b} plus the (re-gauged) type multiplier
    expect = np.array([a, a, (a + b) / 2, b])
    got = np.array([np.log2(compose(out, "w", i)) for i in range(1, 5)])
    assert np.allclose(got, expect, atol=1e-12)


def test_interpolation_identity_up_to_gauge():
    m = make_mults({"w": 0.25, "v": -1.0}, [0.5, -0.25, -0.25])
    out = interpolate_depth(m, 3)
    for module in ("w", "v"):
        for depth in (1, 2, 3):
            assert compose(out, module, depth) == pytest.approx(
                compose(m, module, depth), rel=1e-14
            )


def test_interpolation_refinement_consistency():
    # linear profile: refining 2 -> 4 -> 8 equals going 2 -> 8 directly
    m = make_mults({"w": 0.0, "v": 0.0}, [-0.5, 0.5])
    via = interpolate_depth(interpolate_depth(m, 4), 8)
    direct = interpolate_depth(m, 8)
    for depth in range(1, 9):
        assert compose(via, "w", depth) == pytest.approx(
            compose(direct, "w", depth), rel=1e-14
        )


def test_interpolation_single_layer_constant_extension():
    m = make_mults({"w": 1.5, "v": 0.0}, [0.0])
    out = interpolate_depth(m, 5)
    assert np.array_equal(out.depth_mult, np.zeros(5))


def test_interpolation_errors():
    m = make_mults({"w": 0.0, "v": 0.0}, [0.0, 0.0])
    with pytest.raises(ValueError):
        interpolate_depth(m, 0)
    with pytest.raises(ValueError):
        interpolate_depth(make_mults({"w": 0.0, "v": 0.0}, None), 4)


def test_expand_zeros():
    m = make_mults({"w": 0.0, "v": 0.0}, [0.0, 0.0])
    grid = expand_kronecker(m)
    assert np.array_equal(grid.values, np.zeros((2, 2)))


def test_expand_additive():
    m = make_mults({"w": 0.0, "v": 1.0}, [-0.5, 0.5])
    grid = expand_kronecker(m)
    assert np.allclose(grid.values, [[-0.5, 0.5], [0.5, 1.5]])


def test_expand_separability_identity():
    rng = np.random.default_rng(0)
    m = make_mults({"w": 0.3, "v": -0.7}, rng.normal(size=5))
    g = expand_kronecker(m).values
    # grid[m][l] - grid[m][0] - grid[0][l] + grid[0][0] == 0 for additive grids
    sep = g - g[:, :1] - g[:1, :] + g[0, 0]
    assert np.allclose(sep, 0.0, atol=1e-12)


def test_project_recovers_separable_grid():
    m = make_mults({"w": 0.4, "v": -0.2}, [0.25, -0.5, 0.25])
    grid = expand_kronecker(m)
    back = project_to_kronecker(grid)
    residual = expand_kronecker(back).values - grid.values
    assert np.max(np.abs(residual)) < 1e-12
    for module in ("w", "v"):
        for depth in (1, 2, 3):
            assert compose(back, module, depth) == pytest.approx(
                compose(m, module, depth), rel=1e-14
            )


def test_project_checkerboard():
    grid = FullMultiplierGrid(MultiplierKind.LR, ("w", "v"), np.array([[0.0, 1.0], [1.0, 0.0]]))
    pm = project_to_kronecker(grid)
    assert pm.type_mult == {"w": 0.5, "v": 0.5}
    assert np.array_equal(pm.depth_mult, np.zeros(2))
    residual = grid.values - expand_kronecker(pm).values
    assert np.allclose(residual, [[-0.5, 0.5], [0.5, -0.5]])


def test_projection_is_least_squares():
    """Brute-force oracle: solve the additive model with lstsq and compare."""
    rng = np.random.default_rng(42)
    n_types, depth = 4, 6
    values = rng.normal(size=(n_types, depth))
    grid = FullMultiplierGrid(MultiplierKind.EPS, tuple(f"t{i}" for i in range(n_types)), values)
    pm = project_to_kronecker(grid)
    fitted = expand_kronecker(pm).values

    # design matrix over (type one-hot | depth one-hot), least squares fit
    rows = []
    for i in range(n_types):
        for j in range(depth):
            row = np.zeros(n_types + depth)
            row[i] = 1.0
            row[n_types + j] = 1.0
            rows.append(row)
    design = np.array(rows)
    coef, *_ = np.linalg.lstsq(design, values.reshape(-1), rcond=None)
    brute = (coef[:n_types, None] + coef[None, n_types:]).reshape(n_types, depth)
    assert np.allclose(fitted, brute, atol=1e-10)

    # no candidate in the subspace fits better
    best = np.linalg.norm(fitted - values)
    for _ in range(50):
        t = rng.normal(size=n_types)
        d = rng.normal(size=depth)
        cand = t[:, None] + d[None, :]
        assert np.linalg.norm(cand - values) >= best - 1e-12


def test_project_expand_roundtrip_idempotent():
    rng = np.random.default_rng(7)
    grid = FullMultiplierGrid(MultiplierKind.LR, ("a", "b", "c"), rng.normal(size=(3, 4)))
    once = project_to_kronecker(grid)
    twice = project_to_kronecker(expand_kronecker(once))
    assert np.allclose(expand_kronecker(once).values, expand_kronecker(twice).values, atol=1e-14)


def test_typed_only_projection():
    grid = FullMultiplierGrid(MultiplierKind.LR, ("w",), np.array([[0.0, 2.0]]))
    pm = project_to_typed_only(grid)
    assert pm.type_mult == {"w": 1.0}
    assert np.array_equal(pm.depth_mult, np.zeros(2))
    again = project_to_typed_only(expand_kronecker(pm))
    assert again.type_mult == pm.type_mult
    assert np.array_equal(again.depth_mult, pm.depth_mult)


def test_typed_only_recovers_depth_free_grid():
    m = make_mults({"w": 0.8, "v": -0.4}, [0.0, 0.0, 0.0])
    pm = project_to_typed_only(expand_kronecker(m))
    assert pm.type_mult["w"] == pytest.approx(0.8)
    assert pm.type_mult["v"] == pytest.approx(-0.4)


def test_reference_parameter_count_is_79():
    assert free_parameter_count(reference_layouts(depth=4)) == 79


def test_reference_taxonomy_shape():
    tax = reference_taxonomy()
    assert len(tax.types) == 13
    assert len(tax.trainable) == 11
    assert len(tax.residual_types) == 2
    assert "qk_norm_scale" in tax
    with pytest.raises(KeyError):
        tax.get("nonexistent")


def test_unpack_point_roundtrip():
    tax = reference_taxonomy()
    layouts = reference_layouts(depth=4)
    dim = free_parameter_count(layouts)
    rng = np.random.default_rng(3)
    point = rng.normal(size=dim)
    sets = unpack_point(point, layouts, tax)
    assert set(sets) == {layout.kind for layout in layouts}
    lr = sets[MultiplierKind.LR]
    assert len(lr.type_mult) == 11
    assert lr.base_depth == 4
    # depth-indexed types pick up the depth term, outer types do not
    v = compose(lr, "qkv_weight", 2)
    assert v > 0
    compose(lr, "input_embedding")  # no depth index needed
    with pytest.raises(ValueError):
        unpack_point(point[:-1], layouts, tax)


def test_serialization_roundtrip():
    tax = reference_taxonomy()
    layouts = reference_layouts(depth=4)
    rng = np.random.default_rng(5)
    sets = unpack_point(rng.normal(size=free_parameter_count(layouts)), layouts, tax)
    text = multiplier_set_to_json(sets, tax)
    back = multiplier_set_from_json(text, tax)
    assert set(back) == set(sets)
    for kind, pm in sets.items():
        other = back[kind]
        assert other.type_mult == pytest.approx(pm.type_mult)
        if pm.depth_mult is None:
            assert other.depth_mult is None
        else:
            assert np.allclose(other.depth_mult, pm.depth_mult)
        assert other.depth_types == pm.depth_types


def test_serialization_rejects_wrong_taxonomy():
    tax = reference_taxonomy()
    layouts = reference_layouts(depth=2)
    sets = unpack_point(
        np.zeros(free_parameter_count(layouts)), layouts, tax
    )
    text = multiplier_set_to_json(sets, tax)
    with pytest.raises(ValueError):
        multiplier_set_from_json(text, tiny_taxonomy())


def test_taxonomy_rejects_duplicates():
    with pytest.raises(ValueError):
        ModuleTypeTaxonomy("dup", 1, (ModuleType("a", True), ModuleType("a", False)))
