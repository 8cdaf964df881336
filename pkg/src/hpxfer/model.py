"""Minimal decoder-only transformer in numpy with hand-written backprop.

Pre-norm blocks with RMS norms (scale only, no biases anywhere), optional
query/key norms whose scale parameters are shared across heads, a learned
positional embedding, and a cross-entropy readout.  Width is scaled by the
head count at fixed head dimension.  The operator set is fixed, so the
backward pass is written out directly and checked against finite differences
in the test suite.

Every trainable tensor is tagged with its role and module type at
construction, and carries the hyperparameters resolved for the requested
parameterisation ("sp", "mup" or "complete_dp").  The "sp" reference mode
uses fan-in initialisation, base optimizer settings at every width,
1/sqrt(head_dim) attention and unscaled residuals.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from hpxfer.per_module import MultiplierKind, PerModuleMultipliers, compose
from hpxfer.scaling import (
    BaseHyperParams,
    Parameterisation,
    ResolvedHyperParams,
    ScaleRatios,
    TensorRole,
    resolve,
)

__all__ = ["ModelConfig", "TensorSpec", "DeskTransformer"]

_NORM_EPS = 1e-8


@dataclass(frozen=True)
class ModelConfig:
    width: int
    depth: int
    head_dim: int = 16
    vocab: int = 64
    max_seq_len: int = 64
    alpha: float = 1.0
    parameterisation: str = "complete_dp"
    qk_norm: bool = True
    init_seed: int = 0

    def __post_init__(self) -> None:
        if self.width % self.head_dim != 0:
            raise ValueError("width must be divisible by head_dim")
        if self.parameterisation not in ("sp", "mup", "complete_dp"):
            raise ValueError(f"unknown parameterisation {self.parameterisation!r}")
        if not 0.5 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0.5, 1]")

    @property
    def heads(self) -> int:
        return self.width // self.head_dim


@dataclass(frozen=True)
class TensorSpec:
    name: str
    role: TensorRole
    module_type: str
    depth_index: int | None  # 1-based block index, None outside blocks


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0))) + x * np.exp(-0.5 * x * x) / math.sqrt(
        2.0 * math.pi
    )


def _rms(x: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.sqrt(np.mean(x * x, axis=axis, keepdims=True) + _NORM_EPS)


def _resolve_sp(role: TensorRole, base: BaseHyperParams, ratios: ScaleRatios) -> ResolvedHyperParams:
    # fan-in init keeps the step-0 forward healthy; everything else stays base
    init_var = base.init_var
    if role in (TensorRole.HIDDEN_WEIGHT, TensorRole.UNEMBED_WEIGHT):
        init_var = base.init_var / ratios.width
    return ResolvedHyperParams(
        lr=base.lr,
        init_var=init_var,
        eps=base.eps,
        weight_decay=base.weight_decay,
        beta1=base.beta1,
        beta2=base.beta2,
        num_steps_multiplier=ratios.tokens / ratios.batch,
    )


class DeskTransformer:
    """Parameters, per-tensor hyperparameters and the forward/backward pass."""

    def __init__(
        self,
        cfg: ModelConfig,
        base: BaseHyperParams,
        ratios: ScaleRatios | None = None,
        per_module: dict[MultiplierKind, PerModuleMultipliers] | None = None,
    ):
        self.cfg = cfg
        self.base = base
        self.ratios = ratios if ratios is not None else ScaleRatios(alpha=cfg.alpha)
        self.per_module = per_module or {}
        self.params: dict[str, np.ndarray] = {}
        self.specs: dict[str, TensorSpec] = {}
        self.resolved: dict[str, ResolvedHyperParams] = {}

        n, d = cfg.width, cfg.head_dim
        self._declare("emb", (cfg.vocab, n), TensorRole.INPUT_EMBEDDING, "input_embedding", None)
        self._declare("pos", (cfg.max_seq_len, n), TensorRole.INPUT_EMBEDDING, "position_embedding", None)
        for layer in range(1, cfg.depth + 1):
            p = f"block{layer}."
            self._declare(p + "ln1", (n,), TensorRole.HIDDEN_BIAS_OR_NORM, "block_norm_scale", layer, const=1.0)
            self._declare(p + "w_qkv", (n, 3 * n), TensorRole.HIDDEN_WEIGHT, "qkv_weight", layer)
            if cfg.qk_norm:
                self._declare(p + "q_scale", (d,), TensorRole.QK_NORM, "qk_norm_scale", layer, const=1.0)
                self._declare(p + "k_scale", (d,), TensorRole.QK_NORM, "qk_norm_scale", layer, const=1.0)
            self._declare(p + "w_out", (n, n), TensorRole.HIDDEN_WEIGHT, "attn_out_weight", layer)
            self._declare(p + "ln2", (n,), TensorRole.HIDDEN_BIAS_OR_NORM, "block_norm_scale", layer, const=1.0)
            self._declare(p + "w_fc", (n, 4 * n), TensorRole.HIDDEN_WEIGHT, "mlp_in_weight", layer)
            self._declare(p + "w_proj", (4 * n, n), TensorRole.HIDDEN_WEIGHT, "mlp_out_weight", layer)
        self._declare("ln_f", (n,), TensorRole.UNEMBED_NORM, "final_norm_scale", None, const=1.0)
        self._declare("unembed", (n, cfg.vocab), TensorRole.UNEMBED_WEIGHT, "unembed_weight", None)

        if cfg.parameterisation == "sp":
            self.attn_scale = 1.0 / math.sqrt(d)
            wiring = 1.0
        else:
            self.attn_scale = 1.0 / d
            wiring = (
                self.ratios.depth**-self.ratios.alpha
                if cfg.parameterisation == "complete_dp"
                else 1.0
            )
        self.res_attn = [
            wiring * self._module_multiplier(MultiplierKind.RESIDUAL, "residual_mha", layer)
            for layer in range(1, cfg.depth + 1)
        ]
        self.res_mlp = [
            wiring * self._module_multiplier(MultiplierKind.RESIDUAL, "residual_mlp", layer)
            for layer in range(1, cfg.depth + 1)
        ]

    # -- construction ------------------------------------------------------

    def _resolve(self, role: TensorRole) -> ResolvedHyperParams:
        if self.cfg.parameterisation == "sp":
            return _resolve_sp(role, self.base, self.ratios)
        variant = (
            Parameterisation.MUP
            if self.cfg.parameterisation == "mup"
            else Parameterisation.COMPLETE_DP
        )
        return resolve(role, self.base, self.ratios, variant)

    def _module_multiplier(
        self, kind: MultiplierKind, module_type: str, depth_index: int | None
    ) -> float:
        mults = self.per_module.get(kind)
        if mults is None or module_type not in mults.type_mult:
            return 1.0
        return compose(mults, module_type, depth_index)

    def _declare(
        self,
        name: str,
        shape: tuple[int, ...],
        role: TensorRole,
        module_type: str,
        depth_index: int | None,
        const: float | None = None,
    ) -> None:
        hps = self._resolve(role)
        self.specs[name] = TensorSpec(name, role, module_type, depth_index)
        self.resolved[name] = hps
        if const is not None:
            self.params[name] = np.full(shape, const, dtype=np.float64)
            return
        # one child generator per tensor, keyed by name, so draws are
        # independent of every other tensor's shape or existence (common
        # random numbers across widths and depths)
        rng = np.random.default_rng([self.cfg.init_seed, zlib.crc32(name.encode())])
        std = math.sqrt(hps.init_var) * self._module_multiplier(
            MultiplierKind.INIT_STD, module_type, depth_index
        )
        self.params[name] = rng.normal(0.0, std, size=shape)

    def tensor_hyperparams(self, name: str) -> dict:
        """Optimizer settings for one tensor after per-module composition."""
        hps = self.resolved[name]
        spec = self.specs[name]

        def mult(kind: MultiplierKind) -> float:
            return self._module_multiplier(kind, spec.module_type, spec.depth_index)

        one_minus_b1 = min(1.0, (1.0 - hps.beta1) * mult(MultiplierKind.ONE_MINUS_BETA1))
        one_minus_b2 = min(1.0, (1.0 - hps.beta2) * mult(MultiplierKind.ONE_MINUS_BETA2))
        return {
            "lr": hps.lr * mult(MultiplierKind.LR),
            "eps": hps.eps * mult(MultiplierKind.EPS),
            "weight_decay": hps.weight_decay * mult(MultiplierKind.WEIGHT_DECAY),
            "beta1": 1.0 - one_minus_b1,
            "beta2": 1.0 - one_minus_b2,
        }

    def clone_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    # -- forward / backward -------------------------------------------------

    def forward(self, tokens: np.ndarray, collect_stats: bool = False):
        """Return (logits, cache).  ``cache`` feeds :meth:`backward`."""
        cfg = self.cfg
        p = self.params
        B, T = tokens.shape
        if T > cfg.max_seq_len:
            raise ValueError("sequence longer than max_seq_len")
        H, D = cfg.heads, cfg.head_dim

        h = p["emb"][tokens] + p["pos"][:T][None, :, :]
        cache: dict = {"tokens": tokens, "blocks": [], "stats": {}}
        causal = np.tril(np.ones((T, T), dtype=bool))

        for layer in range(1, cfg.depth + 1):
            pre = f"block{layer}."
            blk: dict = {"h_in": h}

            x1 = h
            r1 = _rms(x1)
            x1n = x1 / r1
            a = x1n * p[pre + "ln1"]
            blk.update(x1n=x1n, r1=r1)

            qkv = a @ p[pre + "w_qkv"]
            blk["a"] = a
            q, k, v = np.split(qkv, 3, axis=-1)
            q = q.reshape(B, T, H, D).transpose(0, 2, 1, 3)
            k = k.reshape(B, T, H, D).transpose(0, 2, 1, 3)
            v = v.reshape(B, T, H, D).transpose(0, 2, 1, 3)

            if cfg.qk_norm:
                rq = _rms(q)
                qn = q / rq
                qh = qn * p[pre + "q_scale"]
                rk = _rms(k)
                kn = k / rk
                kh = kn * p[pre + "k_scale"]
                blk.update(q_raw=q, k_raw=k, qn=qn, kn=kn, rq=rq, rk=rk)
            else:
                qh, kh = q, k

            scores = (qh @ kh.transpose(0, 1, 3, 2)) * self.attn_scale
            scores = np.where(causal[None, None], scores, -np.inf)
            scores -= scores.max(axis=-1, keepdims=True)
            probs = np.exp(scores)
            probs /= probs.sum(axis=-1, keepdims=True)
            o = probs @ v
            o_flat = o.transpose(0, 2, 1, 3).reshape(B, T, H * D)
            attn_out = o_flat @ p[pre + "w_out"]
            h = h + self.res_attn[layer - 1] * attn_out
            blk.update(qh=qh, kh=kh, probs=probs, v=v, o_flat=o_flat)

            x2 = h
            r2 = _rms(x2)
            x2n = x2 / r2
            b = x2n * p[pre + "ln2"]
            u = b @ p[pre + "w_fc"]
            g = _gelu(u)
            mlp_out = g @ p[pre + "w_proj"]
            h = h + self.res_mlp[layer - 1] * mlp_out
            blk.update(x2n=x2n, r2=r2, b=b, u=u, g=g)

            if collect_stats:
                cache["stats"][f"block{layer}.attn_qkv_act_rms"] = float(
                    np.sqrt(np.mean(qkv * qkv))
                )
                cache["stats"][f"block{layer}.mlp_fc_act_rms"] = float(np.sqrt(np.mean(u * u)))
            cache["blocks"].append(blk)

        rf = _rms(h)
        hn = h / rf
        f = hn * p["ln_f"]
        logits = f @ p["unembed"]
        cache.update(h_final=h, hn=hn, rf=rf, f=f, logits=logits)
        return logits, cache

    def loss_and_grads(
        self, tokens: np.ndarray, targets: np.ndarray, collect_stats: bool = False
    ):
        """Mean cross-entropy over all positions, plus per-tensor gradients."""
        cfg = self.cfg
        p = self.params
        logits, cache = self.forward(tokens, collect_stats=collect_stats)
        B, T = tokens.shape
        H, D = cfg.heads, cfg.head_dim

        z = logits - logits.max(axis=-1, keepdims=True)
        expz = np.exp(z)
        softmax = expz / expz.sum(axis=-1, keepdims=True)
        picked = np.take_along_axis(softmax, targets[..., None], axis=-1)[..., 0]
        loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))

        grads = {name: np.zeros_like(val) for name, val in self.params.items()}
        dlogits = softmax.copy()
        np.put_along_axis(
            dlogits,
            targets[..., None],
            np.take_along_axis(dlogits, targets[..., None], axis=-1) - 1.0,
            axis=-1,
        )
        dlogits /= B * T

        grads["unembed"] = cache["f"].reshape(-1, cfg.width).T @ dlogits.reshape(-1, cfg.vocab)
        df = dlogits @ p["unembed"].T
        grads["ln_f"] = np.sum(df * cache["hn"], axis=(0, 1))
        dhn = df * p["ln_f"]
        hn, rf = cache["hn"], cache["rf"]
        dh = (dhn - hn * np.mean(dhn * hn, axis=-1, keepdims=True)) / rf

        causal = np.tril(np.ones((T, T), dtype=bool))
        for layer in range(cfg.depth, 0, -1):
            pre = f"block{layer}."
            blk = cache["blocks"][layer - 1]

            dmlp_out = dh * self.res_mlp[layer - 1]
            grads[pre + "w_proj"] = (
                blk["g"].reshape(-1, 4 * cfg.width).T @ dmlp_out.reshape(-1, cfg.width)
            )
            dg = dmlp_out @ p[pre + "w_proj"].T
            du = dg * _gelu_grad(blk["u"])
            if collect_stats:
                cache["stats"][f"block{layer}.mlp_fc_grad_rms"] = float(
                    np.sqrt(np.mean(du * du))
                )
            grads[pre + "w_fc"] = (
                blk["b"].reshape(-1, cfg.width).T @ du.reshape(-1, 4 * cfg.width)
            )
            db = du @ p[pre + "w_fc"].T
            grads[pre + "ln2"] = np.sum(db * blk["x2n"], axis=(0, 1))
            dx2n = db * p[pre + "ln2"]
            x2n, r2 = blk["x2n"], blk["r2"]
            dh = dh + (dx2n - x2n * np.mean(dx2n * x2n, axis=-1, keepdims=True)) / r2

            dattn_out = dh * self.res_attn[layer - 1]
            grads[pre + "w_out"] = (
                blk["o_flat"].reshape(-1, cfg.width).T @ dattn_out.reshape(-1, cfg.width)
            )
            do_flat = dattn_out @ p[pre + "w_out"].T
            do = do_flat.reshape(B, T, H, D).transpose(0, 2, 1, 3)

            probs, v = blk["probs"], blk["v"]
            dprobs = do @ v.transpose(0, 1, 3, 2)
            dv = probs.transpose(0, 1, 3, 2) @ do
            dscores = probs * (dprobs - np.sum(dprobs * probs, axis=-1, keepdims=True))
            dscores = np.where(causal[None, None], dscores, 0.0)
            dscores *= self.attn_scale
            dqh = dscores @ blk["kh"]
            dkh = dscores.transpose(0, 1, 3, 2) @ blk["qh"]

            if cfg.qk_norm:
                qn, rq = blk["qn"], blk["rq"]
                grads[pre + "q_scale"] = np.sum(dqh * qn, axis=(0, 1, 2))
                dqn = dqh * p[pre + "q_scale"]
                dq = (dqn - qn * np.mean(dqn * qn, axis=-1, keepdims=True)) / rq
                kn, rk = blk["kn"], blk["rk"]
                grads[pre + "k_scale"] = np.sum(dkh * kn, axis=(0, 1, 2))
                dkn = dkh * p[pre + "k_scale"]
                dk = (dkn - kn * np.mean(dkn * kn, axis=-1, keepdims=True)) / rk
            else:
                dq, dk = dqh, dkh

            dq = dq.transpose(0, 2, 1, 3).reshape(B, T, H * D)
            dk = dk.transpose(0, 2, 1, 3).reshape(B, T, H * D)
            dv = dv.transpose(0, 2, 1, 3).reshape(B, T, H * D)
            dqkv = np.concatenate([dq, dk, dv], axis=-1)
            if collect_stats:
                cache["stats"][f"block{layer}.attn_qkv_grad_rms"] = float(
                    np.sqrt(np.mean(dqkv * dqkv))
                )
            grads[pre + "w_qkv"] = (
                blk["a"].reshape(-1, cfg.width).T @ dqkv.reshape(-1, 3 * cfg.width)
            )
            da = dqkv @ p[pre + "w_qkv"].T
            grads[pre + "ln1"] = np.sum(da * blk["x1n"], axis=(0, 1))
            dx1n = da * p[pre + "ln1"]
            x1n, r1 = blk["x1n"], blk["r1"]
            dh = dh + (dx1n - x1n * np.mean(dx1n * x1n, axis=-1, keepdims=True)) / r1

        grads["pos"][:T] = dh.sum(axis=0)
        np.add.at(grads["emb"], cache["tokens"], dh)
        if collect_stats:
            g = grads["emb"]
            cache["stats"]["embedding_grad_rms"] = float(np.sqrt(np.mean(g * g)))
        return loss, grads, cache["stats"]
