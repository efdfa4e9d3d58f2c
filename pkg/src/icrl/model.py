"""Decoder-only causal transformer over (context, query state) sequences.

Token layout (D-LAYOUT): position 0 carries the query state (zero-padded to
transition width); positions 1..T carry the context transitions encoded as
``[state, one-hot action, reward, next_state]``. State coordinates are
normalized to [0, 1] by the grid size; rewards enter raw. A causal mask
makes row ``j`` of the output the action logits conditioned on the query
and the first ``j`` transitions, so a single forward pass scores every
context-length prefix.

The head count 3 does not divide the embedding size 32; per-head width is
floor(32 / 3) = 10 and the 30-dim concatenation is projected back to 32
(D-HEAD). The action head starts at zero so an untrained model is exactly
uniform.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .datagen import Context
from .envs import family_spec, state_scale
from .errors import ContextTooLong, ShapeMismatch
from .rng import RngStream

__all__ = [
    "ModelConfig",
    "TransformerPolicy",
    "init_params",
    "tokenize",
    "tokenize_batch",
    "nll_loss",
    "batch_nll_loss",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class ModelConfig:
    state_dim: int
    num_actions: int
    max_context: int
    n_layers: int = 3
    n_heads: int = 3
    d_embed: int = 32
    dtype: str = "float32"
    state_scale: tuple[float, ...] = ()

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.state_scale and len(self.state_scale) != self.state_dim:
            raise ValueError("state_scale length must equal state_dim")

    @classmethod
    def for_family(cls, family: str, max_context: int, **kwargs) -> "ModelConfig":
        spec = family_spec(family)
        return cls(
            state_dim=spec.state_dim,
            num_actions=spec.num_actions,
            max_context=max_context,
            state_scale=tuple(state_scale(family).tolist()),
            **kwargs,
        )

    @property
    def d_head(self) -> int:
        return self.d_embed // self.n_heads

    @property
    def d_attn(self) -> int:
        return self.d_head * self.n_heads

    @property
    def d_mlp(self) -> int:
        return 4 * self.d_embed

    @property
    def token_dim(self) -> int:
        return 2 * self.state_dim + self.num_actions + 1

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def scale_array(self) -> np.ndarray:
        if self.state_scale:
            return np.asarray(self.state_scale, dtype=float)
        return np.ones(self.state_dim)


def init_params(config: ModelConfig, rng: RngStream) -> dict[str, Tensor]:
    """Seeded parameter table: N(0, 0.02) weights, zero biases and head,
    unit layernorm gains."""
    gen = rng.generator
    dt = config.np_dtype
    d = config.d_embed

    def normal(*shape):
        return Tensor(gen.normal(0.0, 0.02, size=shape).astype(dt))

    def zeros(*shape):
        return Tensor(np.zeros(shape, dtype=dt))

    def ones(*shape):
        return Tensor(np.ones(shape, dtype=dt))

    params: dict[str, Tensor] = {
        "tok_w": normal(config.token_dim, d),
        "tok_b": zeros(d),
        "pos": normal(config.max_context + 1, d),
    }
    for i in range(config.n_layers):
        p = f"l{i}."
        params[p + "ln1_g"] = ones(d)
        params[p + "ln1_b"] = zeros(d)
        params[p + "wq"] = normal(d, config.d_attn)
        params[p + "bq"] = zeros(config.d_attn)
        params[p + "wk"] = normal(d, config.d_attn)
        params[p + "bk"] = zeros(config.d_attn)
        params[p + "wv"] = normal(d, config.d_attn)
        params[p + "bv"] = zeros(config.d_attn)
        params[p + "wo"] = normal(config.d_attn, d)
        params[p + "bo"] = zeros(d)
        params[p + "ln2_g"] = ones(d)
        params[p + "ln2_b"] = zeros(d)
        params[p + "mlp_w1"] = normal(d, config.d_mlp)
        params[p + "mlp_b1"] = zeros(config.d_mlp)
        params[p + "mlp_w2"] = normal(config.d_mlp, d)
        params[p + "mlp_b2"] = zeros(d)
    params["lnf_g"] = ones(d)
    params["lnf_b"] = zeros(d)
    params["head_w"] = zeros(d, config.num_actions)
    params["head_b"] = zeros(config.num_actions)
    for name, tensor in params.items():
        tensor.name = name
    return params


def tokenize(config: ModelConfig, context: Context, query_state: np.ndarray) -> np.ndarray:
    """Encode (context, query) as a ``(len(context) + 1, token_dim)`` array."""
    if len(context) > config.max_context:
        raise ContextTooLong(f"context length {len(context)} > max_context {config.max_context}")
    scale = config.scale_array()
    dt = config.np_dtype
    tokens = np.zeros((len(context) + 1, config.token_dim), dtype=dt)
    tokens[0, : config.state_dim] = np.asarray(query_state) / scale
    if len(context):
        a = config.state_dim
        tokens[1:, :a] = context.states / scale
        tokens[np.arange(1, len(context) + 1), a + context.actions] = 1.0
        tokens[1:, a + config.num_actions] = context.rewards
        tokens[1:, a + config.num_actions + 1 :] = context.next_states / scale
    return tokens


def tokenize_batch(
    config: ModelConfig, contexts: list[Context], query_states: list[np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into ``(B, max_context + 1, token_dim)`` plus lengths.

    Every batch is zero-padded to the same canonical width: the causal mask
    keeps padding from influencing real rows, loss/prediction only read
    rows up to each sample's own length, and a fixed shape makes outputs
    bit-identical regardless of what padding follows a prefix (GEMM
    kernels vary with matrix size, so equal shapes are what make the
    prefix-consistency guarantee exact rather than approximate).
    """
    lengths = np.array([len(c) for c in contexts], dtype=np.int64)
    width = config.max_context + 1
    batch = np.zeros((len(contexts), width, config.token_dim), dtype=config.np_dtype)
    for i, (ctx, query) in enumerate(zip(contexts, query_states)):
        batch[i, : lengths[i] + 1] = tokenize(config, ctx, query)
    return batch, lengths


def _linear(x: Tensor, w: Tensor, bias: Tensor, b: int, seq: int) -> Tensor:
    # Flatten (B, S, D) to one GEMM instead of a B-deep stack of small ones.
    flat = ad.reshape(x, (b * seq, x.data.shape[-1]))
    y = ad.add(ad.matmul(flat, w), bias)
    return ad.reshape(y, (b, seq, w.data.shape[-1]))


def forward_tokens(params: dict[str, Tensor], config: ModelConfig, tokens: np.ndarray) -> Tensor:
    """Run the transformer on a ``(B, S, token_dim)`` batch; returns logits
    ``(B, S, num_actions)`` where row j conditions on rows 0..j."""
    b, seq, _ = tokens.shape
    if seq > config.max_context + 1:
        raise ContextTooLong(f"sequence length {seq} > {config.max_context + 1}")
    inv_sqrt = float(1.0 / np.sqrt(config.d_head))
    causal = np.triu(np.ones((seq, seq), dtype=bool), k=1)
    heads, d_head = config.n_heads, config.d_head

    def split_heads(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (b, seq, heads, d_head)), (0, 2, 1, 3))

    x = _linear(Tensor(tokens), params["tok_w"], params["tok_b"], b, seq)
    x = ad.add(x, ad.embed(params["pos"], np.arange(seq)))
    for i in range(config.n_layers):
        p = f"l{i}."
        h = ad.add(ad.mul(ad.layernorm(x), params[p + "ln1_g"]), params[p + "ln1_b"])
        q = split_heads(_linear(h, params[p + "wq"], params[p + "bq"], b, seq))
        k = split_heads(_linear(h, params[p + "wk"], params[p + "bk"], b, seq))
        v = split_heads(_linear(h, params[p + "wv"], params[p + "bv"], b, seq))
        scores = ad.matmul(ad.scale(q, inv_sqrt), ad.swap_last(k))
        att = ad.masked_softmax(scores, causal)
        merged = ad.reshape(ad.transpose(ad.matmul(att, v), (0, 2, 1, 3)), (b, seq, config.d_attn))
        x = ad.add(x, _linear(merged, params[p + "wo"], params[p + "bo"], b, seq))
        h2 = ad.add(ad.mul(ad.layernorm(x), params[p + "ln2_g"]), params[p + "ln2_b"])
        m = _linear(
            ad.gelu(_linear(h2, params[p + "mlp_w1"], params[p + "mlp_b1"], b, seq)),
            params[p + "mlp_w2"],
            params[p + "mlp_b2"],
            b,
            seq,
        )
        x = ad.add(x, m)
    x = ad.add(ad.mul(ad.layernorm(x), params["lnf_g"]), params["lnf_b"])
    return _linear(x, params["head_w"], params["head_b"], b, seq)


def nll_loss(logits, action_label: int, weight: float = 1.0) -> Tensor:
    """Weighted NLL of one sample: ``weight *`` mean over the T+1 rows of
    ``-log softmax(logits_j)[label]``. Differentiable when logits is a taped
    Tensor."""
    if not isinstance(logits, Tensor):
        logits = Tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeMismatch(f"per-sample logits must be 2-D, got {logits.data.shape}")
    rows = logits.data.shape[0]
    logp = ad.gather(ad.log_softmax(logits), np.full(rows, action_label))
    return ad.scale(ad.sum_all(logp), -weight / rows)


def batch_nll_loss(
    logits: Tensor, labels: np.ndarray, weights: np.ndarray, lengths: np.ndarray
) -> Tensor:
    """Mean over samples of the per-sample weighted NLL, masking pad rows."""
    b, seq, _ = logits.data.shape
    valid = np.arange(seq)[None, :] <= lengths[:, None]
    logp = ad.gather(ad.log_softmax(logits), labels[:, None])
    masked = ad.mul(logp, Tensor(valid.astype(logits.data.dtype)))
    per_sample = ad.sum_axis(masked, axis=1)
    coeff = -weights / (lengths + 1.0) / b
    return ad.sum_all(ad.mul(per_sample, Tensor(coeff.astype(logits.data.dtype))))


class TransformerPolicy:
    """Bundles config and parameters; the model object the rest of the
    workbench passes around."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None, rng: RngStream | None = None):
        self.config = config
        if params is None:
            params = init_params(config, rng or RngStream(0))
        self.params = params

    @property
    def max_context(self) -> int:
        return self.config.max_context

    @property
    def num_actions(self) -> int:
        return self.config.num_actions

    def forward(self, context: Context, query_state: np.ndarray) -> np.ndarray:
        """Per-prefix action logits, shape ``(len(context) + 1, num_actions)``."""
        tokens, lengths = tokenize_batch(self.config, [context], [query_state])
        logits = forward_tokens(self.params, self.config, tokens).data[0]
        return logits[: int(lengths[0]) + 1]

    def forward_batch(self, tokens: np.ndarray) -> Tensor:
        return forward_tokens(self.params, self.config, tokens)

    def loss(self, logits, action_label: int, weight: float = 1.0) -> Tensor:
        return nll_loss(logits, action_label, weight)

    def predict(self, context: Context, query_state: np.ndarray, mode: str = "greedy", rng: RngStream | None = None) -> int:
        """Action from the last row: argmax (greedy, ties to lowest index)
        or a draw from its softmax (sample)."""
        logits = self.forward(context, query_state)[-1]
        return _decide(logits, mode, rng)

    def predict_batch(
        self,
        contexts: list[Context],
        query_states: list[np.ndarray],
        mode: str = "greedy",
        rngs: list[RngStream] | None = None,
    ) -> np.ndarray:
        tokens, lengths = tokenize_batch(self.config, contexts, query_states)
        logits = forward_tokens(self.params, self.config, tokens).data
        last = logits[np.arange(len(contexts)), lengths]
        if mode == "greedy":
            return np.argmax(last, axis=1)
        return np.array([_decide(last[i], mode, rngs[i]) for i in range(len(contexts))])


def _decide(logits: np.ndarray, mode: str, rng: RngStream | None) -> int:
    if mode == "greedy":
        return int(np.argmax(logits))
    if mode != "sample":
        raise ValueError(f"unknown prediction mode {mode!r}")
    z = logits.astype(np.float64) - logits.max()
    p = np.exp(z)
    p /= p.sum()
    return int(rng.generator.choice(len(p), p=p))


# ---------------------------------------------------------------------------
# Checkpoint blob: JSON manifest + raw little-endian tensor data
# ---------------------------------------------------------------------------

_MAGIC = b"ICRLCKPT"
_WIDTHS = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(model: TransformerPolicy, path: str, metadata: dict | None = None) -> None:
    names = sorted(model.params)
    index = []
    offset = 0
    for name in names:
        arr = model.params[name].data
        nbytes = arr.size * arr.itemsize
        index.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": _WIDTHS[str(arr.dtype)],
                "offset": offset,
                "nbytes": nbytes,
            }
        )
        offset += nbytes
    manifest = json.dumps(
        {"model_config": asdict(model.config), "metadata": metadata or {}, "tensors": index},
        separators=(",", ":"),
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(manifest).to_bytes(8, "little"))
        fh.write(manifest)
        for name in names:
            arr = model.params[name].data
            fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path: str) -> tuple[TransformerPolicy, dict]:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        size = int.from_bytes(fh.read(8), "little")
        manifest = json.loads(fh.read(size))
        cfg_kw = manifest["model_config"]
        cfg_kw["state_scale"] = tuple(cfg_kw.get("state_scale") or ())
        config = ModelConfig(**cfg_kw)
        params = {}
        for entry in manifest["tensors"]:
            raw = fh.read(entry["nbytes"])
            arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
            params[entry["name"]] = Tensor(arr.astype(arr.dtype.newbyteorder("=")), name=entry["name"])
    return TransformerPolicy(config, params), manifest["metadata"]


def params_checksum(params: dict[str, Tensor]) -> str:
    digest = hashlib.sha256()
    for name in sorted(params):
        arr = params[name].data
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    return digest.hexdigest()
