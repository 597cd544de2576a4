"""Grid tagging model: encoder, conditional layer norm, dilated convolutions
and an MLP + biaffine co-predictor, with an exact analytic backward pass.

The encoder is a learned token embedding followed by a bidirectional LSTM
whose concatenated states are projected to ``d_h``.
"""

from __future__ import annotations

import configparser
import io
import json
import zipfile
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from ..corpus import Entity
from ..grid import TagGrid, TagScheme, decode, project_base, repair
from . import layers as L

CHECKPOINT_VERSION = 1

PAD, UNK = "<pad>", "<unk>"


@dataclass
class ModelConfig:
    """Sizes and optimization settings.

    Defaults are the toy scale used for tests.  :meth:`full_scale` returns the
    published settings (d_h 768, d_Ed = d_Et = 20, d_c 80, dropout 0.5).
    """

    d_emb: int = 32
    d_lstm: int = 32
    d_h: int = 32
    d_Ed: int = 20
    d_Et: int = 20
    d_c: int = 16
    d_ffn: int = 32
    d_biaffine: int = 16
    dilations: tuple[int, ...] = (1, 2, 3)
    dropout: float = 0.1
    lr_encoder: float = 0.5
    lr_other: float = 0.5
    momentum: float = 0.0
    weight_decay: float = 0.0
    warm_factor: float = 0.0
    clip_norm: float = 5.0
    batch_size: int = 4
    epochs: int = 15
    seed: int = 123
    none_weight: float = 0.3
    scheme_mode: str = "base"
    cln_eps: float = 1e-6

    def __post_init__(self):
        self.dilations = tuple(int(d) for d in self.dilations)
        if not self.dilations:
            raise ValueError("dilations must be non-empty")
        for name in ("d_emb", "d_lstm", "d_h", "d_Ed", "d_Et", "d_c", "d_ffn", "d_biaffine", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if any(d < 1 for d in self.dilations):
            raise ValueError("dilations must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        base = dict(
            d_emb=768, d_lstm=384, d_h=768, d_Ed=20, d_Et=20, d_c=80, d_ffn=384,
            d_biaffine=384, dropout=0.5, lr_encoder=5e-6, lr_other=1e-3,
            batch_size=16, epochs=10, seed=123, none_weight=1.0,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**values)

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        """Parse ``key = value`` lines; values are coerced to each field's type."""
        parser = configparser.ConfigParser()
        parser.read_string("[model]\n" + text)
        defaults = cls()
        values = {}
        for key, raw in parser["model"].items():
            if not hasattr(defaults, key):
                raise ValueError(f"unknown model config key {key!r}")
            current = getattr(defaults, key)
            if isinstance(current, tuple):
                values[key] = tuple(int(x) for x in raw.replace(",", " ").split())
            elif isinstance(current, bool):
                values[key] = parser["model"].getboolean(key)
            else:
                values[key] = type(current)(raw.strip())
        return cls(**values)

    @classmethod
    def from_file(cls, path: str | Path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d


ENCODER_PARAMS = ("emb", "lstm_f_Wx", "lstm_f_Wh", "lstm_f_b", "lstm_b_Wx", "lstm_b_Wh", "lstm_b_b", "proj_W", "proj_b")


class Vocab:
    def __init__(self, words: Sequence[str]):
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(self.words)}

    @classmethod
    def build(cls, token_seqs, min_count: int = 1) -> "Vocab":
        counts = Counter(w for seq in token_seqs for w in seq)
        kept = sorted(w for w, c in counts.items() if c >= min_count)
        return cls([PAD, UNK, *kept])

    def ids(self, tokens: Sequence[str]) -> np.ndarray:
        unk = self.index[UNK]
        return np.array([self.index.get(t, unk) for t in tokens], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.words)


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg: ModelConfig, vocab_size: int, n_tags: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    k, dh, dc, dbi = cfg.d_lstm, cfg.d_h, cfg.d_c, cfg.d_biaffine
    p: dict[str, np.ndarray] = {}
    p["emb"] = rng.normal(0.0, 0.5, size=(vocab_size, cfg.d_emb))
    for side in ("f", "b"):
        p[f"lstm_{side}_Wx"] = _glorot(rng, (cfg.d_emb, 4 * k), cfg.d_emb, 4 * k)
        p[f"lstm_{side}_Wh"] = _glorot(rng, (k, 4 * k), k, 4 * k)
        b = np.zeros(4 * k)
        b[k : 2 * k] = 1.0
        p[f"lstm_{side}_b"] = b
    p["proj_W"] = _glorot(rng, (2 * k, dh), 2 * k, dh)
    p["proj_b"] = np.zeros(dh)
    p["cln_Wg"] = np.zeros((dh, dh))
    p["cln_bg"] = np.ones(dh)
    p["cln_Wl"] = np.zeros((dh, dh))
    p["cln_bl"] = np.zeros(dh)
    p["dist_emb"] = rng.normal(0.0, 0.5, size=(L.N_DISTANCE_BUCKETS, cfg.d_Ed))
    p["region_emb"] = rng.normal(0.0, 0.5, size=(2, cfg.d_Et))
    d_in = dh + cfg.d_Ed + cfg.d_Et
    p["mlp1_W"] = _glorot(rng, (d_in, dc), d_in, dc)
    p["mlp1_b"] = np.zeros(dc)
    for d in cfg.dilations:
        p[f"conv{d}_K"] = _glorot(rng, (3, 3, dc, dc), 9 * dc, 9 * dc)
        p[f"conv{d}_b"] = np.zeros(dc)
    d_q = len(cfg.dilations) * dc
    p["mlp2_W1"] = _glorot(rng, (d_q, cfg.d_ffn), d_q, cfg.d_ffn)
    p["mlp2_b1"] = np.zeros(cfg.d_ffn)
    p["mlp2_W2"] = _glorot(rng, (cfg.d_ffn, n_tags), cfg.d_ffn, n_tags)
    p["mlp2_b2"] = np.zeros(n_tags)
    p["mlp3_W"] = _glorot(rng, (dh, dbi), dh, dbi)
    p["mlp3_b"] = np.zeros(dbi)
    p["mlp4_W"] = _glorot(rng, (dh, dbi), dh, dbi)
    p["mlp4_b"] = np.zeros(dbi)
    p["biaf_U"] = _glorot(rng, (dbi, n_tags, dbi), dbi, dbi)
    p["biaf_W"] = _glorot(rng, (2 * dbi, n_tags), 2 * dbi, n_tags)
    p["biaf_b"] = np.zeros(n_tags)
    return p


@dataclass
class ForwardCache:
    ids: np.ndarray
    masks: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)


class GridModel:
    def __init__(self, config: ModelConfig, vocab: Vocab, scheme: TagScheme, params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.vocab = vocab
        self.scheme = scheme
        if params is None:
            rng = np.random.default_rng(config.seed)
            params = init_params(config, len(vocab), len(scheme), rng)
        self.params = params
        self.diagnostics: Counter = Counter()

    # ---------------------------------------------------------------- forward
    def encode_tokens(self, tokens: Sequence[str]) -> np.ndarray:
        """Contextual vectors H of shape (N, d_h)."""
        if not len(tokens):
            raise ValueError("cannot encode an empty sample")
        H, _ = self._encoder(self.vocab.ids(tokens), None)
        return H

    def _dropout(self, x, name, rng, cache):
        rate = self.config.dropout
        if rng is None or rate == 0.0:
            return x
        mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
        cache.masks[name] = mask
        return x * mask

    def _encoder(self, ids, rng, cache: ForwardCache | None = None):
        p = self.params
        cache = cache or ForwardCache(ids)
        x = p["emb"][ids]
        x = self._dropout(x, "emb", rng, cache)
        hf, cf = L.lstm_forward(x, p["lstm_f_Wx"], p["lstm_f_Wh"], p["lstm_f_b"])
        hb, cb = L.lstm_forward(x, p["lstm_b_Wx"], p["lstm_b_Wh"], p["lstm_b_b"], reverse=True)
        mixed = np.concatenate([hf, hb], axis=1)
        H, _ = L.linear_forward(mixed, p["proj_W"], p["proj_b"])
        cache.steps.update(lstm_f=cf, lstm_b=cb, mixed=mixed)
        return H, cache

    def grid_features(self, H, rng=None, cache: ForwardCache | None = None):
        """C = MLP_1([V; E^d; E^t]) of shape (N, N, d_c)."""
        p = self.params
        cache = cache if cache is not None else ForwardCache(np.empty(0))
        n = H.shape[0]
        V, cln_cache = L.cln_forward(H, p["cln_Wg"], p["cln_bg"], p["cln_Wl"], p["cln_bl"], self.config.cln_eps)
        clamped = int(cln_cache[3][2].sum())
        if clamped:
            self.diagnostics["cln_clamped"] += clamped
        dist = L.distance_buckets(n)
        region = L.region_ids(n)
        X = np.concatenate([V, p["dist_emb"][dist], p["region_emb"][region]], axis=-1)
        pre, _ = L.linear_forward(X, p["mlp1_W"], p["mlp1_b"])
        C = L.gelu(pre)
        C = self._dropout(C, "grid", rng, cache)
        cache.steps.update(cln=cln_cache, dist=dist, region=region, X=X, pre1=pre)
        return C

    def conv_stack(self, C, cache: ForwardCache | None = None):
        """Q: GELU of each dilated convolution, concatenated on channels."""
        p = self.params
        outs = []
        for d in self.config.dilations:
            pre, padded = L.dconv_forward(C, p[f"conv{d}_K"], p[f"conv{d}_b"], d)
            outs.append(L.gelu(pre))
            if cache is not None:
                cache.steps[f"conv{d}"] = (pre, padded)
        return np.concatenate(outs, axis=-1)

    def co_predict(self, Q, H, cache: ForwardCache | None = None):
        """Per-cell tag distributions: softmax of MLP scores plus biaffine scores."""
        p = self.params
        pre_a, _ = L.linear_forward(Q, p["mlp2_W1"], p["mlp2_b1"])
        hid = L.gelu(pre_a)
        y_mlp, _ = L.linear_forward(hid, p["mlp2_W2"], p["mlp2_b2"])
        pre_s, _ = L.linear_forward(H, p["mlp3_W"], p["mlp3_b"])
        pre_o, _ = L.linear_forward(H, p["mlp4_W"], p["mlp4_b"])
        s, o = L.gelu(pre_s), L.gelu(pre_o)
        y_bi, bi_cache = L.biaffine_forward(s, o, p["biaf_U"], p["biaf_W"], p["biaf_b"])
        probs = L.softmax(y_mlp + y_bi)
        if cache is not None:
            cache.steps.update(Q=Q, pre_a=pre_a, hid=hid, pre_s=pre_s, pre_o=pre_o, biaf=bi_cache)
        return probs

    def forward(self, tokens_or_ids, rng: np.random.Generator | None = None):
        """Full forward pass; ``rng`` enables dropout (training mode)."""
        ids = tokens_or_ids if isinstance(tokens_or_ids, np.ndarray) else self.vocab.ids(tokens_or_ids)
        if ids.size == 0:
            raise ValueError("cannot run the model on an empty sample")
        H, cache = self._encoder(ids, rng)
        cache.steps["H"] = H
        C = self.grid_features(H, rng, cache)
        Q = self.conv_stack(C, cache)
        probs = self.co_predict(Q, H, cache)
        return probs, cache

    # --------------------------------------------------------------- backward
    def class_weights(self) -> np.ndarray:
        w = np.ones(len(self.scheme))
        w[0] = self.config.none_weight
        return w

    def loss(self, probs, gold_cells) -> float:
        return L.cross_entropy(probs, gold_cells, self.class_weights())[0]

    def loss_and_grads(self, ids, gold_cells, rng=None):
        probs, cache = self.forward(ids, rng)
        loss, dlogits = L.cross_entropy(probs, gold_cells, self.class_weights())
        return loss, self.backward(dlogits, cache)

    def backward(self, dlogits, cache: ForwardCache) -> dict[str, np.ndarray]:
        p = self.params
        st = cache.steps
        g: dict[str, np.ndarray] = {}
        H = st["H"]

        # co-predictor
        dhid, g["mlp2_W2"], g["mlp2_b2"] = L.linear_backward(dlogits, st["hid"], p["mlp2_W2"])
        dpre_a = dhid * L.gelu_grad(st["pre_a"])
        dQ, g["mlp2_W1"], g["mlp2_b1"] = L.linear_backward(dpre_a, st["Q"], p["mlp2_W1"])
        ds, do, g["biaf_U"], g["biaf_W"], g["biaf_b"] = L.biaffine_backward(dlogits, st["biaf"], p["biaf_U"], p["biaf_W"])
        dpre_s = ds * L.gelu_grad(st["pre_s"])
        dpre_o = do * L.gelu_grad(st["pre_o"])
        dH, g["mlp3_W"], g["mlp3_b"] = L.linear_backward(dpre_s, H, p["mlp3_W"])
        dH_o, g["mlp4_W"], g["mlp4_b"] = L.linear_backward(dpre_o, H, p["mlp4_W"])
        dH = dH + dH_o

        # dilated convolutions
        dc = self.config.d_c
        dC = None
        for k, d in enumerate(self.config.dilations):
            pre, padded = st[f"conv{d}"]
            dpre = dQ[..., k * dc : (k + 1) * dc] * L.gelu_grad(pre)
            dCk, g[f"conv{d}_K"], g[f"conv{d}_b"] = L.dconv_backward(dpre, padded, p[f"conv{d}_K"], d)
            dC = dCk if dC is None else dC + dCk
        if "grid" in cache.masks:
            dC = dC * cache.masks["grid"]

        # grid features
        dpre1 = dC * L.gelu_grad(st["pre1"])
        dX, g["mlp1_W"], g["mlp1_b"] = L.linear_backward(dpre1, st["X"], p["mlp1_W"])
        dh_ = self.config.d_h
        d_ed = self.config.d_Ed
        dV = dX[..., :dh_]
        g["dist_emb"] = np.zeros_like(p["dist_emb"])
        np.add.at(g["dist_emb"], st["dist"], dX[..., dh_ : dh_ + d_ed])
        g["region_emb"] = np.zeros_like(p["region_emb"])
        np.add.at(g["region_emb"], st["region"], dX[..., dh_ + d_ed :])
        dH_cln, g["cln_Wg"], g["cln_bg"], g["cln_Wl"], g["cln_bl"] = L.cln_backward(dV, st["cln"], p["cln_Wg"], p["cln_Wl"])
        dH = dH + dH_cln

        # encoder
        dmixed, g["proj_W"], g["proj_b"] = L.linear_backward(dH, st["mixed"], p["proj_W"])
        k = self.config.d_lstm
        dx_f, g["lstm_f_Wx"], g["lstm_f_Wh"], g["lstm_f_b"] = L.lstm_backward(dmixed[:, :k], st["lstm_f"], p["lstm_f_Wx"], p["lstm_f_Wh"])
        dx_b, g["lstm_b_Wx"], g["lstm_b_Wh"], g["lstm_b_b"] = L.lstm_backward(dmixed[:, k:], st["lstm_b"], p["lstm_b_Wx"], p["lstm_b_Wh"])
        dx = dx_f + dx_b
        if "emb" in cache.masks:
            dx = dx * cache.masks["emb"]
        g["emb"] = np.zeros_like(p["emb"])
        np.add.at(g["emb"], cache.ids, dx)
        return g

    # ------------------------------------------------------------- inference
    def predict_grid(self, tokens: Sequence[str]) -> TagGrid:
        """Argmax tag per cell, with misplaced tags reset to NONE."""
        probs, _ = self.forward(list(tokens))
        grid = TagGrid(len(tokens), probs.argmax(axis=-1).astype(np.int64))
        grid, fixed = repair(grid, self.scheme)
        self.diagnostics["repaired_cells"] += fixed
        return grid

    def predict_entities(self, tokens: Sequence[str]) -> list[Entity]:
        grid = self.predict_grid(tokens)
        base = TagScheme(self.scheme.labels, "base")
        return decode(project_base(grid, self.scheme), base, diagnostics=self.diagnostics)

    # ------------------------------------------------------------ persistence
    def copy(self) -> "GridModel":
        return GridModel(self.config, self.vocab, self.scheme, {k: v.copy() for k, v in self.params.items()})

    def save(self, path: str | Path) -> None:
        meta = {
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "vocab": self.vocab.words,
            "labels": list(self.scheme.labels),
            "mode": self.scheme.mode,
            "params": sorted(self.params),
        }
        arrays = {"__meta__": np.array(json.dumps(meta, sort_keys=True)), **self.params}
        # fixed member timestamps keep identical models byte-identical on disk
        with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
            for name in ["__meta__", *sorted(self.params)]:
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "GridModel":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            if meta["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta['version']}")
            params = {name: data[name].copy() for name in meta["params"]}
        config = ModelConfig.from_dict(meta["config"])
        return cls(config, Vocab(meta["vocab"]), TagScheme(tuple(meta["labels"]), meta["mode"]), params)
