"""Neural prefetcher models over miss-delta streams.

Two model families share the numpy LSTM core:

- EmbeddingPrefetcher treats prediction as classification over a delta
  vocabulary. Inputs at each miss are the miss PC and the delta that led
  into it, each mapped through a learned embedding table; the label is the
  delta out of the miss. Ablations keep the input width fixed: the single
  remaining embedding widens to 2E.
- ClusterPrefetcher runs one weight-shared LSTM per address cluster with
  separate recurrent state per cluster. Inputs are the normalized delta
  into the miss plus a one-hot cluster id; the softmax head is shared
  across clusters (sized by the largest per-cluster vocabulary) and
  invalid classes are masked out per cluster.

Both models keep a trainable out-of-vocabulary output class that is never
emitted as a prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .lstm import (
    adagrad_step,
    adam_step,
    clip_global_norm,
    lstm_backward,
    lstm_forward,
    lstm_layer_init,
    softmax_cross_entropy,
    topk_indices,
    uniform_init,
    zero_states,
)
from .trace import signed_delta
from .vocab import DeltaVocab, build_vocab

MASK_NEG = -1e30  # additive logit mask for classes a cluster cannot emit


class EmbeddingPrefetcher:
    """Stacked LSTM over embedded (pc, input delta) pairs.

    `modality` is one of "both", "delta_only", "pc_only". Sizes passed in
    are dense class counts; one extra embedding row / output class is
    allocated for OOV. Weights init uniform(+-1/sqrt(hidden)).
    """

    input_keys = ("pc", "delta_in")

    def __init__(
        self,
        n_delta_inputs: int,
        n_pcs: int,
        n_outputs: int,
        hidden: int = 128,
        embed: int = 64,
        layers: int = 2,
        modality: str = "both",
        dtype=np.float64,
        seed: int = 0,
    ):
        if modality not in ("both", "delta_only", "pc_only"):
            raise ConfigError(f"unknown modality {modality!r}")
        self.n_delta_inputs = n_delta_inputs
        self.n_pcs = n_pcs
        self.n_outputs = n_outputs
        self.hidden = hidden
        self.layers = layers
        self.modality = modality
        self.dtype = np.dtype(dtype)

        e_pc, e_delta = {
            "both": (embed, embed),
            "pc_only": (2 * embed, 0),
            "delta_only": (0, 2 * embed),
        }[modality]
        self.e_pc, self.e_delta = e_pc, e_delta
        input_dim = e_pc + e_delta

        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(hidden)
        p: dict[str, np.ndarray] = {}
        if e_pc:
            p["emb_pc"] = uniform_init((n_pcs + 1, e_pc), scale, rng, self.dtype)
        if e_delta:
            p["emb_delta"] = uniform_init((n_delta_inputs + 1, e_delta), scale, rng, self.dtype)
        dim = input_dim
        for l in range(layers):
            p[f"lstm{l}_W"], p[f"lstm{l}_b"] = lstm_layer_init(dim, hidden, rng, self.dtype)
            dim = hidden
        p["head_W"] = uniform_init((n_outputs + 1, hidden), scale, rng, self.dtype)
        p["head_b"] = np.zeros(n_outputs + 1, dtype=self.dtype)
        self.params = p

    @property
    def oov_input(self) -> int:
        return self.n_delta_inputs

    @property
    def oov_output(self) -> int:
        return self.n_outputs

    def zero_states(self, batch: int):
        return zero_states(self.layers, batch, self.hidden, self.dtype)

    def _layer_weights(self):
        Ws = [self.params[f"lstm{l}_W"] for l in range(self.layers)]
        bs = [self.params[f"lstm{l}_b"] for l in range(self.layers)]
        return Ws, bs

    def _embed(self, pc_ids, delta_ids):
        parts = []
        if self.e_pc:
            parts.append(self.params["emb_pc"][pc_ids])
        if self.e_delta:
            parts.append(self.params["emb_delta"][delta_ids])
        return np.concatenate(parts, axis=-1) if len(parts) > 1 else parts[0]

    def _forward(self, pc_ids, delta_ids, states):
        X = self._embed(pc_ids, delta_ids)
        Ws, bs = self._layer_weights()
        H_top, new_states, caches = lstm_forward(X, states, Ws, bs)
        T, B, H = H_top.shape
        flat = H_top.reshape(T * B, H)
        logits = flat @ self.params["head_W"].T + self.params["head_b"]
        return logits, flat, new_states, caches

    def loss(self, pc_ids, delta_ids, labels, states):
        logits, _, new_states, _ = self._forward(pc_ids, delta_ids, states)
        loss, _, _ = softmax_cross_entropy(logits, np.asarray(labels).reshape(-1))
        return loss, new_states

    def loss_and_grads(self, pc_ids, delta_ids, labels, states):
        logits, flat, new_states, caches = self._forward(pc_ids, delta_ids, states)
        loss, dlogits, _ = softmax_cross_entropy(logits, np.asarray(labels).reshape(-1))

        grads = {name: np.zeros_like(p) for name, p in self.params.items()}
        grads["head_W"] = dlogits.T @ flat
        grads["head_b"] = dlogits.sum(axis=0)
        T, B = pc_ids.shape
        dH_top = (dlogits @ self.params["head_W"]).reshape(T, B, self.hidden)

        Ws, _ = self._layer_weights()
        dX, dWs, dbs = lstm_backward(dH_top, caches, Ws)
        for l in range(self.layers):
            grads[f"lstm{l}_W"] = dWs[l]
            grads[f"lstm{l}_b"] = dbs[l]

        off = 0
        if self.e_pc:
            np.add.at(
                grads["emb_pc"], pc_ids.reshape(-1), dX[..., : self.e_pc].reshape(-1, self.e_pc)
            )
            off = self.e_pc
        if self.e_delta:
            np.add.at(
                grads["emb_delta"], delta_ids.reshape(-1), dX[..., off:].reshape(-1, self.e_delta)
            )
        return loss, grads, new_states

    def predict_topk(self, pc_ids, delta_ids, states, k: int = 10):
        """Top-k output class ids per position; the OOV class never appears."""
        logits, _, new_states, _ = self._forward(pc_ids, delta_ids, states)
        scores = logits[:, : self.n_outputs]
        T, B = pc_ids.shape
        ids = topk_indices(scores, k).reshape(T, B, -1)
        return ids, new_states


class ClusterPrefetcher:
    """Weight-shared LSTM applied per address cluster.

    `vocab_sizes[c]` is the dense output count of cluster c (0 for clusters
    with no training deltas). The shared head has max(vocab_sizes) + 1
    classes; the last one is the shared OOV label. Per-cluster additive
    masks hide classes outside a cluster's vocabulary.
    """

    input_keys = ("norm_delta", "cluster_id")

    def __init__(
        self,
        vocab_sizes: list[int],
        hidden: int = 128,
        layers: int = 2,
        dtype=np.float64,
        seed: int = 0,
    ):
        if not vocab_sizes:
            raise ConfigError("need at least one cluster")
        self.k = len(vocab_sizes)
        self.vocab_sizes = list(vocab_sizes)
        self.hidden = hidden
        self.layers = layers
        self.dtype = np.dtype(dtype)
        self.head_size = max(vocab_sizes) + 1

        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(hidden)
        p: dict[str, np.ndarray] = {}
        dim = 1 + self.k
        for l in range(layers):
            p[f"lstm{l}_W"], p[f"lstm{l}_b"] = lstm_layer_init(dim, hidden, rng, self.dtype)
            dim = hidden
        p["head_W"] = uniform_init((self.head_size, hidden), scale, rng, self.dtype)
        p["head_b"] = np.zeros(self.head_size, dtype=self.dtype)
        self.params = p

        # loss mask allows a cluster's own classes plus the shared OOV slot;
        # the prediction mask additionally hides OOV
        self.loss_mask = np.full((self.k, self.head_size), MASK_NEG, dtype=self.dtype)
        self.pred_mask = np.full((self.k, self.head_size), MASK_NEG, dtype=self.dtype)
        for c, n in enumerate(vocab_sizes):
            self.loss_mask[c, :n] = 0.0
            self.loss_mask[c, -1] = 0.0
            self.pred_mask[c, :n] = 0.0

    @property
    def oov_label(self) -> int:
        return self.head_size - 1

    def shared_label(self, output_id: int, cluster: int) -> int:
        """Map a per-cluster vocab output id into the shared head."""
        return output_id if output_id < self.vocab_sizes[cluster] else self.oov_label

    def zero_states(self, batch: int):
        return zero_states(self.layers, batch, self.hidden, self.dtype)

    def _layer_weights(self):
        Ws = [self.params[f"lstm{l}_W"] for l in range(self.layers)]
        bs = [self.params[f"lstm{l}_b"] for l in range(self.layers)]
        return Ws, bs

    def _inputs(self, norm_delta, cluster_ids):
        onehot = np.eye(self.k, dtype=self.dtype)[cluster_ids]
        return np.concatenate([norm_delta[..., None].astype(self.dtype), onehot], axis=-1)

    def _forward(self, norm_delta, cluster_ids, states):
        X = self._inputs(norm_delta, cluster_ids)
        Ws, bs = self._layer_weights()
        H_top, new_states, caches = lstm_forward(X, states, Ws, bs)
        T, B, H = H_top.shape
        flat = H_top.reshape(T * B, H)
        logits = flat @ self.params["head_W"].T + self.params["head_b"]
        return logits, flat, new_states, caches

    def loss(self, norm_delta, cluster_ids, labels, states):
        logits, _, new_states, _ = self._forward(norm_delta, cluster_ids, states)
        logits = logits + self.loss_mask[cluster_ids.reshape(-1)]
        loss, _, _ = softmax_cross_entropy(logits, np.asarray(labels).reshape(-1))
        return loss, new_states

    def loss_and_grads(self, norm_delta, cluster_ids, labels, states):
        logits, flat, new_states, caches = self._forward(norm_delta, cluster_ids, states)
        masked = logits + self.loss_mask[cluster_ids.reshape(-1)]
        loss, dlogits, _ = softmax_cross_entropy(masked, np.asarray(labels).reshape(-1))

        grads = {name: np.zeros_like(p) for name, p in self.params.items()}
        grads["head_W"] = dlogits.T @ flat
        grads["head_b"] = dlogits.sum(axis=0)
        T, B = cluster_ids.shape
        dH_top = (dlogits @ self.params["head_W"]).reshape(T, B, self.hidden)
        Ws, _ = self._layer_weights()
        _, dWs, dbs = lstm_backward(dH_top, caches, Ws)
        for l in range(self.layers):
            grads[f"lstm{l}_W"] = dWs[l]
            grads[f"lstm{l}_b"] = dbs[l]
        return loss, grads, new_states

    def predict_topk(self, norm_delta, cluster_ids, states, k: int = 10):
        """Top-k shared-head ids per position; masked-out slots come back -1."""
        logits, _, new_states, _ = self._forward(norm_delta, cluster_ids, states)
        scores = logits + self.pred_mask[cluster_ids.reshape(-1)]
        ids = topk_indices(scores, min(k, self.head_size))
        picked = np.take_along_axis(scores, ids, axis=-1)
        ids = np.where(picked > MASK_NEG / 2, ids, -1)
        T, B = cluster_ids.shape
        return ids.reshape(T, B, -1), new_states


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


def embedding_dataset(misses, delta_vocab: DeltaVocab, pc_vocab) -> dict:
    """Per-event arrays for the embedding model.

    Event t covers the transition miss t -> miss t+1: the input delta is
    the one leading into miss t (OOV start token for t=0), the label is
    the delta out of it. A stream of L misses yields L-1 events.
    """
    from .vocab import compute_deltas

    deltas = compute_deltas(misses)
    raw = np.array([r.delta for r in deltas], dtype=np.int64)
    labels = delta_vocab.encode_output(raw.tolist())
    delta_in = np.empty(len(raw), dtype=np.int64)
    delta_in[0] = delta_vocab.oov_input
    if len(raw) > 1:
        delta_in[1:] = delta_vocab.encode_input(raw[:-1].tolist())
    pcs = pc_vocab.encode([r.pc for r in deltas])
    ts = np.array([r.timestep for r in deltas], dtype=np.int64)
    return {
        "pc": pcs,
        "delta_in": delta_in,
        "label": labels,
        "delta_raw": raw,
        "timestep": ts,
        "target_index": ts + 1,
    }


def build_cluster_vocabs(
    misses,
    assignments: np.ndarray,
    train_len: int,
    max_output: int = 50_000,
    min_input_count: int = 1,
) -> list[DeltaVocab | None]:
    """Per-cluster vocabularies from training-split deltas only.

    A delta counts as training data when both of its endpoint misses fall
    inside the train prefix. Clusters with no training deltas get None.
    """
    k = int(assignments.max()) + 1 if len(assignments) else 0
    vocabs: list[DeltaVocab | None] = []
    for c in range(k):
        idx = np.nonzero(assignments == c)[0]
        train_idx = idx[idx < train_len]
        ds = [
            signed_delta(misses[a].line_addr, misses[b].line_addr)
            for a, b in zip(train_idx[:-1], train_idx[1:])
        ]
        vocabs.append(build_vocab(ds, max_output, min_input_count) if ds else None)
    return vocabs


def cluster_dataset(
    misses,
    assignments: np.ndarray,
    vocabs: list[DeltaVocab | None],
    norm_params: np.ndarray,
    model: ClusterPrefetcher,
) -> dict:
    """Padded (k, max_len) arrays, one row per cluster.

    Row c holds cluster c's within-cluster events in order; events past a
    cluster's length carry label -1 and are ignored by the loss.
    """
    k = model.k
    rows = {"norm_delta": [], "label": [], "delta_raw": [], "target_index": [], "timestep": []}
    for c in range(k):
        idx = np.nonzero(assignments == c)[0]
        raw = [
            signed_delta(misses[a].line_addr, misses[b].line_addr)
            for a, b in zip(idx[:-1], idx[1:])
        ]
        n_ev = len(raw)
        mean, std = norm_params[c]
        norm_in = np.zeros(n_ev, dtype=np.float64)
        if n_ev > 1:
            norm_in[1:] = (np.asarray(raw[:-1], dtype=np.float64) - mean) / (std if std > 0 else 1.0)
        if vocabs[c] is not None:
            lab = np.array(
                [model.shared_label(i, c) for i in vocabs[c].encode_output(raw)], dtype=np.int64
            )
        else:
            lab = np.full(n_ev, -1, dtype=np.int64)
        rows["norm_delta"].append(norm_in)
        rows["label"].append(lab)
        rows["delta_raw"].append(np.asarray(raw, dtype=np.int64))
        rows["target_index"].append(idx[1:].astype(np.int64))
        rows["timestep"].append(
            np.array([misses[i].timestep for i in idx[:-1]], dtype=np.int64)
        )

    max_len = max((len(r) for r in rows["label"]), default=0)
    out = {
        "norm_delta": np.zeros((k, max_len), dtype=np.float64),
        "label": np.full((k, max_len), -1, dtype=np.int64),
        "delta_raw": np.zeros((k, max_len), dtype=np.int64),
        "target_index": np.full((k, max_len), -1, dtype=np.int64),
        "timestep": np.full((k, max_len), -1, dtype=np.int64),
        "cluster_id": np.tile(np.arange(k, dtype=np.int64)[:, None], (1, max_len)),
        "length": np.array([len(r) for r in rows["label"]], dtype=np.int64),
    }
    for name in ("norm_delta", "label", "delta_raw", "target_index", "timestep"):
        for c in range(k):
            out[name][c, : len(rows[name][c])] = rows[name][c]
    return out


def batchify(arrays: dict, batch: int) -> dict:
    """Cut each 1-D array into `batch` contiguous rows, trimming the tail."""
    n = len(next(iter(arrays.values())))
    if batch < 1 or batch > n:
        raise DataError(f"batch {batch} out of range for {n} events")
    cols = n // batch
    return {name: a[: batch * cols].reshape(batch, cols) for name, a in arrays.items()}


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    steps: int
    window: int = 64
    optimizer: str = "adam"
    lr: float | None = None
    clip: float = 5.0
    eval_every: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "adagrad"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lr is None:
            self.lr = 1e-3 if self.optimizer == "adam" else 0.1


def train_model(model, batches: dict, cfg: TrainConfig, callback=None) -> list[dict]:
    """Truncated-BPTT training over (rows, cols) batched arrays.

    Windows advance along columns with recurrent state carried between
    them; state resets when the data wraps. `callback(step, model)` runs
    every `eval_every` steps and stops training by returning True.
    Returns per-step history entries {step, loss, grad_norm}.
    """
    rows, cols = batches["label"].shape
    if cols < 1:
        raise DataError("no training events")
    window = min(cfg.window, cols)
    states = model.zero_states(rows)
    opt_state: dict = {}
    history = []
    pos = 0
    for step in range(1, cfg.steps + 1):
        if pos + window > cols:
            pos = 0
            states = model.zero_states(rows)
        sl = slice(pos, pos + window)
        inputs = [batches[key][:, sl].T for key in model.input_keys]
        labels = batches["label"][:, sl].T
        loss, grads, states = model.loss_and_grads(*inputs, labels, states)
        norm = clip_global_norm(grads, cfg.clip)
        if cfg.optimizer == "adam":
            adam_step(model.params, grads, opt_state, lr=cfg.lr)
        else:
            adagrad_step(model.params, grads, opt_state, lr=cfg.lr)
        history.append({"step": step, "loss": loss, "grad_norm": norm})
        pos += window
        if callback is not None and cfg.eval_every and step % cfg.eval_every == 0:
            if callback(step, model):
                break
    return history


# ---------------------------------------------------------------------------
# Model checkpoints
# ---------------------------------------------------------------------------


def save_model(model, path, extra_meta: dict | None = None) -> None:
    """Write parameters plus enough metadata to rebuild the model."""
    from .lstm import save_checkpoint

    if isinstance(model, EmbeddingPrefetcher):
        base = model.e_pc if model.modality == "both" else max(model.e_pc, model.e_delta) // 2
        meta = {
            "kind": "embedding",
            "n_delta_inputs": model.n_delta_inputs,
            "n_pcs": model.n_pcs,
            "n_outputs": model.n_outputs,
            "hidden": model.hidden,
            "embed": base,
            "layers": model.layers,
            "modality": model.modality,
            "dtype": model.dtype.name,
        }
    elif isinstance(model, ClusterPrefetcher):
        meta = {
            "kind": "cluster",
            "vocab_sizes": model.vocab_sizes,
            "hidden": model.hidden,
            "layers": model.layers,
            "dtype": model.dtype.name,
        }
    else:
        raise ConfigError(f"cannot checkpoint {type(model).__name__}")
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, model.params, meta)


def load_model(path):
    """Rebuild a model from a checkpoint; returns (model, meta)."""
    from .lstm import load_checkpoint

    arrays, meta = load_checkpoint(path)
    kind = meta.get("kind")
    if kind == "embedding":
        model = EmbeddingPrefetcher(
            n_delta_inputs=meta["n_delta_inputs"],
            n_pcs=meta["n_pcs"],
            n_outputs=meta["n_outputs"],
            hidden=meta["hidden"],
            embed=meta["embed"],
            layers=meta["layers"],
            modality=meta["modality"],
            dtype=np.dtype(meta["dtype"]),
        )
    elif kind == "cluster":
        model = ClusterPrefetcher(
            vocab_sizes=list(meta["vocab_sizes"]),
            hidden=meta["hidden"],
            layers=meta["layers"],
            dtype=np.dtype(meta["dtype"]),
        )
    else:
        raise ConfigError(f"{path}: unknown model kind {kind!r}")
    for name, arr in arrays.items():
        if name not in model.params or model.params[name].shape != arr.shape:
            raise ConfigError(f"{path}: parameter {name} does not match model shape")
        model.params[name] = arr.astype(model.dtype)
    return model, meta


# ---------------------------------------------------------------------------
# Prediction set assembly
# ---------------------------------------------------------------------------


def embedding_prediction_sets(
    model: EmbeddingPrefetcher,
    dataset: dict,
    delta_vocab: DeltaVocab,
    test_start: int,
    k: int = 10,
    window: int = 512,
):
    """Stream the full event sequence (warm state) and keep events whose
    target miss index is >= test_start."""
    from .eval import PredictionSet

    n = len(dataset["label"])
    states = model.zero_states(1)
    keep = dataset["target_index"] >= test_start
    out = []
    for lo in range(0, n, window):
        hi = min(lo + window, n)
        pc = dataset["pc"][lo:hi].reshape(-1, 1)
        din = dataset["delta_in"][lo:hi].reshape(-1, 1)
        ids, states = model.predict_topk(pc, din, states, k)
        for j in range(lo, hi):
            if not keep[j]:
                continue
            preds = tuple(delta_vocab.decode_output(int(i)) for i in ids[j - lo, 0])
            out.append(
                PredictionSet(
                    timestep=int(dataset["timestep"][j]),
                    predicted=preds,
                    true_delta=int(dataset["delta_raw"][j]),
                )
            )
    return out


def cluster_prediction_sets(
    model: ClusterPrefetcher,
    dataset: dict,
    vocabs: list[DeltaVocab | None],
    test_start: int,
    k: int = 10,
    window: int = 512,
):
    from .eval import PredictionSet

    rows, cols = dataset["label"].shape
    states = model.zero_states(rows)
    out = []
    for lo in range(0, cols, window):
        hi = min(lo + window, cols)
        nd = dataset["norm_delta"][:, lo:hi].T
        cid = dataset["cluster_id"][:, lo:hi].T
        ids, states = model.predict_topk(nd, cid, states, k)
        for c in range(rows):
            for t in range(lo, hi):
                tgt = dataset["target_index"][c, t]
                if tgt < test_start or t >= dataset["length"][c]:
                    continue
                preds = tuple(
                    vocabs[c].decode_output(int(i))
                    for i in ids[t - lo, c]
                    if i >= 0 and vocabs[c] is not None
                )
                out.append(
                    PredictionSet(
                        timestep=int(dataset["timestep"][c, t]),
                        predicted=preds,
                        true_delta=int(dataset["delta_raw"][c, t]),
                    )
                )
    out.sort(key=lambda s: s.timestep)
    return out
