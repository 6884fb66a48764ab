import math

import numpy as np
import pytest

from prefetchlab.errors import TraceFormatError
from prefetchlab.lstm import (
    adagrad_step,
    adam_step,
    clip_global_norm,
    finite_difference_grads,
    load_checkpoint,
    lstm_backward,
    lstm_cell_forward,
    lstm_forward,
    lstm_layer_init,
    relative_grad_error,
    save_checkpoint,
    sigmoid,
    softmax_cross_entropy,
    softmax_probs,
    topk_indices,
    zero_states,
)


def scalar_sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def scalar_cell_oracle(x, h_prev, c_prev, W, b):
    """Cell equations evaluated with explicit Python loops, no numpy."""
    B, D = x.shape
    H = h_prev.shape[1]
    h_out = np.zeros((B, H))
    c_out = np.zeros((B, H))
    for n in range(B):
        for j in range(H):
            z = [0.0, 0.0, 0.0, 0.0]  # i, f, g, o rows
            for g in range(4):
                row = g * H + j
                acc = b[row]
                for d in range(D):
                    acc += W[row, d] * x[n, d]
                for k in range(H):
                    acc += W[row, D + k] * h_prev[n, k]
                z[g] = acc
            i = scalar_sigmoid(z[0])
            f = scalar_sigmoid(z[1])
            g_ = math.tanh(z[2])
            o = scalar_sigmoid(z[3])
            c = f * c_prev[n, j] + i * g_
            c_out[n, j] = c
            h_out[n, j] = o * math.tanh(c)
    return h_out, c_out


def test_cell_forward_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    for _ in range(25):
        B = int(rng.integers(1, 4))
        D = int(rng.integers(1, 6))
        H = int(rng.integers(1, 8))
        W = rng.normal(size=(4 * H, D + H))
        b = rng.normal(size=4 * H)
        x = rng.normal(size=(B, D))
        h_prev = rng.normal(size=(B, H))
        c_prev = rng.normal(size=(B, H))
        h, c, _ = lstm_cell_forward(x, h_prev, c_prev, W, b)
        h_ref, c_ref = scalar_cell_oracle(x, h_prev, c_prev, W, b)
        assert np.max(np.abs(h - h_ref)) < 1e-12
        assert np.max(np.abs(c - c_ref)) < 1e-12


def test_sigmoid_stable_at_extremes():
    x = np.array([-800.0, -50.0, 0.0, 50.0, 800.0])
    s = sigmoid(x)
    assert np.all(np.isfinite(s))
    assert s[0] == 0.0 or s[0] < 1e-300
    assert s[2] == 0.5
    assert s[4] == 1.0


def test_layer_init_shapes_and_forget_bias():
    rng = np.random.default_rng(1)
    W, b = lstm_layer_init(5, 8, rng)
    assert W.shape == (32, 13)
    assert np.all(np.abs(W) <= 1.0 / np.sqrt(8))
    assert np.all(b[8:16] == 1.0)
    assert np.all(b[:8] == 0.0) and np.all(b[16:] == 0.0)


# ---------------------------------------------------------------------------
# Window forward/backward
# ---------------------------------------------------------------------------


def make_stack(rng, layers, dims, hidden):
    Ws, bs = [], []
    dim = dims
    for _ in range(layers):
        W, b = lstm_layer_init(dim, hidden, rng)
        Ws.append(W)
        bs.append(b)
        dim = hidden
    return Ws, bs


def test_forward_state_carry_equals_one_shot():
    # running two half windows with carried state == one full window
    rng = np.random.default_rng(2)
    Ws, bs = make_stack(rng, 2, 3, 5)
    X = rng.normal(size=(8, 2, 3))
    full, final_full, _ = lstm_forward(X, zero_states(2, 2, 5), Ws, bs)
    first, mid_states, _ = lstm_forward(X[:4], zero_states(2, 2, 5), Ws, bs)
    second, final_split, _ = lstm_forward(X[4:], mid_states, Ws, bs)
    assert np.allclose(np.concatenate([first, second]), full, atol=1e-14)
    for (h1, c1), (h2, c2) in zip(final_full, final_split):
        assert np.allclose(h1, h2, atol=1e-14)
        assert np.allclose(c1, c2, atol=1e-14)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    for seed in range(3):
        rng = np.random.default_rng(seed)
        layers, D, H, T, B = 2, 3, 4, 5, 2
        Ws, bs = make_stack(rng, layers, D, H)
        X = rng.normal(size=(T, B, D))
        target = rng.normal(size=(T, B, H))

        params = {}
        for l in range(layers):
            params[f"W{l}"] = Ws[l]
            params[f"b{l}"] = bs[l]
        params["X"] = X

        def loss_fn():
            out, _, _ = lstm_forward(X, zero_states(layers, B, H), Ws, bs)
            return 0.5 * float(np.sum((out - target) ** 2))

        out, _, caches = lstm_forward(X, zero_states(layers, B, H), Ws, bs)
        dX, dWs, dbs = lstm_backward(out - target, caches, Ws)
        analytic = {"X": dX}
        for l in range(layers):
            analytic[f"W{l}"] = dWs[l]
            analytic[f"b{l}"] = dbs[l]

        numeric = finite_difference_grads(loss_fn, params, eps=1e-6)
        for name in params:
            assert relative_grad_error(analytic[name], numeric[name]) < 1e-7, name


# ---------------------------------------------------------------------------
# Softmax cross entropy
# ---------------------------------------------------------------------------


def test_softmax_cross_entropy_matches_scalar_oracle():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(6, 5)) * 3
    labels = rng.integers(0, 5, size=6)
    loss, dlogits, n = softmax_cross_entropy(logits, labels)
    assert n == 6
    # scalar reference with explicit max subtraction
    total = 0.0
    for i in range(6):
        m = max(logits[i])
        lse = m + math.log(sum(math.exp(v - m) for v in logits[i]))
        total += lse - logits[i, labels[i]]
    assert loss == pytest.approx(total / 6, abs=1e-12)


def test_softmax_cross_entropy_ignores_negative_labels():
    logits = np.array([[1.0, 2.0], [3.0, 0.0], [0.5, 0.5]])
    labels = np.array([0, -1, 1])
    loss, dlogits, n = softmax_cross_entropy(logits, labels)
    assert n == 2
    assert np.all(dlogits[1] == 0.0)
    loss2, _, _ = softmax_cross_entropy(logits[[0, 2]], labels[[0, 2]])
    assert loss == pytest.approx(loss2, abs=1e-12)


def test_softmax_cross_entropy_all_ignored():
    loss, dlogits, n = softmax_cross_entropy(np.ones((2, 3)), np.array([-1, -1]))
    assert (loss, n) == (0.0, 0)
    assert np.all(dlogits == 0.0)


def test_softmax_cross_entropy_gradient_fd():
    rng = np.random.default_rng(5)
    logits = rng.normal(size=(4, 6))
    labels = np.array([2, -1, 0, 5])
    _, dlogits, _ = softmax_cross_entropy(logits, labels)
    params = {"logits": logits}
    numeric = finite_difference_grads(
        lambda: softmax_cross_entropy(logits, labels)[0], params, eps=1e-6
    )
    assert relative_grad_error(dlogits, numeric["logits"]) < 1e-8


def test_softmax_probs_huge_logits_stable():
    probs = softmax_probs(np.array([[1000.0, 1000.0, -1000.0]]))
    assert np.all(np.isfinite(probs))
    assert probs[0, 0] == pytest.approx(0.5)
    assert probs.sum() == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# Top-k
# ---------------------------------------------------------------------------


def test_topk_highest_first():
    scores = np.array([0.1, 0.9, 0.5, 0.7])
    assert topk_indices(scores, 3).tolist() == [1, 3, 2]


def test_topk_ties_break_to_lower_id():
    scores = np.array([0.5, 0.9, 0.5, 0.9])
    assert topk_indices(scores, 4).tolist() == [1, 3, 0, 2]


def test_topk_k_larger_than_classes():
    assert topk_indices(np.array([0.3, 0.1]), 10).tolist() == [0, 1]


def test_topk_batched():
    scores = np.array([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]])
    out = topk_indices(scores, 2)
    assert out.tolist() == [[2, 1], [0, 1]]


# ---------------------------------------------------------------------------
# Optimizers and clipping
# ---------------------------------------------------------------------------


def test_clip_global_norm_oracle():
    grads = {"a": np.array([3.0, 4.0]), "b": np.array([[12.0]])}
    norm = clip_global_norm(grads, max_norm=5.0)
    assert norm == pytest.approx(13.0)
    assert np.allclose(grads["a"], np.array([3.0, 4.0]) * 5 / 13)
    assert np.allclose(grads["b"], np.array([[12.0]]) * 5 / 13)


def test_clip_noop_below_threshold():
    grads = {"a": np.array([0.3, 0.4])}
    norm = clip_global_norm(grads, max_norm=5.0)
    assert norm == pytest.approx(0.5)
    assert np.allclose(grads["a"], [0.3, 0.4])


def test_adam_first_step_oracle():
    # after one step from zero state the update is -lr * g/(|g| + eps-ish)
    p = np.array([1.0, -2.0])
    g = np.array([0.5, -0.25])
    params = {"p": p}
    state = {}
    adam_step(params, {"p": g.copy()}, state, lr=0.001)
    m_hat = g  # (1-b1)*g / (1-b1)
    v_hat = g * g
    expected = np.array([1.0, -2.0]) - 0.001 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert np.allclose(params["p"], expected, atol=1e-12)
    assert state["t"] == 1


def test_adam_two_steps_oracle():
    b1, b2, lr, eps = 0.9, 0.999, 0.001, 1e-8
    p = np.array([0.5])
    g1, g2 = np.array([0.2]), np.array([-0.4])
    params = {"p": p.copy()}
    state = {}
    adam_step(params, {"p": g1.copy()}, state, lr=lr)
    adam_step(params, {"p": g2.copy()}, state, lr=lr)

    m = (1 - b1) * g1
    v = (1 - b2) * g1**2
    ref = p - lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)
    m = b1 * m + (1 - b1) * g2
    v = b2 * v + (1 - b2) * g2**2
    ref = ref - lr * (m / (1 - b1**2)) / (np.sqrt(v / (1 - b2**2)) + eps)
    assert np.allclose(params["p"], ref, atol=1e-14)


def test_adagrad_steps_oracle():
    lr, eps = 0.1, 1e-8
    params = {"p": np.array([1.0])}
    state = {}
    acc = 0.0
    ref = 1.0
    for g in [0.5, -1.5, 0.25]:
        adagrad_step(params, {"p": np.array([g])}, state, lr=lr)
        acc += g * g
        ref -= lr * g / (math.sqrt(acc) + eps)
    assert params["p"][0] == pytest.approx(ref, abs=1e-14)


def test_optimizers_keep_state_per_param():
    params = {"a": np.zeros(2), "b": np.zeros(3)}
    grads = {"a": np.ones(2), "b": np.ones(3)}
    state = {}
    adam_step(params, grads, state, lr=0.1)
    assert set(state) == {"t", "m_a", "v_a", "m_b", "v_b"}


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(8)
    arrays = {
        "w": rng.normal(size=(7, 3)),
        "b": rng.normal(size=5).astype(np.float32),
        "ids": np.arange(4, dtype=np.int64),
        "scalar": np.float64(3.25),
    }
    meta = {"step": 12, "note": "x"}
    path = tmp_path / "ck.bin"
    save_checkpoint(path, arrays, meta)
    loaded, got_meta = load_checkpoint(path)
    assert got_meta == meta
    assert set(loaded) == set(arrays)
    for name in arrays:
        a = np.asarray(arrays[name])
        assert loaded[name].dtype == a.dtype
        assert loaded[name].shape == a.shape
        assert np.array_equal(loaded[name], a)
        # bit-exact, not just close
        assert loaded[name].tobytes() == a.tobytes()


def test_checkpoint_bytes_deterministic(tmp_path):
    arrays = {"b": np.arange(6.0), "a": np.ones((2, 2), dtype=np.float32)}
    p1, p2 = tmp_path / "1.bin", tmp_path / "2.bin"
    save_checkpoint(p1, arrays)
    save_checkpoint(p2, dict(reversed(list(arrays.items()))))
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"BADMAGIC" + b"\x00" * 16)
    with pytest.raises(TraceFormatError):
        load_checkpoint(path)
