"""Independent reference implementations used to verify the package.

Everything here is deliberately written on a different path from the code
under test: scalar loops instead of vectorized numpy, mpmath instead of
scipy, backward scanning instead of forward state tracking.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np


def finite_diff_grads(loss_fn, params: dict[str, np.ndarray], h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central finite differences of a scalar loss w.r.t. every array element."""
    out = {}
    for name, arr in params.items():
        g = np.zeros_like(arr, dtype=np.float64)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            old = arr[ix]
            arr[ix] = old + h
            lp = loss_fn()
            arr[ix] = old - h
            lm = loss_fn()
            arr[ix] = old
            g[ix] = (lp - lm) / (2.0 * h)
        out[name] = g
    return out


def max_rel_err(analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray]) -> float:
    worst = 0.0
    for name, a in analytic.items():
        b = numeric[name]
        denom = np.maximum(np.abs(a) + np.abs(b), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst


def gradient_check(loss_and_grads, params: dict[str, np.ndarray], h: float = 1e-5) -> float:
    """Max relative error between analytic gradients and finite differences.

    ``loss_and_grads()`` must return (loss, grads_dict) evaluated at the
    current parameter values.
    """
    _, grads = loss_and_grads()
    numeric = finite_diff_grads(lambda: loss_and_grads()[0], params, h)
    return max_rel_err(grads, numeric)


# ---------------------------------------------------------------------------
# statistics


def moments_mp(values) -> tuple[float, ...]:
    """(mean, max, min, median, std, skew, kurtosis) at 50-digit precision."""
    with mpmath.workdps(50):
        vs = [mpmath.mpf(float(v)) for v in values]
        n = len(vs)
        mean = mpmath.fsum(vs) / n
        m2 = mpmath.fsum((v - mean) ** 2 for v in vs) / n
        m3 = mpmath.fsum((v - mean) ** 3 for v in vs) / n
        m4 = mpmath.fsum((v - mean) ** 4 for v in vs) / n
        std = mpmath.sqrt(m2)
        if m2 < mpmath.mpf("1e-12"):
            skew = mpmath.mpf(0)
            kurt = mpmath.mpf(0)
        else:
            skew = m3 / m2 ** mpmath.mpf("1.5")
            kurt = m4 / m2**2 - 3
        ordered = sorted(vs)
        if n % 2:
            median = ordered[n // 2]
        else:
            median = (ordered[n // 2 - 1] + ordered[n // 2]) / 2
        return (
            float(mean),
            float(max(vs)),
            float(min(vs)),
            float(median),
            float(std),
            float(skew),
            float(kurt),
        )


def scaler_oracle(rows: np.ndarray) -> tuple[list[float], list[float]]:
    """Two-pass per-column mean and population std with exact summation."""
    n, d = rows.shape
    means = [math.fsum(float(rows[i, j]) for i in range(n)) / n for j in range(d)]
    stds = [
        math.sqrt(math.fsum((float(rows[i, j]) - means[j]) ** 2 for i in range(n)) / n)
        for j in range(d)
    ]
    return means, stds


def pearson_r_oracle(x, y) -> float:
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    sxy = math.fsum((x[i] - mx) * (y[i] - my) for i in range(n))
    sxx = math.fsum((x[i] - mx) ** 2 for i in range(n))
    syy = math.fsum((y[i] - my) ** 2 for i in range(n))
    if sxx <= 0 or syy <= 0:
        return 0.0
    return sxy / math.sqrt(sxx * syy)


def pearson_p_oracle(r: float, n: int) -> float:
    """Two-sided p-value via the Student-t route at 50-digit precision."""
    with mpmath.workdps(50):
        rr = mpmath.mpf(float(r))
        df = mpmath.mpf(n - 2)
        if abs(rr) >= 1:
            return 0.0
        t2 = df * rr**2 / (1 - rr**2)
        x = df / (df + t2)
        p = mpmath.betainc(df / 2, mpmath.mpf("0.5"), 0, x, regularized=True)
        return float(p)


# ---------------------------------------------------------------------------
# pauses


def brute_force_pauses(transcript) -> list[tuple[int, float, str]]:
    """(token_index, duration, category) per patient token, by backward scan."""
    out = []
    toks = transcript.tokens
    for k, tok in enumerate(toks):
        if tok.speaker != transcript.patient_speaker:
            continue
        duration = 0.0
        for i in range(k - 1, -1, -1):
            if toks[i].speaker != transcript.patient_speaker:
                duration = 0.0  # another speaker talked in between
            else:
                duration = max(0.0, tok.start - toks[i].end)
            break
        if duration >= 1.5:
            cat = "LP"
        elif duration >= 0.5:
            cat = "SP"
        else:
            cat = "none"
        out.append((k, duration, cat))
    return out


# ---------------------------------------------------------------------------
# neural nets


def dense_oracle(x, w, b, activation="identity"):
    """Triple-loop dense layer."""
    bsz, in_dim = x.shape
    out_dim = w.shape[0]
    y = np.zeros((bsz, out_dim))
    for i in range(bsz):
        for o in range(out_dim):
            acc = float(b[o])
            for j in range(in_dim):
                acc += float(x[i, j]) * float(w[o, j])
            if activation == "sigmoid":
                acc = 1.0 / (1.0 + math.exp(-acc))
            elif activation == "tanh":
                acc = math.tanh(acc)
            elif activation == "relu":
                acc = max(acc, 0.0)
            y[i, o] = acc
    return y


def lstm_cell_oracle(x, h, c, p):
    """Scalar-loop LSTM step on single vectors."""
    hid = p.hidden
    in_dim = x.shape[0]

    def gate_pre(row):
        acc = float(p.b[row])
        for j in range(in_dim):
            acc += float(p.w_ih[row, j]) * float(x[j])
        for j in range(hid):
            acc += float(p.w_hh[row, j]) * float(h[j])
        return acc

    def sig(z):
        return 1.0 / (1.0 + math.exp(-z))

    h_new = np.zeros(hid)
    c_new = np.zeros(hid)
    for j in range(hid):
        i_g = sig(gate_pre(j))
        f_g = sig(gate_pre(hid + j))
        g_g = math.tanh(gate_pre(2 * hid + j))
        o_g = sig(gate_pre(3 * hid + j))
        c_new[j] = f_g * float(c[j]) + i_g * g_g
        h_new[j] = o_g * math.tanh(c_new[j])
    return h_new, c_new


def highway_oracle(x, p):
    """Elementwise-loop highway layer."""
    bsz, dim = x.shape
    y = np.zeros((bsz, dim))
    for i in range(bsz):
        for d in range(dim):
            zt = float(p.b_t[d])
            zh = float(p.b_h[d])
            for j in range(dim):
                zt += float(p.w_t[d, j]) * float(x[i, j])
                zh += float(p.w_h[d, j]) * float(x[i, j])
            t = 1.0 / (1.0 + math.exp(-zt))
            h = max(zh, 0.0)
            y[i, d] = t * h + (1.0 - t) * float(x[i, d])
    return y


def bce_oracle(logits, targets) -> float:
    total = math.fsum(
        -(float(y) * math.log(1.0 / (1.0 + math.exp(-float(z))))
          + (1.0 - float(y)) * math.log(1.0 - 1.0 / (1.0 + math.exp(-float(z)))))
        for z, y in zip(logits, targets)
    )
    return total / len(logits)


def mse_oracle(preds, targets) -> float:
    return math.fsum((float(p) - float(y)) ** 2 for p, y in zip(preds, targets)) / len(preds)


def adam_scalar_oracle(theta: float, grads: list[float], lr, beta1=0.9, beta2=0.999, eps=1e-8) -> float:
    m = 0.0
    v = 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        theta -= lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta


# ---------------------------------------------------------------------------
# misc


def best_threshold_accuracy(values, labels) -> float:
    """Brute-force the best single-threshold classifier over all cut points."""
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    candidates = np.concatenate([[-np.inf], np.unique(values), [np.inf]])
    best = 0.0
    for c in candidates:
        for sign in (1, -1):
            pred = (sign * values >= sign * c).astype(np.int64)
            best = max(best, float(np.mean(pred == labels)))
    return best
