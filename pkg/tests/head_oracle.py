"""Scalar-loop reimplementation of the attention head (no graph engine, no numpy algebra)."""

import math


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def _softmax(s):
    mx = max(s)
    e = [math.exp(v - mx) for v in s]
    z = sum(e)
    return [v / z for v in e]


def head_oracle(F, P, mode):
    """F: nested list [n][h][w]; P: dict of nested lists.  Returns dict of python lists."""
    n, h, w = len(F), len(F[0]), len(F[0][0])
    m = h * w
    k = len(P["W_S2"])
    Fm = [[F[c][j // w][j % w] for j in range(m)] for c in range(n)]
    V = [[P["b_S"][i] + sum(P["W_S2"][i][c] * Fm[c][j] for c in range(n)) for j in range(m)] for i in range(k)]

    def spatial(shift):
        scores = [sum(P["W_S1"][0][i] * math.tanh(V[i][j] + shift[i]) for i in range(k)) for j in range(m)]
        A = _softmax(scores)
        f = [sum(A[j] * V[i][j] for j in range(m)) for i in range(k)]
        return A, f

    def channel():
        G = [[Fm[c][j] for c in range(n)] for j in range(m)]  # m x n
        Z = [[_sigmoid(P["b_C"][r] + sum(P["W_C1"][r][t] * G[t][c] for t in range(m))) for c in range(n)] for r in range(m)]
        A_C = [sum(Z[r][c] for r in range(m)) / m for c in range(n)]
        f = [sum(A_C[i] * V[i][j] for j in range(m)) / m for i in range(k)]
        return A_C, f

    A_S = A_C = None
    if mode == "S":
        A_S, f_S = spatial([0.0] * k)
        f_A = f_S + f_S
    elif mode == "CW":
        A_C, f_C = channel()
        f_A = f_C + f_C
    else:
        A_C, f_C = channel()
        shift = [P["b_CS"][i] + sum(P["W_CS"][i][c] * A_C[c] for c in range(n)) for i in range(k)]
        A_S, f_S = spatial(shift)
        f_A = f_S + f_C
    pred = [P["b_out"][e] + sum(P["W_out"][e][t] * f_A[t] for t in range(2 * k)) for e in range(len(P["W_out"]))]
    return {"A_S": A_S, "A_C": A_C, "f_A": f_A, "prediction": pred}
