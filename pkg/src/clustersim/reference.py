"""
Functional oracles for the simulated workloads.

These compute what the hardware *should* produce, using plain numpy, so
every simulation result can be checked end to end.  The attention oracle
mirrors the kernels' streaming normalization algebra; tests additionally
compare it against brute-force re-derivations that share no code with the
simulator.
"""

from __future__ import annotations

import numpy as np

EXP_EXACT = "exact"
EXP_TAYLOR2 = "taylor2"


def reference_gemm(a, b):
    """C = A @ B with FP32 accumulation over storage-rounded inputs.

    Inputs may be float16 or float32; float16 operands are converted exactly
    to float32 before multiplication, matching the MAC datapath.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return np.matmul(a.astype(np.float32), b.astype(np.float32))


def taylor2_exp(x):
    """2nd-order Taylor substitute for exp: 1 + x + x^2/2 (always >= 0.5)."""
    x = np.asarray(x, dtype=np.float32)
    return np.float32(1.0) + x + np.float32(0.5) * x * x


def reference_attention(q, k, v, exp_mode=EXP_TAYLOR2, block_cols=None):
    """O = softmax(Q K^T) V with row-streaming normalization.

    The K/V sequence is consumed in column blocks, keeping a running row sum
    `l` and rescaling the partial output by l_prev/l_new each block, exactly
    as the kernels do.  No running max is tracked: the taylor2 substitute is
    a polynomial and needs no stabilization, and the exact mode stays in
    float32 range for the evaluated shapes.
    """
    q = np.asarray(q, dtype=np.float32)
    k = np.asarray(k, dtype=np.float32)
    v = np.asarray(v, dtype=np.float32)
    if q.ndim != 2 or k.shape != (q.shape[0], q.shape[1]) or v.shape != k.shape:
        raise ValueError(
            f"shape mismatch: Q{q.shape} K{k.shape} V{v.shape}; expected (L, d) each"
        )
    if exp_mode not in (EXP_EXACT, EXP_TAYLOR2):
        raise ValueError(f"unknown exp_mode {exp_mode!r}")

    seq_len, head_dim = q.shape
    bc = block_cols or seq_len
    out = np.zeros((seq_len, head_dim), dtype=np.float32)
    lsum = np.zeros((seq_len, 1), dtype=np.float32)

    for j0 in range(0, seq_len, bc):
        kj = k[j0 : j0 + bc]
        vj = v[j0 : j0 + bc]
        s = np.matmul(q, kj.T)
        p = taylor2_exp(s) if exp_mode == EXP_TAYLOR2 else np.exp(s, dtype=np.float32)
        lnew = lsum + p.sum(axis=1, keepdims=True, dtype=np.float32)
        scale = np.where(lnew > 0, lsum / lnew, np.float32(0.0)).astype(np.float32)
        out = out * scale + np.matmul(p / lnew, vj)
        lsum = lnew
    return out
