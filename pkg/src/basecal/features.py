"""Fast-point-feature-histogram style local descriptors for coarse alignment."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

N_BINS = 11  # per angular feature; descriptor is 3 * N_BINS wide


def _pair_angles(p1, n1, p2, n2):
    """Darboux-frame angle triplet per point pair (vectorized).

    The frame anchors at whichever endpoint's normal is better aligned with
    the connecting line, so the triplet is symmetric in the pair order.
    """
    d = p2 - p1
    dist = np.linalg.norm(d, axis=1)
    safe = np.where(dist > 1e-12, dist, 1.0)
    dn = d / safe[:, None]
    swap = np.einsum("ij,ij->i", n1 + n2, dn) < 0.0
    ns = np.where(swap[:, None], n2, n1)
    nt = np.where(swap[:, None], n1, n2)
    ds = np.where(swap[:, None], -dn, dn)

    u = ns
    v = np.cross(ds, u)
    v_len = np.linalg.norm(v, axis=1)
    v_safe = np.where(v_len > 1e-12, v_len, 1.0)
    v = v / v_safe[:, None]
    w = np.cross(u, v)

    alpha = np.einsum("ij,ij->i", v, nt)
    phi = np.einsum("ij,ij->i", u, ds)
    theta = np.arctan2(np.einsum("ij,ij->i", w, nt), np.einsum("ij,ij->i", u, nt))
    degenerate = v_len <= 1e-12
    alpha[degenerate] = 0.0
    theta[degenerate] = 0.0
    return alpha, phi, theta, dist


def _bin_index(values, lo, hi):
    idx = np.floor((values - lo) / (hi - lo) * N_BINS).astype(np.int64)
    return np.clip(idx, 0, N_BINS - 1)


def fpfh_features(points: np.ndarray, normals: np.ndarray, radius: float) -> np.ndarray:
    """Per-point 33-bin descriptor over a fixed-radius neighborhood."""
    n = len(points)
    spfh = np.zeros((n, 3 * N_BINS))
    tree = cKDTree(points)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return spfh
    i, j = pairs[:, 0], pairs[:, 1]
    alpha, phi, theta, dist = _pair_angles(points[i], normals[i], points[j], normals[j])

    b_alpha = _bin_index(alpha, -1.0, 1.0)
    b_phi = _bin_index(phi, -1.0, 1.0) + N_BINS
    b_theta = _bin_index(theta, -np.pi, np.pi) + 2 * N_BINS
    for endpoint in (i, j):
        for bins in (b_alpha, b_phi, b_theta):
            np.add.at(spfh, (endpoint, bins), 1.0)

    # distance-weighted neighbor pooling: closer neighbors contribute more
    inv_d = 1.0 / np.where(dist > 1e-12, dist, 1e-12)
    pooled = np.zeros_like(spfh)
    weight_sum = np.zeros(n)
    np.add.at(pooled, i, spfh[j] * inv_d[:, None])
    np.add.at(pooled, j, spfh[i] * inv_d[:, None])
    np.add.at(weight_sum, i, inv_d)
    np.add.at(weight_sum, j, inv_d)
    has_neighbors = weight_sum > 0
    pooled[has_neighbors] /= weight_sum[has_neighbors, None]
    feature = spfh + pooled

    # normalize each 11-bin block so density differences cancel
    for k in range(3):
        block = feature[:, k * N_BINS:(k + 1) * N_BINS]
        sums = block.sum(axis=1, keepdims=True)
        block /= np.where(sums > 0, sums, 1.0)
    return feature
