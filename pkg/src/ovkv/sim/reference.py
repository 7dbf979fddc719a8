"""Slow, independent re-implementation of the engine step, used as an oracle.

Everything is written with plain loops and full sorts over Python lists. It shares no code
with the engine beyond the input types, so agreement between the two is meaningful.
"""
from __future__ import annotations

import math

import numpy as np

from ..core import EngineConfig
from ..engine import FrameInput
from ..geometry import Intrinsics

INIT = "init"


def _norm(v):
    return math.sqrt(float(np.dot(v, v)))


def _kernel(size, sigma):
    half = size // 2
    w = [math.exp(-0.5 * ((i - half) / sigma) ** 2) for i in range(size)]
    total = sum(w)
    w = [x / total for x in w]
    return [[a * b for b in w] for a in w]


def _reflect(i, n):
    if n == 1:
        return 0
    while i < 0 or i >= n:
        i = -i if i < 0 else 2 * (n - 1) - i
    return i


def smooth_direct(grid, alpha, size, sigma):
    """Direct 2-D convolution with reflect borders, blended with the input."""
    rows, cols = len(grid), len(grid[0])
    k = _kernel(size, sigma)
    half = size // 2
    out = [[0.0] * cols for _ in range(rows)]
    for r in range(rows):
        for c in range(cols):
            acc = 0.0
            for i in range(size):
                for j in range(size):
                    acc += k[i][j] * grid[_reflect(r + i - half, rows)][_reflect(c + j - half, cols)]
            out[r][c] = alpha * acc + (1 - alpha) * grid[r][c]
    return out


def project_naive(point_world, anchor_pose, current_pose, cam: Intrinsics, z_min=1e-6):
    Ra, ta = anchor_pose.rotation, anchor_pose.translation
    Rt, tt = current_pose.rotation, current_pose.translation
    p_anchor = [sum(Ra[j][i] * (point_world[j] - ta[j]) for j in range(3)) for i in range(3)]
    p_world = [sum(Ra[i][j] * p_anchor[j] for j in range(3)) + ta[i] for i in range(3)]
    p_cur = [sum(Rt[j][i] * (p_world[j] - tt[j]) for j in range(3)) for i in range(3)]
    if p_cur[2] <= z_min:
        return False
    u = cam.fx * p_cur[0] / p_cur[2] + cam.cx
    v = cam.fy * p_cur[1] / p_cur[2] + cam.cy
    return 0 <= u < cam.width and 0 <= v < cam.height


def coverage_naive(points, anchor_pose, current_pose, cam):
    hits = sum(project_naive(p, anchor_pose, current_pose, cam) for p in points)
    return hits / len(points)


def top_confident(conf, eta):
    k = math.ceil(eta * len(conf))
    ranked = sorted(range(len(conf)), key=lambda i: (-conf[i], i))
    return sorted(ranked[:k])


def _minmax(xs):
    if not xs:
        return []
    lo, hi = min(xs), max(xs)
    if hi == lo:
        return [0.5] * len(xs)
    return [(x - lo) / (hi - lo) for x in xs]


def _diversity(keys):
    n = len(keys)
    centroid = np.sum(np.array(keys), axis=0) / n
    cn = _norm(centroid)
    out = []
    for k in keys:
        kn = _norm(k)
        if cn == 0 or kn == 0:
            out.append(0.0)
        else:
            out.append(1.0 - max(-1.0, min(1.0, float(np.dot(k, centroid)) / (kn * cn))))
    return out


def _allocate(total, div, floors):
    spare = total - sum(floors)
    if spare < 0:
        raise ValueError("budget below floors")
    s = sum(div)
    quotas = [spare * d / s for d in div] if s > 0 else [spare / len(div)] * len(div)
    base = [int(math.floor(q)) for q in quotas]
    left = spare - sum(base)
    ranked = sorted(range(len(div)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in ranked[:left]:
        base[i] += 1
    return [f + b for f, b in zip(floors, base)]


class ReferenceEngine:
    """Token lists per layer; each token is a dict with frame, slot, key and protection."""

    def __init__(self, cfg: EngineConfig, cam: Intrinsics):
        self.cfg = cfg
        self.cam = cam
        self.layers = [[] for _ in range(cfg.dims.num_layers)]
        self.camera = []
        self.anchors = []  # (id, frame, pose, points, patch slots)
        self.initial = None
        self.last_reg = 0
        self.next_id = 1

    def survivors(self):
        return [[(tok["frame"], tok["slot"]) for tok in layer] for layer in self.layers]

    def camera_survivors(self):
        return [tok["frame"] for tok in self.camera]

    def step(self, frame: FrameInput):
        cfg, dims = self.cfg, self.cfg.dims
        t = frame.frame_index
        M, A = dims.tokens_per_frame, dims.num_aux
        for l, layer in enumerate(self.layers):
            for s in range(M):
                layer.append({"frame": t, "slot": s, "key": np.asarray(frame.keys[l][s], float), "prot": None})
        self.camera.append({"frame": t, "key": np.asarray(frame.camera_key, float), "prot": None})

        if cfg.protect_anchors:
            if self.initial is None:
                self.initial = (0, t, frame.pose, frame.points.points)
                self.last_reg = t
                for layer in self.layers:
                    for tok in layer:
                        if tok["frame"] == t:
                            tok["prot"] = INIT
                self.camera[-1]["prot"] = INIT
            else:
                ref = self.anchors[-1] if self.anchors else self.initial
                rho = coverage_naive(ref[3], ref[2], frame.pose, self.cam)
                if rho < cfg.coverage_tau and t - self.last_reg >= cfg.min_anchor_interval and cfg.max_anchors > 0:
                    slots = [A + i for i in top_confident(list(frame.points.confidence), cfg.anchor_eta)]
                    aid = self.next_id
                    self.next_id += 1
                    self.last_reg = t
                    self.anchors.append((aid, t, frame.pose, frame.points.points, slots))
                    for layer in self.layers:
                        for tok in layer:
                            if tok["frame"] == t and tok["slot"] in slots:
                                tok["prot"] = aid
                    self.camera[-1]["prot"] = aid
                    if len(self.anchors) > cfg.max_anchors:
                        gone = self.anchors.pop(0)[0]
                        for tok in [x for layer in self.layers for x in layer] + self.camera:
                            if tok["prot"] == gone:
                                tok["prot"] = None

        if sum(len(layer) for layer in self.layers) > cfg.total_budget:
            divs, floors = [], []
            for layer in self.layers:
                hist = [tok for tok in layer if tok["prot"] is None and tok["frame"] != t]
                d = _diversity([tok["key"] for tok in hist]) if hist else []
                for tok, x in zip(hist, d):
                    tok["div"] = x
                divs.append(sum(d) / len(d) if d else 0.0)
                floors.append(sum(tok["prot"] is not None for tok in layer) + M)
            budgets = _allocate(cfg.total_budget, divs, floors)
            for l, layer in enumerate(self.layers):
                if len(layer) <= budgets[l]:
                    continue
                res = frame.residuals[l].astype(float)
                raw = [math.sqrt(sum(float(x) * float(x) for x in res[s])) for s in range(M)]
                grid = [[raw[A + r * dims.patch_cols + c] for c in range(dims.patch_cols)]
                        for r in range(dims.patch_rows)]
                sm = smooth_direct(grid, cfg.smoothing_alpha, cfg.gaussian_kernel_size, cfg.gaussian_sigma)
                score_by_slot = raw[:A] + [v for row in sm for v in row]
                hist = [tok for tok in layer if tok["prot"] is None and tok["frame"] != t]
                new = [tok for tok in layer if tok["prot"] is None and tok["frame"] == t]
                d_hat = _minmax([tok["div"] for tok in hist])
                s_hat = _minmax([score_by_slot[tok["slot"]] for tok in new])
                beta = cfg.hybrid_beta
                for tok, x in zip(hist, d_hat):
                    tok["r"] = (1 - beta) * x
                for tok, x in zip(new, s_hat):
                    tok["r"] = beta * x
                room = budgets[l] - sum(tok["prot"] is not None for tok in layer)
                ranked = sorted(hist + new, key=lambda tok: (-tok["r"], -tok["frame"], tok["slot"]))
                keep = {id(tok) for tok in ranked[:room]}
                self.layers[l] = [tok for tok in layer if tok["prot"] is not None or id(tok) in keep]

        b_cam = max(cfg.total_budget // M, 1 + cfg.max_anchors)
        if len(self.camera) > b_cam:
            hist = [tok for tok in self.camera if tok["prot"] is None and tok["frame"] != t]
            d_hat = _minmax(_diversity([tok["key"] for tok in hist])) if hist else []
            for tok, x in zip(hist, d_hat):
                tok["r"] = x
            for tok in self.camera:
                if tok["frame"] == t and tok["prot"] is None:
                    tok["r"] = 2.0
            free = [tok for tok in self.camera if tok["prot"] is None]
            room = b_cam - (len(self.camera) - len(free))
            ranked = sorted(free, key=lambda tok: (-tok["r"], -tok["frame"]))
            keep = {id(tok) for tok in ranked[:room]}
            self.camera = [tok for tok in self.camera if tok["prot"] is not None or id(tok) in keep]
