"""Command-line driver: streaming runs, probing comparisons and trace replay.

Exit codes: 0 ok, 2 invalid config or infeasible budget, 3 I/O failure, 4 replay mismatch.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .compression import BudgetError
from .core import EngineConfig
from .engine import StreamingEngine
from .geometry import Intrinsics
from .sim import TOY_DIMS, ProbeKind, ProbeScorer, ToyModel, TrajectoryScene, generate_frame, oracle_full_cache_run
from .trace import TraceError, TraceWriter, config_from_dict, frame_from_record, read_trace

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_MISMATCH = 0, 2, 3, 4
TIMING_WINDOWS = ((0, 100), (100, 200), (200, 500), (500, 1500), (1500, 2000), (2000, None))


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    budget: int = 200_000
    alpha: float = 0.5
    beta: float = 0.5
    tau: float = 0.2
    eta: float = 0.05
    kmax: int = 3
    min_interval: int = 100
    kernel_size: int = 5
    sigma: float = 1.0
    element_size: int = 4
    frames: int = 500
    scene: str = "orbit"
    seed: int = 0
    strategy: list[str] = field(default_factory=lambda: ["ffn_residual"])
    seeds: int = 20
    anchors: bool = True
    out: str | None = None
    trace_out: str | None = None

    def engine_config(self) -> EngineConfig:
        if self.frames < 0:
            raise ValueError(f"invalid frames: {self.frames}")
        if self.scene not in ("orbit", "corridor", "randomwalk"):
            raise ValueError(f"invalid scene: {self.scene!r}")
        for s in self.strategy:
            ProbeKind(s)
        return EngineConfig(
            dims=TOY_DIMS,
            total_budget=self.budget,
            smoothing_alpha=self.alpha,
            hybrid_beta=self.beta,
            coverage_tau=self.tau,
            anchor_eta=self.eta,
            max_anchors=self.kmax,
            min_anchor_interval=self.min_interval,
            gaussian_kernel_size=self.kernel_size,
            gaussian_sigma=self.sigma,
            element_size=self.element_size,
            protect_anchors=self.anchors,
        )


def _strategies(text):
    return [s.strip() for s in text.split(",") if s.strip()]


def _add_engine_flags(p, budget_default, frames_default, strategy_default, anchors_default):
    g = p.add_argument_group("engine")
    g.add_argument("--budget", type=int, default=budget_default, help="total cached tokens over all layers (default: %(default)s)")
    g.add_argument("--alpha", type=float, default=0.5, help="smoothing blend weight (default: %(default)s)")
    g.add_argument("--beta", type=float, default=0.5, help="current-frame priority in hybrid scoring (default: %(default)s)")
    g.add_argument("--tau", type=float, default=0.2, help="coverage threshold for anchor registration (default: %(default)s)")
    g.add_argument("--eta", type=float, default=0.05, help="fraction of anchor patches protected (default: %(default)s)")
    g.add_argument("--kmax", type=int, default=3, help="live historical anchors (default: %(default)s)")
    g.add_argument("--min-interval", type=int, default=100, help="frames between anchor registrations (default: %(default)s)")
    g.add_argument("--kernel-size", type=int, default=5, help="Gaussian kernel size, odd (default: %(default)s)")
    g.add_argument("--sigma", type=float, default=1.0, help="Gaussian kernel sigma (default: %(default)s)")
    g.add_argument("--element-size", type=int, default=4, help="bytes per stored element (default: %(default)s)")
    g.add_argument("--no-anchors", dest="anchors", action="store_false", default=anchors_default,
                   help="disable anchor protection" + ("" if anchors_default else " (default for probe)"))
    g.add_argument("--anchors", dest="anchors", action="store_true", help="enable anchor protection")
    s = p.add_argument_group("simulation")
    s.add_argument("--frames", type=int, default=frames_default, help="frames to stream (default: %(default)s)")
    s.add_argument("--scene", choices=["orbit", "corridor", "randomwalk"], default="orbit", help="trajectory (default: %(default)s)")
    s.add_argument("--seed", type=int, default=0, help="scene and model seed (default: %(default)s)")
    s.add_argument("--strategy", type=_strategies, default=strategy_default,
                   help="comma-separated scorers: ffn_residual, attention_weight, qk_dot, random (default: %(default)s)")
    s.add_argument("--config", help="JSON file with any of these settings; flags given explicitly win")
    s.add_argument("--out", help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ovkv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="stream a synthetic scene through the engine")
    _add_engine_flags(run, 200_000, 500, ["ffn_residual"], True)
    run.add_argument("--trace-out", help="record inputs and metrics for replay")
    run.add_argument("--replay", help="replay a trace instead of running a scene")

    probe = sub.add_parser("probe", help="compare eviction scorers against the full cache")
    _add_engine_flags(probe, 1600, 80, ["ffn_residual", "random"], False)
    probe.add_argument("--seeds", type=int, default=20, help="seeds per strategy (default: %(default)s)")

    replay = sub.add_parser("replay", help="re-run a recorded trace and check its metrics")
    replay.add_argument("trace")
    return parser


def _resolve(parser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                overrides = json.load(fh)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read config: {exc}")
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, f"config is not valid JSON: {exc}")
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = set(overrides) - known
        if unknown:
            raise CliError(EXIT_CONFIG, f"unknown config fields: {sorted(unknown)}")
        given = _explicit_flags(argv)
        for key, value in overrides.items():
            if key == "strategy" and isinstance(value, str):
                value = _strategies(value)
            if key not in given:
                setattr(args, key, value)
    return args


def _explicit_flags(argv) -> set[str]:
    return {a[2:].split("=")[0].replace("-", "_") for a in argv if a.startswith("--")}


def _run_config(args) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    return RunConfig(**{k: v for k, v in vars(args).items() if k in known and v is not None})


def _window_means(step_ms) -> dict[str, float]:
    out = {}
    for lo, hi in TIMING_WINDOWS:
        chunk = step_ms[lo:hi]
        if chunk:
            out[f"{lo}-{'' if hi is None else hi - 1}"] = float(np.mean(chunk))
    return out


def _open(path):
    try:
        return open(path, "w", encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc}")


def cmd_run(rc: RunConfig, out=None) -> int:
    out = out or sys.stdout
    try:
        cfg = rc.engine_config()
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc))
    if len(rc.strategy) != 1:
        raise CliError(EXIT_CONFIG, "run takes exactly one strategy")
    scene = TrajectoryScene(kind=rc.scene, seed=rc.seed, num_frames=max(rc.frames, 1))
    model = ToyModel(seed=rc.seed)
    engine = StreamingEngine(cfg, scene.intrinsics, ProbeScorer(rc.strategy[0], seed=rc.seed))
    metrics_path = rc.out or "metrics.jsonl"
    metrics_fh = _open(metrics_path)
    trace = None
    if rc.trace_out:
        try:
            trace = TraceWriter(rc.trace_out, cfg, scene.intrinsics, rc.seed, scene=rc.scene, strategy=rc.strategy[0])
        except OSError as exc:
            metrics_fh.close()
            raise CliError(EXIT_IO, f"cannot write {rc.trace_out}: {exc}")
    registrations = violations = evicted = 0
    peak_bytes = peak_tokens = 0
    try:
        for t in range(rc.frames):
            frame = generate_frame(scene, t, model)
            try:
                m = engine.step(frame)
            except BudgetError as exc:
                raise CliError(EXIT_CONFIG, f"infeasible budget: {exc} (deficit {exc.deficit})")
            metrics_fh.write(json.dumps(m.to_record(), sort_keys=True) + "\n")
            if trace is not None:
                trace.write(frame, m)
            registrations += m.registered is not None
            evicted += m.evicted
            peak_bytes = max(peak_bytes, m.bytes_resident)
            peak_tokens = max(peak_tokens, m.peak_tokens)
            over = m.resident_tokens > cfg.total_budget or m.camera_size > m.camera_budget
            over |= bool(m.layer_budgets) and any(s > b for s, b in zip(m.layer_sizes, m.layer_budgets))
            violations += over
    finally:
        metrics_fh.close()
        if trace is not None:
            trace.close()
    assert violations == 0, f"{violations} steps exceeded the budget"
    summary = {
        "config": dataclasses.asdict(rc),
        "frames": rc.frames,
        "peak_bytes": peak_bytes,
        "peak_tokens": peak_tokens,
        "full_cache_bytes": engine.full_cache_bytes(),
        "evicted": evicted,
        "anchor_registrations": registrations,
        "budget_violations": violations,
        "mean_step_ms": _window_means([m.step_ms for m in engine.metrics_log]),
    }
    summary_path = _summary_path(metrics_path)
    with _open(summary_path) as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(summary, sort_keys=True), file=out)
    return EXIT_OK


def _summary_path(metrics_path: str) -> str:
    root = metrics_path[: -len(".jsonl")] if metrics_path.endswith(".jsonl") else metrics_path
    return root + ".summary.json"


def _probe_seed(args):
    rc, seed = args
    cfg = rc.engine_config()
    scene = TrajectoryScene(kind=rc.scene, seed=seed, num_frames=max(rc.frames, 1))
    runs = oracle_full_cache_run(scene, ToyModel(seed=seed), rc.frames, cfg, rc.strategy, seed=seed)
    return {
        name: (r.mean_proxy_error, float(np.mean(r.step_ms)) if r.step_ms else 0.0, r.peak_bytes,
               r.attention_allocations, r.budget_violations)
        for name, r in runs.items()
    }


def worker_count() -> int:
    try:
        cap = int(os.environ.get("OVKV_THREADS", "1"))
    except ValueError:
        cap = 1
    return max(1, min(cap, os.cpu_count() or 1))


def cmd_probe(rc: RunConfig, out=None) -> int:
    out = out or sys.stdout
    try:
        rc.engine_config()
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc))
    if len(set(rc.strategy)) < 2:
        raise CliError(EXIT_CONFIG, "probe needs at least two distinct strategies")
    if rc.seeds < 1:
        raise CliError(EXIT_CONFIG, f"invalid seeds: {rc.seeds}")
    jobs = [(rc, seed) for seed in range(rc.seed, rc.seed + rc.seeds)]
    workers = worker_count()
    try:
        if workers > 1:
            with concurrent.futures.ProcessPoolExecutor(workers) as pool:
                per_seed = list(pool.map(_probe_seed, jobs))
        else:
            per_seed = [_probe_seed(j) for j in jobs]
    except BudgetError as exc:
        raise CliError(EXIT_CONFIG, f"infeasible budget: {exc} (deficit {exc.deficit})")
    rows = []
    for name in dict.fromkeys(ProbeKind(s).value for s in rc.strategy):
        cols = np.array([res[name] for res in per_seed], dtype=float)
        rows.append({
            "strategy": name,
            "mean_proxy_error": float(cols[:, 0].mean()),
            "mean_step_ms": float(cols[:, 1].mean()),
            "peak_bytes": int(cols[:, 2].max()),
            "attention_allocations": int(cols[:, 3].sum()),
            "budget_violations": int(cols[:, 4].sum()),
            "seeds": len(per_seed),
        })
    table = {"frames": rc.frames, "budget": rc.budget, "rows": rows}
    with _open(rc.out or "probe.json") as fh:
        json.dump(table, fh, indent=2)
        fh.write("\n")
    print(f"{'strategy':<18}{'proxy_err':>12}{'step_ms':>10}{'peak_bytes':>12}{'attn_allocs':>13}", file=out)
    for r in rows:
        print(f"{r['strategy']:<18}{r['mean_proxy_error']:>12.5f}{r['mean_step_ms']:>10.3f}"
              f"{r['peak_bytes']:>12d}{r['attention_allocations']:>13d}", file=out)
    return EXIT_OK


def cmd_replay(path: str, out=None) -> int:
    out = out or sys.stdout
    try:
        header, records = read_trace(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read trace: {exc}")
    except TraceError as exc:
        raise CliError(EXIT_IO, f"cannot parse trace: {exc}")
    if header is None:
        print("replayed 0 steps", file=out)
        return EXIT_OK
    try:
        cfg = config_from_dict(header["config"])
        cam = Intrinsics(**header["intrinsics"])
        scorer = ProbeScorer(header.get("strategy", "ffn_residual"), seed=header.get("seed", 0))
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_IO, f"cannot parse trace header: {exc}")
    engine = StreamingEngine(cfg, cam, scorer)
    steps = 0
    try:
        for rec in records:
            frame = frame_from_record(rec)
            try:
                got = json.loads(json.dumps(engine.step(frame).to_record()))
            except (ValueError, BudgetError) as exc:
                print(f"divergence at step {frame.frame_index}: {exc}", file=out)
                return EXIT_MISMATCH
            want = rec.get("metrics")
            if got != want:
                fields = sorted(k for k in set(got) | set(want or {}) if got.get(k) != (want or {}).get(k))
                print(f"divergence at step {frame.frame_index}: fields {fields}", file=out)
                return EXIT_MISMATCH
            steps += 1
    except TraceError as exc:
        raise CliError(EXIT_IO, f"cannot parse trace: {exc}")
    print(f"replayed {steps} steps", file=out)
    return EXIT_OK


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = _resolve(parser, argv)
        if args.command == "replay":
            return cmd_replay(args.trace)
        if args.command == "run" and args.replay:
            return cmd_replay(args.replay)
        rc = _run_config(args)
        if args.command == "run":
            return cmd_run(rc)
        return cmd_probe(rc)
    except CliError as exc:
        print(f"ovkv: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
