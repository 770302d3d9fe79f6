"""Episode suites: loading, ablation presets across seeds, CSV/JSON output."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import DEFAULT, Config
from ..feature_fields import persist, restore, save
from ..world_sim import generate_scene, load_scene
from ..world_sim.scene import SceneSpec
from .episode import PRESETS, EpisodeResult, EpisodeSpec, run_episode
from .fixtures import SUITES, fixture_scene

log = logging.getLogger(__name__)

METRICS = ("ne", "sr", "osr", "spl")


class SuiteError(ValueError):
    pass


@dataclass
class Suite:
    name: str
    scenes: dict[str, SceneSpec]
    specs: list[EpisodeSpec]


@dataclass
class SuiteResult:
    preset: str
    seeds: tuple[int, ...]
    episodes: list[EpisodeResult] = field(default_factory=list)

    def summary(self) -> dict:
        out = {"preset": self.preset, "episodes": len(self.episodes), "seeds": list(self.seeds)}
        for m in METRICS:
            vals = [getattr(r, m) for r in self.episodes]
            out[m] = float(np.mean(vals)) if vals else float("nan")
        return out


def _scene_from(entry, base: Path | None, cfg: Config) -> SceneSpec:
    if not isinstance(entry, dict):
        raise SuiteError(f"scene entry must be an object, got {entry!r}")
    if "template" in entry:
        return generate_scene(entry["template"], int(entry.get("seed", 0)))
    if "fixture" in entry:
        return fixture_scene(entry["fixture"], cfg.sim)
    if "path" in entry:
        p = Path(entry["path"])
        if not p.is_absolute() and base is not None:
            p = base / p
        return load_scene(p.read_text(), cfg.sim)
    raise SuiteError(f"scene entry needs 'template', 'fixture' or 'path': {entry!r}")


def parse_suite(doc: dict, base: Path | None = None, cfg: Config = DEFAULT,
                scene_override: SceneSpec | None = None) -> Suite:
    """Build a :class:`Suite` from a decoded suite document."""
    if not isinstance(doc, dict) or "episodes" not in doc:
        raise SuiteError("suite document must be an object with an 'episodes' list")
    h = cfg.harness
    scenes: dict[str, SceneSpec] = {}
    if scene_override is None:
        for sid, entry in doc.get("scenes", {}).items():
            scenes[sid] = _scene_from(entry, base, cfg)
    specs = []
    for i, e in enumerate(doc["episodes"]):
        try:
            sid = e["scene"]
            if scene_override is not None:
                scenes.setdefault(sid, scene_override)
            if sid not in scenes:
                raise SuiteError(f"episode {i} references unknown scene {sid!r}")
            start = tuple(float(v) for v in e["start"])
            if len(start) == 2:
                start = start + (0.0,)
            spec = EpisodeSpec(str(e.get("id", f"ep{i}")), sid, start, tuple(float(v) for v in e["goal"]),
                               e["goal_class"], float(e.get("success_radius", h.success_radius)),
                               int(e.get("max_steps", h.max_steps)))
        except (KeyError, TypeError, ValueError) as err:
            if isinstance(err, SuiteError):
                raise
            raise SuiteError(f"malformed episode {i}: {err!r}") from None
        spec.validate(scenes[sid])
        specs.append(spec)
    if not specs:
        raise SuiteError("suite has no episodes")
    return Suite(str(doc.get("name", "suite")), scenes, specs)


def bundled_suite_path(name: str) -> Path:
    return Path(__file__).resolve().parent.parent / "data" / f"suite_{name}.json"


def write_bundled_suites(cfg: Config = DEFAULT) -> list[Path]:
    """Regenerate the bundled suite files from their generators."""
    paths = []
    for name, make in SUITES.items():
        path = bundled_suite_path(name)
        path.write_text(json.dumps(make(cfg=cfg), indent=1) + "\n")
        paths.append(path)
    return paths


def load_suite(source, cfg: Config = DEFAULT, scene_override: SceneSpec | None = None) -> Suite:
    """Load a suite by bundled name (``main``, ``behind_agent``,
    ``door_stairs``, ``clutter``) or from a JSON file path."""
    path = bundled_suite_path(source) if isinstance(source, str) and source in SUITES else Path(source)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SuiteError(f"{path}: line {e.lineno}: {e.msg}") from None
    return parse_suite(doc, path.parent, cfg, scene_override)


def _run_group(args):
    """Episodes of one (scene group, seed) in order; with memory the feature
    cloud is persisted and restored between consecutive episodes."""
    specs, scenes, preset, seed, policy, cfg, dump, cloud_dir = args
    out = []
    blob = None
    for spec in specs:
        scene = scenes[spec.scene_id]
        cloud = restore(blob, cfg.fields, cfg.sim) if blob is not None else None
        r = run_episode(spec, scene, policy, seed, cfg, cloud=cloud, preset=preset, **dump)
        if spec.use_memory and r.cloud is not None:
            blob = persist(r.cloud)
        if cloud_dir is not None and r.cloud is not None:
            save(Path(cloud_dir) / f"{preset}_{spec.episode_id}_seed{seed}.cloud", r.cloud)
        r.cloud = None
        out.append(r)
    return out


def run_suite(suite: Suite, preset: str = "full", seeds=(0,), policy=None, cfg: Config = DEFAULT,
              jobs: int = 1, dump_dir=None, dump_maps: bool = False, dump_panoramas: bool = False,
              save_clouds: bool = False) -> SuiteResult:
    """Run every spec under ``preset`` for each seed; returns per-episode
    results ordered by (seed, declared episode order). With ``save_clouds``
    the final feature cloud of each episode goes to ``dump_dir/clouds``."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    policy = policy or cfg.harness.policy
    specs = [s.with_preset(preset) for s in suite.specs]
    memory = PRESETS[preset]["use_memory"]
    dump = {"dump_dir": dump_dir, "dump_maps": dump_maps, "dump_panoramas": dump_panoramas}
    cloud_dir = None
    if save_clouds and dump_dir is not None:
        cloud_dir = Path(dump_dir) / "clouds"
        cloud_dir.mkdir(parents=True, exist_ok=True)
    tasks = []
    for seed in seeds:
        if memory:
            # scene groups keep declared order; the cloud is carried within a group
            order: dict[str, list[EpisodeSpec]] = {}
            for s in specs:
                order.setdefault(s.scene_id, []).append(s)
            groups = list(order.values())
        else:
            groups = [[s] for s in specs]
        tasks += [(g, suite.scenes, preset, int(seed), policy, cfg, dump, cloud_dir) for g in groups]
    if jobs > 1 and not callable(policy):
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_group, tasks))
    else:
        chunks = [_run_group(t) for t in tasks]
    rank = {s.episode_id: i for i, s in enumerate(specs)}
    results = sorted((r for c in chunks for r in c), key=lambda r: (seeds.index(r.seed), rank[r.episode_id]))
    return SuiteResult(preset, tuple(int(s) for s in seeds), results)


def write_outputs(result: SuiteResult, out_dir) -> dict:
    """Per-episode JSON logs, an episode CSV and a JSON summary; returns the summary."""
    out = Path(out_dir)
    (out / "episodes").mkdir(parents=True, exist_ok=True)
    for r in result.episodes:
        path = out / "episodes" / f"{result.preset}_{r.episode_id}_seed{r.seed}.json"
        path.write_text(json.dumps(r.as_dict(), indent=1) + "\n")
    with open(out / f"{result.preset}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode_id", "scene_id", "preset", "seed", "steps", "stopped", "path_length",
                    "shortest_path", *METRICS])
        for r in result.episodes:
            w.writerow([r.episode_id, r.scene_id, result.preset, r.seed, r.steps, int(r.stopped),
                        f"{r.path_length:.6f}", f"{r.shortest_path:.6f}", *(f"{getattr(r, m):.6f}" for m in METRICS)])
    summary = result.summary()
    (out / f"{result.preset}_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    return summary
