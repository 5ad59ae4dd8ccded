"""Seeded experiment batteries over the community-graph toolbox.

Each battery takes an :class:`ExperimentConfig`, sweeps its (n, alpha)
ladder with per-replicate child seeds, and returns a :class:`Report` whose
rows are plain dicts in a fixed column order.  Reports export to
long-format CSV or JSON with floats written as their shortest round-trip
``repr``, so running the same config twice produces byte-identical files.

The config fixes community *proportions* and per-community degree
profiles; each ladder entry n apportions vertices to communities and each
target crossing fraction is realized by the nearest admissible even cross
count, with the realized value recorded next to the target.  Targets that
cannot be realized within tolerance become per-row errors, never crashes.

Experiments fan out per (n, alpha, replicate) and reduce in config order;
rows never share mutable state, so ``threads`` changes wall time only.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .chainkit import ChainError, cheeger as chain_cheeger, poincare, q2_lift, tmix as chain_tmix
from .graphgen import (
    GraphError,
    SpecError,
    derive_Q,
    gen_configuration_model,
    gen_two_community,
    single_community_spec,
    two_community_spec,
)
from .treesim import (
    TreeBatch,
    TreeError,
    detect_regenerations,
    estimate_entropy,
    estimate_speed,
    estimate_types_chain,
    walk_batch,
)
from ._rng import phase_rng, spawn_seeds
from .walklab import WalkError, mixing_profile, relaxation


class ConfigError(ValueError):
    """A config file or config value that cannot be run as given."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_CONFIG_DEFAULTS = {
    "name": "run",
    "communities": [{"share": 0.5, "degrees": 3}, {"share": 0.5, "degrees": 3}],
    "n_ladder": None,  # required
    "alpha_ladder": [0.1],
    "alpha_mode": "fixed",
    "alpha_rel_tol": 0.25,
    "eps": [0.25, 0.75],
    "replicates": 1,
    "seed": 0,
    "out_dir": "runs",
    "threads": 1,
    "horizon": 200_000,
    "tree_replicates": 64,
    "tree_horizon": 4000,
    "burn_in": 20,
    "guard": 200,
    "se_rel_tol": 0.10,
    "chain_regens": 2000,
    "chain_min_transitions": 50,
    "chain_max_rounds": 5,
}

# execution details that must not change any reported number
_HASH_EXEMPT = ("out_dir", "threads")


@dataclass
class ExperimentConfig:
    """Validated experiment description (see _CONFIG_DEFAULTS for keys).

    ``communities`` entries are ``{"share": float, "degrees": spec}`` where
    the degree spec is either a plain int (every vertex that degree) or a
    histogram ``{"3": w3, "4": w4, ...}`` of weights to apportion.  One
    community means a plain configuration model (no crossing ladder); two
    means the two-community model with the alpha ladder realized through
    the cross count.
    """

    name: str = "run"
    communities: list = field(default_factory=lambda: [{"share": 0.5, "degrees": 3},
                                                       {"share": 0.5, "degrees": 3}])
    n_ladder: list = field(default_factory=list)
    alpha_ladder: list = field(default_factory=lambda: [0.1])
    alpha_mode: str = "fixed"
    alpha_rel_tol: float = 0.25
    eps: list = field(default_factory=lambda: [0.25, 0.75])
    replicates: int = 1
    seed: int = 0
    out_dir: str = "runs"
    threads: int = 1
    horizon: int = 200_000
    tree_replicates: int = 64
    tree_horizon: int = 4000
    burn_in: int = 20
    guard: int = 200
    se_rel_tol: float = 0.10
    chain_regens: int = 2000
    chain_min_transitions: int = 50
    chain_max_rounds: int = 5

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not self.name:
            raise ConfigError("name must be a non-empty string")
        self.communities = [self._check_community(c, i) for i, c in enumerate(self.communities)]
        if len(self.communities) not in (1, 2):
            raise ConfigError(f"need 1 or 2 communities, got {len(self.communities)}")
        shares = [c["share"] for c in self.communities]
        if any(s <= 0 for s in shares):
            raise ConfigError("community shares must be positive")
        total = float(sum(shares))
        for c in self.communities:
            c["share"] = float(c["share"]) / total
        self.n_ladder = [int(n) for n in self.n_ladder]
        if not self.n_ladder:
            raise ConfigError("n_ladder must list at least one size")
        if any(n < 8 for n in self.n_ladder):
            raise ConfigError("n_ladder sizes must be at least 8")
        if any(b <= a for a, b in zip(self.n_ladder, self.n_ladder[1:])):
            raise ConfigError("n_ladder must be strictly increasing")
        self.alpha_ladder = [float(a) for a in self.alpha_ladder]
        if len(self.communities) == 2:
            if not self.alpha_ladder:
                raise ConfigError("alpha_ladder must list at least one value")
            if any(a <= 0 for a in self.alpha_ladder):
                raise ConfigError("alpha_ladder values must be positive")
        if self.alpha_mode not in ("fixed", "decaying"):
            raise ConfigError(f'alpha_mode must be "fixed" or "decaying", got {self.alpha_mode!r}')
        if not (0 < float(self.alpha_rel_tol) < 1):
            raise ConfigError("alpha_rel_tol must be in (0, 1)")
        self.eps = sorted(float(e) for e in self.eps)
        if not self.eps or self.eps[0] <= 0 or self.eps[-1] >= 1:
            raise ConfigError("eps values must lie in (0, 1)")
        if int(self.replicates) < 1:
            raise ConfigError("replicates must be at least 1")
        self.replicates = int(self.replicates)
        self.seed = int(self.seed)
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        self.threads = int(self.threads)
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        for key in ("horizon", "tree_replicates", "tree_horizon", "chain_regens",
                    "chain_min_transitions", "chain_max_rounds"):
            val = int(getattr(self, key))
            if val < 1:
                raise ConfigError(f"{key} must be at least 1")
            setattr(self, key, val)
        for key in ("burn_in", "guard"):
            val = int(getattr(self, key))
            if val < 0:
                raise ConfigError(f"{key} must be non-negative")
            setattr(self, key, val)
        if not (0 < float(self.se_rel_tol) < 1):
            raise ConfigError("se_rel_tol must be in (0, 1)")

    @staticmethod
    def _check_community(c, i: int) -> dict:
        if isinstance(c, int):
            c = {"degrees": c}
        if not isinstance(c, dict):
            raise ConfigError(f"community {i} must be a mapping or a degree int")
        extra = set(c) - {"share", "degrees"}
        if extra:
            raise ConfigError(f"community {i} has unknown keys {sorted(extra)}")
        if "degrees" not in c:
            raise ConfigError(f'community {i} is missing "degrees"')
        degrees = c["degrees"]
        if isinstance(degrees, int):
            if degrees < 3:
                raise ConfigError(f"community {i}: degrees must be at least 3")
        elif isinstance(degrees, dict):
            if not degrees:
                raise ConfigError(f"community {i}: empty degree histogram")
            clean = {}
            for d, w in degrees.items():
                d = int(d)
                w = float(w)
                if d < 3:
                    raise ConfigError(f"community {i}: degree {d} below the minimum of 3")
                if w < 0:
                    raise ConfigError(f"community {i}: negative weight for degree {d}")
                clean[d] = w
            if sum(clean.values()) <= 0:
                raise ConfigError(f"community {i}: degree weights sum to zero")
            degrees = clean
        else:
            raise ConfigError(f"community {i}: degrees must be an int or a histogram")
        return {"share": float(c.get("share", 1.0)), "degrees": degrees}

    @property
    def m(self) -> int:
        return len(self.communities)

    def canonical(self) -> dict:
        """Plain-JSON view of the config with hash-exempt keys dropped."""
        doc = {}
        for key in _CONFIG_DEFAULTS:
            if key in _HASH_EXEMPT:
                continue
            val = getattr(self, key)
            if key == "communities":
                val = [{"share": c["share"],
                        "degrees": (c["degrees"] if isinstance(c["degrees"], int)
                                    else {str(d): c["degrees"][d] for d in sorted(c["degrees"])})}
                       for c in val]
            doc[key] = val
        return doc

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(_CONFIG_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "n_ladder" not in doc:
            raise ConfigError('config is missing "n_ladder"')
        kwargs = {k: doc.get(k, v) for k, v in _CONFIG_DEFAULTS.items() if k != "n_ladder"}
        kwargs["n_ladder"] = doc["n_ladder"]
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from None
        return cls.from_dict(doc)


# ---------------------------------------------------------------------------
# ladder resolution
# ---------------------------------------------------------------------------


def _apportion(weights: list, total: int) -> list:
    """Integer counts proportional to weights summing to total (largest remainder)."""
    quotas = [total * w / sum(weights) for w in weights]
    counts = [int(q) for q in quotas]
    short = total - sum(counts)
    order = sorted(range(len(weights)), key=lambda i: (counts[i] - quotas[i], i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def _degree_list(profile, size: int) -> list:
    """Concrete per-vertex degrees for one community, even-sum adjusted.

    Histogram weights are apportioned by largest remainder; when the degree
    total comes out odd one smallest-degree vertex is bumped up by one so
    the half-edge count is matchable.
    """
    if size < 1:
        raise ConfigError("community size fell below 1; adjust shares or sizes")
    if isinstance(profile, int):
        degs = [profile] * size
    else:
        ds = sorted(profile)
        counts = _apportion([profile[d] for d in ds], size)
        degs = [d for d, c in zip(ds, counts) for _ in range(c)]
    if sum(degs) % 2 == 1:
        degs[degs.index(min(degs))] += 1
    return sorted(degs, reverse=True)


@dataclass
class Rung:
    """One resolved ladder point: concrete model plus realized crossing."""

    n: int
    alpha_target: float | None
    alpha: float | None
    p: int | None
    spec: object
    degree_lists: list


def _alpha_target(cfg: ExperimentConfig, a: float, n: int) -> float:
    return a / math.log(n) if cfg.alpha_mode == "decaying" else a


def resolve_rung(cfg: ExperimentConfig, n: int, alpha_value: float | None) -> Rung:
    """Concrete model for one (n, alpha) ladder point.

    Raises ConfigError when the target crossing fraction has no admissible
    even cross count within ``alpha_rel_tol`` relative tolerance.
    """
    shares = [c["share"] for c in cfg.communities]
    sizes = _apportion(shares, n)
    degree_lists = [_degree_list(c["degrees"], s) for c, s in zip(cfg.communities, sizes)]
    if cfg.m == 1:
        return Rung(n, None, None, None, single_community_spec(degree_lists[0]), degree_lists)
    target = _alpha_target(cfg, alpha_value, n)
    N1, N2 = (sum(ds) for ds in degree_lists)
    exact = target * N1 * N2 / (N1 + N2)
    p = max(2, 2 * round(exact / 2))
    if p > min(N1, N2):
        raise ConfigError(
            f"alpha target {target:.6g} needs cross count {p} > min(N1, N2) = {min(N1, N2)} at n = {n}")
    realized = p * (N1 + N2) / (N1 * N2)
    if abs(realized - target) > cfg.alpha_rel_tol * target:
        raise ConfigError(
            f"alpha target {target:.6g} is not realizable at n = {n}: nearest even cross "
            f"count {p} gives {realized:.6g} (relative deviation over {cfg.alpha_rel_tol:.0%})")
    return Rung(n, target, realized, p, two_community_spec(degree_lists[0], degree_lists[1], p), degree_lists)


def _model_string(rung: Rung) -> str:
    """Compact self-describing model tag for report rows."""
    hists = []
    for ds in rung.degree_lists:
        hist = {}
        for d in ds:
            hist[d] = hist.get(d, 0) + 1
        hists.append({str(d): hist[d] for d in sorted(hist)})
    doc = {"degrees": hists}
    if rung.p is not None:
        doc["p"] = rung.p
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _job_seed(cfg: ExperimentConfig, label: str) -> int:
    return int(spawn_seeds(cfg.seed, label, 1)[0])


def _alpha_cheeger(spec) -> float:
    """Exact bottleneck ratio of the community transition chain."""
    return float(chain_cheeger(derive_Q(spec))[0])


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class Report:
    """Long-format experiment output: fixed columns, one dict per row."""

    experiment: str
    config_hash: str
    seed: int
    columns: list
    rows: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for i, row in enumerate(self.rows):
            if set(row) != set(self.columns):
                raise ConfigError(f"row {i} keys do not match the declared columns")


def _clean(value):
    """Coerce numpy scalars to plain python so repr round-trips."""
    if value is None or isinstance(value, (bool, int, str)):
        return value
    if isinstance(value, float):
        return value
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def _row(columns: list, **values) -> dict:
    extra = set(values) - set(columns)
    if extra:
        raise ConfigError(f"row has unknown columns {sorted(extra)}")
    return {c: _clean(values.get(c)) for c in columns}


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _uncell(text: str):
    if text == "":
        return None
    if text == "True":
        return True
    if text == "False":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def report_to_csv(report: Report) -> str:
    buf = io.StringIO()
    buf.write(f"# experiment={report.experiment} config_hash={report.config_hash} "
              f"seed={report.seed}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(report.columns)
    for row in report.rows:
        writer.writerow([_cell(row[c]) for c in report.columns])
    return buf.getvalue()


def report_to_json(report: Report) -> str:
    doc = {"experiment": report.experiment, "config_hash": report.config_hash,
           "seed": report.seed, "columns": report.columns, "rows": report.rows,
           "meta": report.meta}
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def export_report(report: Report, fmt: str = "csv", out_dir: str = ".") -> str:
    """Write the report under out_dir; the filename carries the config hash."""
    if fmt not in ("csv", "json"):
        raise ConfigError(f'format must be "csv" or "json", got {fmt!r}')
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{report.experiment}-{report.config_hash}.{fmt}")
    text = report_to_csv(report) if fmt == "csv" else report_to_json(report)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def read_report(path: str) -> Report:
    """Parse a file written by export_report back into a Report."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        text = fh.read()
    if path.endswith(".json"):
        doc = json.loads(text)
        return Report(doc["experiment"], doc["config_hash"], int(doc["seed"]),
                      list(doc["columns"]), [dict(r) for r in doc["rows"]],
                      doc.get("meta", {}))
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ConfigError(f"{path} does not start with a report banner line")
    banner = dict(part.split("=", 1) for part in lines[0][2:].split(" "))
    rows_text = list(csv.reader(io.StringIO("\n".join(lines[1:]))))
    columns = rows_text[0]
    rows = [{c: _uncell(v) for c, v in zip(columns, vals)} for vals in rows_text[1:]]
    return Report(banner["experiment"], banner["config_hash"], int(banner["seed"]),
                  columns, rows)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

_ROW_ERRORS = (WalkError, TreeError, ChainError, GraphError, SpecError, ConfigError)


def _fanout(cfg: ExperimentConfig, jobs: list) -> list:
    """Run row-producing callables, reducing results in job order."""
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            chunks = list(ex.map(lambda j: j(), jobs))
    else:
        chunks = [j() for j in jobs]
    return [row for chunk in chunks for row in chunk]


def nbrw_entropy_rate(degrees) -> float:
    """Degree-mass-weighted branching entropy sum(d log(d-1)) / sum(d).

    This is the per-step entropy rate of the non-backtracking walk on the
    degree tree; every degree must be at least 2 for the walk to be defined.
    """
    d = np.asarray(degrees, dtype=float)
    if d.size == 0:
        raise ConfigError("empty degree list")
    if d.min() < 2:
        raise ConfigError("non-backtracking rate needs all degrees at least 2")
    return float((d * np.log(d - 1.0)).sum() / d.sum())


REGIME_PRODUCT_THRESHOLD = 5.0
REGIME_RATIO_THRESHOLD = 1.5


def classify_regime(mix_over_rel: float, cutoff_ratio: float,
                    product_threshold: float = REGIME_PRODUCT_THRESHOLD,
                    ratio_threshold: float = REGIME_RATIO_THRESHOLD) -> str:
    """Label a (t_mix/t_rel, t_mix(1/4)/t_mix(3/4)) pair.

    "cutoff-like" needs a large mixing-to-relaxation separation AND a
    quarter-to-three-quarter ratio near 1; "no-cutoff-like" needs the
    reverse on both axes; anything mixed is "indeterminate".  Thresholds
    default to the module constants; changing them never touches measured
    columns.  At desk scales the product axis moves slowly, so graphs from
    the cutoff regime often land "indeterminate" here while the measured
    columns already show the trend.
    """
    sharp = cutoff_ratio <= ratio_threshold
    separated = mix_over_rel >= product_threshold
    if sharp and separated:
        return "cutoff-like"
    if not sharp and not separated:
        return "no-cutoff-like"
    return "indeterminate"


def _tree_estimates(cfg: ExperimentConfig, spec, label: str) -> dict:
    """Speed, depth entropy, and their product from fresh limit trees.

    Walks are lazy; the returned ``rate`` is speed times entropy per lazy
    step, the denominator of the mixing-time prediction log n / rate.
    """
    nu0 = derive_Q(spec).pi
    tree_seed = _job_seed(cfg, f"{label}-trees")
    walk_seed = _job_seed(cfg, f"{label}-tree-walks")
    batch = TreeBatch(spec, nu0, spawn_seeds(tree_seed, "grow", cfg.tree_replicates))
    traces = walk_batch(batch, cfg.tree_horizon, True, walk_seed)
    records = [detect_regenerations(tr, "strict", guard=cfg.guard) for tr in traces]
    speed = estimate_speed(records, burn_in=cfg.burn_in)
    ent = estimate_entropy([(batch, r) for r in records], "regeneration",
                           nu=speed.nu, burn_in=cfg.burn_in)
    rate = float(ent.step_rate)
    rate_se = float(ent.step_rate_se)
    return {"tree_seed": tree_seed, "nu_hat": float(speed.nu), "nu_se": float(speed.se),
            "h_hat": float(ent.h), "h_se": float(ent.h_se), "rate": rate,
            "rate_se": rate_se,
            "rate_rel_se": rate_se / rate if rate > 0 else math.inf}


def _family_tag(profile: dict) -> str:
    how = profile["family"]
    if how.get("protocol") == "exact":
        return "exact"
    return f"{how.get('protocol', 'sampled')}:{how.get('starts', '?')}"


# ---------------------------------------------------------------------------
# experiment batteries
# ---------------------------------------------------------------------------

DICHOTOMY_COLUMNS = [
    "experiment", "config_hash", "seed", "graph_seed", "model", "start_family",
    "n", "alpha_target", "alpha", "alpha_cheeger", "p", "replicate", "kind",
    "eps", "tmix", "gamma", "gamma_star", "t_rel", "t_rel_star", "mix_over_rel",
    "cutoff_ratio", "window", "window_coef", "regime", "error",
]


def run_dichotomy(cfg: ExperimentConfig) -> Report:
    """Sharp-vs-flat mixing study across the (n, alpha) ladder.

    Per replicate and walk kind (lazy and simple): worst-family mixing times
    at every configured epsilon plus 1/4 and 3/4, the walk's own relaxation
    times, the quarter-to-three-quarter cutoff ratio, the mixing window and
    its coefficient against sqrt(log n / alpha), and the regime label from
    :func:`classify_regime`.  Unrealizable ladder points become one error
    row each and the run continues.
    """
    if cfg.m != 2:
        raise ConfigError("the dichotomy battery needs a two-community config")
    eps = sorted(set(cfg.eps) | {0.25, 0.75})
    cols = DICHOTOMY_COLUMNS

    def job(n: int, ai: int, a: float, rep: int):
        def run() -> list:
            base = dict(experiment="dichotomy", config_hash=cfg.config_hash,
                        seed=cfg.seed, n=n, alpha_target=_alpha_target(cfg, a, n),
                        replicate=rep)
            try:
                rung = resolve_rung(cfg, n, a)
            except ConfigError as e:
                return [_row(cols, **base, error=str(e))]
            gseed = _job_seed(cfg, f"dichotomy-graph n={n} a={ai} r={rep}")
            base.update(graph_seed=gseed, model=_model_string(rung), alpha=rung.alpha,
                        alpha_cheeger=_alpha_cheeger(rung.spec), p=rung.p)
            try:
                g = gen_two_community(rung.spec, gseed)
                rows = []
                for kind in ("lazy", "simple"):
                    rel = relaxation(g, kind)
                    prof = mixing_profile(g, kind, eps=eps, seed=gseed,
                                          horizon_cap=cfg.horizon)
                    tmix = prof["tmix"]
                    ratio = tmix[0.25] / max(tmix[0.75], 1)
                    window = tmix[0.25] - tmix[0.75]
                    scale = math.sqrt(math.log(n) / rung.alpha)
                    over = tmix[0.25] / rel.t_rel_star if rel.t_rel_star > 0 else math.inf
                    regime = classify_regime(over, ratio)
                    for e in eps:
                        rows.append(_row(cols, **base, start_family=_family_tag(prof),
                                         kind=kind, eps=e, tmix=tmix[e],
                                         gamma=rel.gamma, gamma_star=rel.gamma_star,
                                         t_rel=rel.t_rel, t_rel_star=rel.t_rel_star,
                                         mix_over_rel=over, cutoff_ratio=ratio,
                                         window=window, window_coef=window / scale,
                                         regime=regime))
                return rows
            except _ROW_ERRORS as e:
                return [_row(cols, **base, error=str(e))]
        return run

    jobs = [job(n, ai, a, rep) for n in cfg.n_ladder
            for ai, a in enumerate(cfg.alpha_ladder) for rep in range(cfg.replicates)]
    rows = _fanout(cfg, jobs)
    return Report("dichotomy", cfg.config_hash, cfg.seed, cols, rows,
                  meta={"name": cfg.name, "eps": eps})


ENTROPIC_COLUMNS = [
    "experiment", "config_hash", "seed", "graph_seed", "tree_seed", "model",
    "start_family", "n", "alpha_target", "alpha", "p", "replicate", "tmix_lazy",
    "nu_hat", "nu_se", "h_hat", "h_se", "rate", "rate_se", "rate_rel_se",
    "predicted", "ratio", "b_hat", "flagged", "error",
]


def run_entropic_prediction(cfg: ExperimentConfig) -> Report:
    """Measured lazy mixing times against the speed-entropy prediction.

    Per replicate: the lazy walk's worst-family t_mix(1/4) on a sampled
    graph, tree-side speed and entropy estimates with standard errors, the
    prediction log n / (speed * entropy), their ratio, and the fitted
    second-order offset b_hat = (measured - predicted) / sqrt(log n / alpha).
    Rows are flagged when the relative standard error of the rate exceeds
    ``se_rel_tol`` or when the tree estimates are unavailable.
    """
    eps = sorted(set(cfg.eps) | {0.25})
    cols = ENTROPIC_COLUMNS

    def job(n: int, ai: int, a: float | None, rep: int):
        def run() -> list:
            base = dict(experiment="entropic", config_hash=cfg.config_hash,
                        seed=cfg.seed, n=n, replicate=rep,
                        alpha_target=None if a is None else _alpha_target(cfg, a, n))
            try:
                rung = resolve_rung(cfg, n, a)
            except ConfigError as e:
                return [_row(cols, **base, error=str(e), flagged=True)]
            gseed = _job_seed(cfg, f"entropic-graph n={n} a={ai} r={rep}")
            base.update(graph_seed=gseed, model=_model_string(rung),
                        alpha=rung.alpha, p=rung.p)
            try:
                g = (gen_two_community(rung.spec, gseed) if cfg.m == 2
                     else gen_configuration_model(rung.degree_lists[0], gseed))
                prof = mixing_profile(g, "lazy", eps=eps, seed=gseed,
                                      horizon_cap=cfg.horizon)
                measured = prof["tmix"][0.25]
                base.update(start_family=_family_tag(prof), tmix_lazy=measured)
            except _ROW_ERRORS as e:
                return [_row(cols, **base, error=str(e), flagged=True)]
            try:
                est = _tree_estimates(cfg, rung.spec, f"entropic n={n} a={ai} r={rep}")
            except _ROW_ERRORS as e:
                return [_row(cols, **base, error=str(e), flagged=True)]
            predicted = math.log(n) / est["rate"] if est["rate"] > 0 else math.inf
            row = dict(base, **est, predicted=predicted,
                       ratio=measured / predicted if predicted > 0 else math.inf,
                       flagged=est["rate_rel_se"] > cfg.se_rel_tol)
            if rung.alpha is not None:
                row["b_hat"] = (measured - predicted) / math.sqrt(math.log(n) / rung.alpha)
            return [_row(cols, **row)]
        return run

    alphas = list(enumerate(cfg.alpha_ladder)) if cfg.m == 2 else [(0, None)]
    jobs = [job(n, ai, a, rep) for n in cfg.n_ladder for ai, a in alphas
            for rep in range(cfg.replicates)]
    rows = _fanout(cfg, jobs)
    return Report("entropic", cfg.config_hash, cfg.seed, cols, rows,
                  meta={"name": cfg.name})


TREL_COLUMNS = [
    "experiment", "config_hash", "seed", "graph_seed", "model", "n",
    "alpha_target", "alpha", "alpha_cheeger", "p", "replicate", "gamma",
    "gamma_star", "t_rel", "t_rel_star", "trel_alpha", "trel_star_alpha",
    "phi_community", "trel_phi_product", "flagged", "error",
]


def run_trel_scaling(cfg: ExperimentConfig) -> Report:
    """Relaxation times of the simple walk against the crossing fraction.

    Per ladder point: the simple walk's spectral gap and absolute gap, both
    relaxation times (so t_rel_star >= t_rel holds row by row), the products
    t_rel * alpha and t_rel_star * alpha, and the community-cut bottleneck
    ratio with the product t_rel * phi.  Single-community configs still get
    relaxation times but the alpha products are flagged not-applicable.
    The meta block carries max/min stability statistics of the products.
    """
    if cfg.m == 2:
        lo, hi = min(cfg.alpha_ladder), max(cfg.alpha_ladder)
        if hi / lo < 4:
            raise ConfigError(
                f"trel scaling needs an alpha ladder spanning a factor of 4, got {hi / lo:.3g}")
    cols = TREL_COLUMNS

    def job(n: int, ai: int, a: float | None, rep: int):
        def run() -> list:
            base = dict(experiment="trel", config_hash=cfg.config_hash,
                        seed=cfg.seed, n=n, replicate=rep,
                        alpha_target=None if a is None else _alpha_target(cfg, a, n))
            try:
                rung = resolve_rung(cfg, n, a)
            except ConfigError as e:
                return [_row(cols, **base, error=str(e), flagged=True)]
            gseed = _job_seed(cfg, f"trel-graph n={n} a={ai} r={rep}")
            base.update(graph_seed=gseed, model=_model_string(rung),
                        alpha=rung.alpha, p=rung.p)
            try:
                if cfg.m == 2:
                    g = gen_two_community(rung.spec, gseed)
                else:
                    g = gen_configuration_model(rung.degree_lists[0], gseed)
                rel = relaxation(g, "simple")
                row = dict(base, gamma=rel.gamma, gamma_star=rel.gamma_star,
                           t_rel=rel.t_rel, t_rel_star=rel.t_rel_star)
                if cfg.m == 2:
                    N1, N2 = (sum(ds) for ds in rung.degree_lists)
                    phi = rung.p / min(N1, N2)
                    row.update(alpha_cheeger=_alpha_cheeger(rung.spec),
                               trel_alpha=rel.t_rel * rung.alpha,
                               trel_star_alpha=rel.t_rel_star * rung.alpha,
                               phi_community=phi, trel_phi_product=rel.t_rel * phi,
                               flagged=False)
                else:
                    row["flagged"] = True
                    row["error"] = "single community: no crossing fraction, products not applicable"
                return [_row(cols, **row)]
            except _ROW_ERRORS as e:
                return [_row(cols, **base, error=str(e), flagged=True)]
        return run

    alphas = list(enumerate(cfg.alpha_ladder)) if cfg.m == 2 else [(0, None)]
    jobs = [job(n, ai, a, rep) for n in cfg.n_ladder for ai, a in alphas
            for rep in range(cfg.replicates)]
    rows = _fanout(cfg, jobs)
    meta = {"name": cfg.name}
    for key in ("trel_alpha", "trel_star_alpha"):
        vals = [r[key] for r in rows if r[key] is not None]
        if vals:
            meta[f"{key}_spread"] = max(vals) / min(vals)
    return Report("trel", cfg.config_hash, cfg.seed, cols, rows, meta=meta)


NBRW_COLUMNS = [
    "experiment", "config_hash", "seed", "graph_seed", "tree_seed", "model",
    "start_family", "n", "alpha_target", "alpha", "p", "replicate",
    "tmix_simple", "tmix_nbrw", "srw_gt_nbrw", "h_y", "pred_nbrw", "ratio_nbrw",
    "rate", "pred_simple", "ratio_simple", "flagged", "error",
]


def run_nbrw_comparison(cfg: ExperimentConfig) -> Report:
    """Simple against non-backtracking mixing, measured and predicted.

    Per replicate: worst-family t_mix(1/4) for both walks on the same
    sampled graph, the branching entropy rate h_y of the realized degrees,
    the non-backtracking prediction log n / h_y, and the simple-walk
    prediction log n / (2 * speed * entropy) from tree estimates.  The meta
    block counts how often the simple walk was strictly slower.
    """
    if cfg.m != 2:
        raise ConfigError("the comparison battery needs a two-community config")
    eps = sorted(set(cfg.eps) | {0.25})
    cols = NBRW_COLUMNS

    def job(n: int, ai: int, a: float, rep: int):
        def run() -> list:
            base = dict(experiment="nbrw", config_hash=cfg.config_hash,
                        seed=cfg.seed, n=n, alpha_target=_alpha_target(cfg, a, n),
                        replicate=rep)
            try:
                rung = resolve_rung(cfg, n, a)
            except ConfigError as e:
                return [_row(cols, **base, error=str(e), flagged=True)]
            gseed = _job_seed(cfg, f"nbrw-graph n={n} a={ai} r={rep}")
            base.update(graph_seed=gseed, model=_model_string(rung),
                        alpha=rung.alpha, p=rung.p)
            try:
                g = gen_two_community(rung.spec, gseed)
                simple = mixing_profile(g, "simple", eps=eps, seed=gseed,
                                        horizon_cap=cfg.horizon)
                nbrw = mixing_profile(g, "nbrw", eps=eps, seed=gseed,
                                      horizon_cap=cfg.horizon)
                hy = nbrw_entropy_rate(g.degrees)
                ts, tn = simple["tmix"][0.25], nbrw["tmix"][0.25]
                base.update(start_family=_family_tag(simple), tmix_simple=ts,
                            tmix_nbrw=tn, srw_gt_nbrw=ts > tn, h_y=hy,
                            pred_nbrw=math.log(n) / hy,
                            ratio_nbrw=tn / (math.log(n) / hy))
            except _ROW_ERRORS as e:
                return [_row(cols, **base, error=str(e), flagged=True)]
            try:
                est = _tree_estimates(cfg, rung.spec, f"nbrw n={n} a={ai} r={rep}")
            except _ROW_ERRORS as e:
                return [_row(cols, **base, flagged=True, error=str(e))]
            pred_simple = math.log(n) / (2.0 * est["rate"]) if est["rate"] > 0 else math.inf
            return [_row(cols, **base, tree_seed=est["tree_seed"], rate=est["rate"],
                         pred_simple=pred_simple,
                         ratio_simple=base["tmix_simple"] / pred_simple,
                         flagged=est["rate_rel_se"] > cfg.se_rel_tol)]
        return run

    jobs = [job(n, ai, a, rep) for n in cfg.n_ladder
            for ai, a in enumerate(cfg.alpha_ladder) for rep in range(cfg.replicates)]
    rows = _fanout(cfg, jobs)
    wins = sum(1 for r in rows if r["srw_gt_nbrw"] is True)
    comparisons = sum(1 for r in rows if r["srw_gt_nbrw"] is not None)
    return Report("nbrw", cfg.config_hash, cfg.seed, cols, rows,
                  meta={"name": cfg.name, "srw_wins": wins, "comparisons": comparisons})


CHAIN_COLUMNS = [
    "experiment", "config_hash", "seed", "tree_seed", "model", "n",
    "alpha_target", "alpha", "alpha_cheeger", "p", "replicate",
    "regens_strict", "regens_relaxed", "sigma_states", "w_states",
    "tmix_sigma", "phi_star_q", "tmix_phi_product", "pi_ratio_min",
    "pi_ratio_max", "w_supported_all_positive", "gamma_sigma", "gamma_w",
    "gamma_q2", "gamma_sigma_over_w", "gamma_w_over_q2", "flagged", "error",
]


def run_chain_properties(cfg: ExperimentConfig) -> Report:
    """Empirical regeneration-type chains against the community chain.

    Per ladder point: strict-variant records give the diagonal types chain
    (its exact mixing time times the community chain's bottleneck ratio),
    relaxed-variant records give the full edge-types chain whose occupation
    is compared against the pair-chain law entrywise, and the Poincare
    constants of both empirical chains and the pair chain are recorded with
    their ratios.  Tree batches are doubled until the strict regeneration
    count reaches ``chain_regens`` or ``chain_max_rounds`` rounds pass; a
    shortfall flags the row.  Single-community configs have one-state
    chains everywhere, so the report is empty but valid.
    """
    cols = CHAIN_COLUMNS
    if cfg.m == 1:
        return Report("chain", cfg.config_hash, cfg.seed, cols, [],
                      meta={"name": cfg.name,
                            "note": "single community: one-state chains, nothing to compare"})

    def job(n: int, ai: int, a: float, rep: int):
        def run() -> list:
            base = dict(experiment="chain", config_hash=cfg.config_hash,
                        seed=cfg.seed, n=n, alpha_target=_alpha_target(cfg, a, n),
                        replicate=rep)
            try:
                rung = resolve_rung(cfg, n, a)
            except ConfigError as e:
                return [_row(cols, **base, error=str(e), flagged=True)]
            base.update(model=_model_string(rung), alpha=rung.alpha, p=rung.p)
            try:
                Q = derive_Q(rung.spec)
                phi_star = float(chain_cheeger(Q)[0])
                Q2 = q2_lift(Q)
                base.update(alpha_cheeger=phi_star, phi_star_q=phi_star)
                nu0 = Q.pi
                tree_seed = _job_seed(cfg, f"chain-trees n={n} a={ai} r={rep}")
                base["tree_seed"] = tree_seed
                strict, relaxed = [], []
                total = 0
                for rnd in range(cfg.chain_max_rounds):
                    R = cfg.tree_replicates * (2 ** rnd)
                    batch = TreeBatch(rung.spec, nu0,
                                      spawn_seeds(tree_seed, f"grow-{rnd}", R))
                    traces = walk_batch(batch, cfg.tree_horizon, False,
                                        _job_seed(cfg, f"chain-walks n={n} a={ai} r={rep} round={rnd}"))
                    strict += [detect_regenerations(t, "strict", guard=cfg.guard)
                               for t in traces]
                    relaxed += [detect_regenerations(t, "relaxed", guard=cfg.guard)
                                for t in traces]
                    total = sum(len(r) for r in strict)
                    if total >= cfg.chain_regens:
                        break
                sigma = estimate_types_chain(strict, "strict",
                                             min_transitions=cfg.chain_min_transitions,
                                             burn_in=cfg.burn_in)
                w = estimate_types_chain(relaxed, "relaxed",
                                         min_transitions=cfg.chain_min_transitions,
                                         burn_in=cfg.burn_in)
                base.update(regens_strict=total,
                            regens_relaxed=sum(len(r) for r in relaxed),
                            sigma_states=len(sigma.states), w_states=len(w.states))
                problems = []
                if total < cfg.chain_regens:
                    problems.append(f"only {total} strict regenerations "
                                    f"(target {cfg.chain_regens})")
                row = dict(base)
                if sigma.chain is not None:
                    ts = chain_tmix(sigma.chain, 0.25)
                    if ts is None:
                        problems.append("diagonal types chain did not mix (plateau)")
                    else:
                        row.update(tmix_sigma=int(ts), tmix_phi_product=ts * phi_star)
                    row["gamma_sigma"] = poincare(sigma.chain)
                else:
                    problems.append(f"diagonal types rows below the transition floor: "
                                    f"{sigma.missing_rows}")
                widx = {s: k for k, s in enumerate(w.states)}
                ratios = []
                all_pos = True
                for pair, mass in zip(Q2.labels, Q2.pi):
                    occ = float(w.occupation[widx[pair]]) if pair in widx else 0.0
                    if occ == 0.0:
                        all_pos = False
                    ratios.append(occ / float(mass))
                row.update(pi_ratio_min=min(ratios), pi_ratio_max=max(ratios),
                           w_supported_all_positive=all_pos)
                gq2 = poincare(Q2)
                row["gamma_q2"] = gq2
                if w.chain is not None:
                    gw = poincare(w.chain)
                    row["gamma_w"] = gw
                    row["gamma_w_over_q2"] = gw / gq2
                    if row.get("gamma_sigma") is not None:
                        row["gamma_sigma_over_w"] = row["gamma_sigma"] / gw
                else:
                    problems.append(f"edge types rows below the transition floor: "
                                    f"{w.missing_rows}")
                row["flagged"] = bool(problems)
                if problems:
                    row["error"] = "; ".join(problems)
                return [_row(cols, **row)]
            except _ROW_ERRORS as e:
                return [_row(cols, **base, error=str(e), flagged=True)]
        return run

    jobs = [job(n, ai, a, rep) for n in cfg.n_ladder
            for ai, a in enumerate(cfg.alpha_ladder) for rep in range(cfg.replicates)]
    rows = _fanout(cfg, jobs)
    return Report("chain", cfg.config_hash, cfg.seed, cols, rows,
                  meta={"name": cfg.name})


EXPERIMENTS = {
    "dichotomy": run_dichotomy,
    "entropic": run_entropic_prediction,
    "trel": run_trel_scaling,
    "nbrw": run_nbrw_comparison,
    "chain": run_chain_properties,
}
