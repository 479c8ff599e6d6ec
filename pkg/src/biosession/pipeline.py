"""End-to-end batch pipeline: ingest, preprocess, features, analyses, clustering.

Each stage reads and writes plain files in an output *bundle* directory so
the CLI subcommands can be chained or run one at a time.  All tabular
output goes through :func:`fmt` (6 significant digits) and rows are sorted
by stable keys, which makes bundles byte-identical across runs with the
same configuration, corpus and seed whatever the number of workers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import EmbeddingConfig, cluster_profile, cluster_sessions, encode_subject_ids
from .errors import BiosessionError, IncompleteBundle, NotConverged
from .features import FEATURE_NAMES, session_features
from .preprocess import PreprocessConfig, run_preprocess
from .session import (BEHAVIOR_RATE_KEYS, CLINICAL_FIELDS, LIKERT_FEATURES, Session,
                      behavior_rates, load_session, rate_column, serialize_session,
                      validate_session)
from .stats import (diagnostics, fit_glm, friedman, point_biserial, qq_pairs,
                    remove_outliers, spearman, vif_filter, wilcoxon_signed_rank)

log = logging.getLogger(__name__)

RATE_COLUMNS = tuple(rate_column(f, c) for f, c in BEHAVIOR_RATE_KEYS)
BEHAVIOR_COLUMNS = RATE_COLUMNS + LIKERT_FEATURES
SPONTANEOUS_RATES = tuple(rate_column(f, "Spontaneous") for f in
                          ("SO_Peers", "SR_Peers", "SO_Therapist", "SR_Therapist"))
TEST_COLUMNS = ("analysis_id", "feature", "group_a", "group_b", "statistic_name", "statistic",
                "p", "n", "method", "mean_a", "mean_b")
REQUIRED_FOR_REPORT = ("manifest.json", "features.csv", "tests.csv", "glm.json")


class StageError(BiosessionError):
    """A pipeline stage could not run on its inputs."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnalysisPlan:
    age_correlations: bool = True
    sex_correlations: bool = True
    session_friedman: bool = True
    scenario_friedman: bool = True
    glm: bool = True
    glm_outcomes: tuple = SPONTANEOUS_RATES + LIKERT_FEATURES
    glm_family: str = "gamma"
    remove_outliers: bool = True

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if "glm_outcomes" in d:
            d["glm_outcomes"] = tuple(d["glm_outcomes"])
        _check_keys(cls, d, "analysis")
        return cls(**d)


@dataclass(frozen=True)
class ClusterConfig:
    embedding: EmbeddingConfig = EmbeddingConfig()
    k_min: int = 2
    k_max: int = 8
    restarts: int = 10
    variance_percentile: float = 50.0
    include_subject_id: bool = True
    feature_space_scores: bool = False

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if "embedding" in d:
            d["embedding"] = EmbeddingConfig.from_dict(d["embedding"])
        _check_keys(cls, d, "clustering")
        return cls(**d)

    def to_dict(self):
        out = asdict(self)
        out["embedding"] = self.embedding.to_dict()
        return out


@dataclass(frozen=True)
class PipelineConfig:
    """Run configuration.  ``seed`` is the master seed: it replaces the random
    forest seed and the embedding/k-means seed of the nested configs."""

    input: str | None = None
    output: str | None = None
    preprocess: PreprocessConfig = PreprocessConfig()
    segment: str = "both"  # "session", "scenario" or "both"
    feature_space: str = "physical"  # "physical" or "normalized"
    analysis: AnalysisPlan = AnalysisPlan()
    clustering: ClusterConfig = ClusterConfig()
    seed: int = 0
    alpha: float = 0.05
    jobs: int = 1
    max_failure_fraction: float = 0.2

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.segment not in ("session", "scenario", "both"):
            raise ValueError("segment must be 'session', 'scenario' or 'both'")
        if self.feature_space not in ("physical", "normalized"):
            raise ValueError("feature_space must be 'physical' or 'normalized'")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if not 2 <= self.clustering.k_min <= self.clustering.k_max:
            raise ValueError("need 2 <= k_min <= k_max")

    @classmethod
    def from_dict(cls, d: dict | None) -> "PipelineConfig":
        d = dict(d or {})
        if "preprocess" in d:
            d["preprocess"] = PreprocessConfig.from_dict(d["preprocess"])
        if "analysis" in d:
            d["analysis"] = AnalysisPlan.from_dict(d["analysis"])
        if "clustering" in d:
            d["clustering"] = ClusterConfig.from_dict(d["clustering"])
        _check_keys(cls, d, "pipeline")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return {
            "input": self.input,
            "output": self.output,
            "preprocess": self.preprocess.to_dict(),
            "segment": self.segment,
            "feature_space": self.feature_space,
            "analysis": {**asdict(self.analysis), "glm_outcomes": list(self.analysis.glm_outcomes)},
            "clustering": self.clustering.to_dict(),
            "seed": self.seed,
            "alpha": self.alpha,
            "jobs": self.jobs,
            "max_failure_fraction": self.max_failure_fraction,
        }

    def effective(self) -> "PipelineConfig":
        """Copy with the master seed pushed into the nested configs."""
        emb = replace(self.clustering.embedding, seed=self.seed)
        return replace(self,
                       preprocess=replace(self.preprocess, rf_seed=self.seed),
                       clustering=replace(self.clustering, embedding=emb))

    def config_hash(self) -> str:
        """SHA-256 of the settings that influence results (paths and job count excluded)."""
        d = self.effective().to_dict()
        for k in ("input", "output", "jobs"):
            d.pop(k)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _check_keys(cls, d, what):
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ValueError(f"unknown {what} keys: {sorted(unknown)}")


# ---------------------------------------------------------------------------
# formatting and CSV helpers
# ---------------------------------------------------------------------------

def fmt(x) -> str:
    """Fixed text form for table cells: 6 significant digits, empty for missing."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return ""
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        s = format(x, ".6g")
        return "0" if s == "-0" else s
    return str(x)


def _num(s: str) -> float:
    return float(s) if s not in ("", None) else math.nan


def write_csv(path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def _jsonable(o):
    """Round floats to 6 significant digits and turn non-finite values into null."""
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return [_jsonable(v) for v in o.tolist()]
    if isinstance(o, (bool, np.bool_)):
        return bool(o)
    if isinstance(o, (int, np.integer)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        o = float(o)
        return float(format(o, ".6g")) if math.isfinite(o) else None
    return o


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

def discover(paths) -> list[Path]:
    """Session files named by ``paths`` (files or directories), sorted.

    Directories contribute their ``*.json`` files except ``manifest.json``.
    """
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            out += [q for q in p.glob("*.json") if q.name != "manifest.json"]
        elif p.exists():
            out.append(p)
        else:
            raise FileNotFoundError(f"no such file or directory: {p}")
    return sorted(set(out))


@dataclass
class IngestEntry:
    file: str
    subject: str | None = None
    session: int | None = None
    passed: bool = False
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def ingest(paths) -> list[IngestEntry]:
    entries = []
    for f in discover(paths):
        e = IngestEntry(file=str(f))
        try:
            s = load_session(f)
        except (BiosessionError, ValueError, OSError) as exc:
            e.errors.append(f"{type(exc).__name__}: {exc}")
        else:
            rep = validate_session(s)
            e.subject, e.session = s.key
            e.passed = rep.passed
            e.errors += list(rep.errors)
            e.warnings += list(rep.warnings)
        entries.append(e)
    return entries


# ---------------------------------------------------------------------------
# per-session processing
# ---------------------------------------------------------------------------

@dataclass
class SessionOutcome:
    file: str
    key: tuple[str, int] | None = None
    error: str | None = None
    log: list[dict] = field(default_factory=list)
    features: list[dict] = field(default_factory=list)
    behavior: dict | None = None
    preprocessed: str | None = None
    physical: str | None = None


def _feature_rows(session: Session, segment: str) -> list[dict]:
    modes = ("session", "scenario") if segment == "both" else (segment,)
    rows = []
    for mode in modes:
        for fv in session_features(session, per=mode):
            rows.append({"subject": fv.subject_id, "session": fv.session_index,
                         "segment": fv.segment, "duration_s": fv.duration_s,
                         **fv.values, "flags": ";".join(fv.flags)})
    return rows


def behavior_row(session: Session) -> dict:
    m = session.meta
    row = {"subject": m.subject_id, "session": session.session_index,
           "age_months": m.age_months, "sex": m.sex.value if hasattr(m.sex, "value") else m.sex,
           "age_group": m.age_group.value}
    b = session.behavior
    if b is not None:
        row["activity_min"] = b.duration_min
        for (f, c), r in behavior_rates(b).items():
            row[rate_column(f, c)] = r
        for name, v in b.likert.items():
            row[name] = v
    if session.clinical is not None:
        row.update(session.clinical.as_dict())
    return row


def process_file(path, cfg: PipelineConfig, keep_sessions: bool = False) -> SessionOutcome:
    """Load, preprocess and featurize one session file; errors are captured."""
    out = SessionOutcome(file=str(path))
    try:
        s = load_session(path)
        out.key = s.key
        pre = run_preprocess(s, cfg.preprocess)
        out.log = [json.loads(r.to_json()) for r in pre.log]
        source = pre.physical if cfg.feature_space == "physical" else pre.session
        out.features = _feature_rows(source, cfg.segment)
        out.behavior = behavior_row(s)
        if keep_sessions:
            out.preprocessed = serialize_session(pre.session)
            out.physical = serialize_session(pre.physical)
    except (BiosessionError, ValueError, OSError) as exc:
        out.error = f"{type(exc).__name__}: {exc}"
    return out


def featurize_file(path, cfg: PipelineConfig) -> SessionOutcome:
    """Features for a session already at 1 Hz (e.g. from the ``physical/`` dir)."""
    out = SessionOutcome(file=str(path))
    try:
        s = load_session(path)
        out.key = s.key
        if any(t.rate_hz != 1.0 for t in s.traces):
            return process_file(path, cfg)
        out.features = _feature_rows(s, cfg.segment)
        out.behavior = behavior_row(s)
    except (BiosessionError, ValueError, OSError) as exc:
        out.error = f"{type(exc).__name__}: {exc}"
    return out


def _process_args(args):
    fn, path, cfg, keep = args
    if fn == "featurize":
        return featurize_file(path, cfg)
    return process_file(path, cfg, keep)


def process_many(files, cfg: PipelineConfig, keep_sessions=False, fn="process") -> list[SessionOutcome]:
    tasks = [(fn, str(f), cfg, keep_sessions) for f in files]
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_process_args, tasks))
    else:
        results = [_process_args(t) for t in tasks]
    return sorted(results, key=lambda o: (o.key or ("", 0), o.file))


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

FEATURE_COLUMNS = ("subject", "session", "segment", "duration_s") + FEATURE_NAMES + ("flags",)
BEHAVIOR_TABLE_COLUMNS = (("subject", "session", "age_months", "sex", "age_group", "activity_min")
                          + BEHAVIOR_COLUMNS + CLINICAL_FIELDS)


@dataclass
class Tables:
    """Session-level feature rows, scenario-level rows and the behaviour table."""

    features: list[dict]
    behavior: list[dict]

    def session_rows(self):
        return [r for r in self.features if r["segment"] == "Session"]

    def scenario_rows(self):
        return [r for r in self.features if r["segment"] != "Session"]

    @classmethod
    def from_outcomes(cls, outcomes):
        feats = [r for o in outcomes if o.error is None for r in o.features]
        beh = [o.behavior for o in outcomes if o.error is None and o.behavior]
        return cls(_sorted_rows(feats), sorted(beh, key=lambda r: (r["subject"], r["session"])))

    @classmethod
    def from_bundle(cls, bundle):
        b = Path(bundle)
        for name in ("features.csv", "behavior.csv"):
            if not (b / name).exists():
                raise IncompleteBundle(f"{b / name} is missing; run the features stage first")
        feats = []
        for r in read_csv(b / "features.csv"):
            row = {"subject": r["subject"], "session": int(r["session"]), "segment": r["segment"],
                   "duration_s": _num(r["duration_s"]), "flags": r.get("flags", "")}
            for name in FEATURE_NAMES:
                v = _num(r.get(name, ""))
                if math.isfinite(v):
                    row[name] = v
            feats.append(row)
        beh = []
        for r in read_csv(b / "behavior.csv"):
            row = {"subject": r["subject"], "session": int(r["session"]), "sex": r["sex"],
                   "age_group": r["age_group"]}
            for c in BEHAVIOR_TABLE_COLUMNS[5:] + ("age_months",):
                v = _num(r.get(c, ""))
                if math.isfinite(v):
                    row[c] = v
            beh.append(row)
        return cls(_sorted_rows(feats), sorted(beh, key=lambda r: (r["subject"], r["session"])))

    def write(self, bundle):
        write_csv(Path(bundle) / "features.csv", FEATURE_COLUMNS, self.features)
        write_csv(Path(bundle) / "behavior.csv", BEHAVIOR_TABLE_COLUMNS, self.behavior)

    def merged(self) -> list[dict]:
        """Session-level features joined with behaviour rows on (subject, session)."""
        by_key = {(r["subject"], r["session"]): r for r in self.behavior}
        out = []
        for r in self.session_rows():
            b = by_key.get((r["subject"], r["session"]))
            if b is not None:
                out.append({**b, **r})
        return out


_SEG_ORDER = {"Session": 0, "Coin": 1, "Station": 2, "Battle": 3}


def _sorted_rows(rows):
    return sorted(rows, key=lambda r: (r["subject"], r["session"], _SEG_ORDER.get(r["segment"], 9)))


def column(rows, name) -> np.ndarray:
    return np.array([float(r.get(name, math.nan)) for r in rows], dtype=float)


# ---------------------------------------------------------------------------
# analyses
# ---------------------------------------------------------------------------

def _result_row(analysis_id, feature, a, b, res, mean_a=None, mean_b=None):
    return {"analysis_id": analysis_id, "feature": feature, "group_a": a, "group_b": b,
            "statistic_name": res.statistic_name, "statistic": res.statistic, "p": res.p_value,
            "n": res.n, "method": res.method, "mean_a": mean_a, "mean_b": mean_b}


def _mask_outliers(y, enabled):
    keep = np.isfinite(y)
    if enabled and keep.sum() >= 3:
        _, removed = remove_outliers(y[keep])
        idx = np.flatnonzero(keep)[removed]
        keep[idx] = False
    return keep


def _present(rows, names):
    return [n for n in names if any(n in r for r in rows)]


def correlation_tests(rows, features, plan: AnalysisPlan) -> list[dict]:
    """Spearman against age and point-biserial against sex (F coded 1)."""
    out = []
    age = column(rows, "age_months")
    female = np.array([r.get("sex") == "F" for r in rows])
    for feat in features:
        y = column(rows, feat)
        keep = _mask_outliers(y, plan.remove_outliers)
        if plan.age_correlations:
            ok = keep & np.isfinite(age)
            try:
                out.append(_result_row("spearman_age", feat, "age_months", "", spearman(age[ok], y[ok])))
            except (BiosessionError, ValueError):
                pass
        if plan.sex_correlations:
            g, v = female[keep], y[keep]
            try:
                res = point_biserial(g, v)
            except (BiosessionError, ValueError):
                continue
            out.append(_result_row("point_biserial_sex", feat, "F", "M", res,
                                   float(v[g].mean()), float(v[~g].mean())))
    return out


def _friedman_family(analysis_id, blocks: dict, levels, features, alpha) -> list[dict]:
    """Friedman over ``levels`` on complete blocks, then pairwise Wilcoxon if p < alpha.

    ``blocks`` maps a block key to {level: row}.
    """
    out = []
    for feat in features:
        mat = []
        for key in sorted(blocks):
            cells = blocks[key]
            vals = [cells.get(lv, {}).get(feat, math.nan) for lv in levels]
            if all(math.isfinite(v) for v in vals):
                mat.append(vals)
        if len(mat) < 2:
            continue
        M = np.array(mat)
        try:
            res = friedman(M)
        except (BiosessionError, ValueError):
            continue
        out.append(_result_row(f"friedman_{analysis_id}", feat, ",".join(map(str, levels)), "", res))
        if not res.p_value < alpha:
            continue
        for i, j in itertools.combinations(range(len(levels)), 2):
            try:
                w = wilcoxon_signed_rank(M[:, i], M[:, j])
            except (BiosessionError, ValueError):
                continue
            out.append(_result_row(f"wilcoxon_{analysis_id}", feat, str(levels[i]), str(levels[j]),
                                   w, float(M[:, i].mean()), float(M[:, j].mean())))
    return out


def repeated_measures_tests(tables: Tables, plan: AnalysisPlan, alpha: float) -> list[dict]:
    out = []
    physio = list(FEATURE_NAMES)
    if plan.session_friedman:
        rows = tables.merged()
        blocks: dict = {}
        for r in rows:
            blocks.setdefault(r["subject"], {})[r["session"]] = r
        feats = physio + _present(rows, BEHAVIOR_COLUMNS)
        out += _friedman_family("session", blocks, [1, 2, 3], feats, alpha)
    if plan.scenario_friedman:
        group_of = {(b["subject"], b["session"]): b.get("age_group") for b in tables.behavior}
        scen = tables.scenario_rows()
        for grp in ("Adolescent", "PreAdolescent"):
            blocks = {}
            for r in scen:
                if group_of.get((r["subject"], r["session"])) == grp:
                    blocks.setdefault((r["subject"], r["session"]), {})[r["segment"]] = r
            out += _friedman_family(f"scenario_{grp}", blocks, ["Coin", "Station", "Battle"],
                                    physio, alpha)
    return out


def glm_models(rows, plan: AnalysisPlan, alpha: float) -> list[dict]:
    """One GLM per outcome on VIF-screened, standardized physiological predictors."""
    models = []
    family = plan.glm_family.lower()
    for outcome in plan.glm_outcomes:
        entry = {"outcome": outcome, "family": family}
        y = column(rows, outcome)
        preds = [f for f in FEATURE_NAMES if np.isfinite(column(rows, f)).sum() > 0]
        X = np.column_stack([column(rows, f) for f in preds]) if preds else np.empty((len(rows), 0))
        ok = np.isfinite(y) & np.all(np.isfinite(X), axis=1)
        if family == "gamma":
            ok &= y > 0
        y, X = y[ok], X[ok]
        entry["n"] = int(y.size)
        # drop predictors that are constant on the usable rows
        var_ok = [j for j in range(X.shape[1]) if y.size > 1 and np.std(X[:, j]) > 0]
        preds = [preds[j] for j in var_ok]
        X = X[:, var_ok]
        if y.size <= len(preds) + 2 or len(preds) < 2:
            entry["status"] = f"skipped: {y.size} usable rows for {len(preds)} predictors"
            models.append(entry)
            continue
        try:
            rep = vif_filter(X, names=preds)
        except (BiosessionError, ValueError) as exc:
            entry["status"] = f"skipped: {exc}"
            models.append(entry)
            continue
        entry["vif"] = {"initial": rep.initial, "final": rep.final, "kept": rep.kept,
                        "excluded": rep.excluded, "threshold": rep.threshold}
        cols = [preds.index(k) for k in rep.kept]
        Xk = X[:, cols]
        Z = (Xk - Xk.mean(axis=0)) / Xk.std(axis=0, ddof=1)
        if y.size <= Z.shape[1] + 1:
            entry["status"] = f"skipped: {y.size} usable rows for {Z.shape[1]} predictors"
            models.append(entry)
            continue
        try:
            fit = fit_glm(y, Z, family=family, names=rep.kept)
            entry["status"] = "ok"
        except NotConverged as exc:
            fit = exc.fit
            entry["status"] = "not converged"
        except (BiosessionError, ValueError, np.linalg.LinAlgError) as exc:
            entry["status"] = f"failed: {exc}"
            models.append(entry)
            continue
        entry["fit"] = fit.to_dict() if fit is not None else None
        if fit is not None:
            entry["significant"] = [t["name"] for t in entry["fit"]["terms"]
                                    if t["name"] != "const" and t["p"] < alpha]
        models.append(entry)
    return models


def distribution_summaries(rows, outcomes) -> dict:
    out = {}
    for name in outcomes:
        y = column(rows, name)
        y = y[np.isfinite(y)]
        try:
            d = diagnostics(y)
            th, sm = qq_pairs(y)
        except (BiosessionError, ValueError):
            continue
        out[name] = {"n": int(y.size), "skewness": d.skewness, "excess_kurtosis": d.excess_kurtosis,
                     "shapiro_w": d.shapiro_w, "shapiro_p": d.shapiro_p,
                     "qq": {"theoretical": th, "sample": sm}}
    return out


def run_analyses(tables: Tables, cfg: PipelineConfig) -> tuple[list[dict], list[dict], dict]:
    """Return (test rows, GLM models, plot data)."""
    plan = cfg.analysis
    rows = tables.merged()
    beh_cols = _present(rows, BEHAVIOR_COLUMNS)
    clin_cols = _present(rows, CLINICAL_FIELDS)
    tests = correlation_tests(rows, list(FEATURE_NAMES) + beh_cols + clin_cols, plan)
    tests += repeated_measures_tests(tables, plan, cfg.alpha)
    models = glm_models(rows, plan, cfg.alpha) if plan.glm else []
    plots = {
        "distributions": distribution_summaries(rows, plan.glm_outcomes),
        "session_means": _level_means(rows, "session", list(FEATURE_NAMES) + beh_cols),
        "scenario_means": _scenario_means(tables),
    }
    return tests, models, plots


def _level_means(rows, key, feats):
    out = {}
    for feat in feats:
        by = {}
        for r in rows:
            v = r.get(feat)
            if v is not None and math.isfinite(v):
                by.setdefault(str(r[key]), []).append(v)
        if by:
            out[feat] = {k: float(np.mean(v)) for k, v in sorted(by.items())}
    return out


def _scenario_means(tables: Tables):
    group_of = {(b["subject"], b["session"]): b.get("age_group") for b in tables.behavior}
    out = {}
    for grp in ("Adolescent", "PreAdolescent"):
        rows = [r for r in tables.scenario_rows() if group_of.get((r["subject"], r["session"])) == grp]
        if rows:
            out[grp] = _level_means(rows, "segment", FEATURE_NAMES)
    return out


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------

@dataclass
class ClusterOutput:
    assignments: list[dict]
    scores: list[dict]
    profile: list[dict]
    means: list[dict]
    summary: dict


def clustering_matrix(rows, cc: ClusterConfig):
    """Behavioural columns (variance-filtered later), age, and optionally the hashed ID."""
    beh = [c for c in _present(rows, BEHAVIOR_COLUMNS)
           if np.all(np.isfinite(column(rows, c)))]
    cols = list(beh) + ["age_months"]
    mats = [column(rows, c) for c in cols]
    if cc.include_subject_id:
        cols.append("subject_id")
        mats.append(encode_subject_ids([r["subject"] for r in rows]))
    M = np.column_stack(mats)
    keep = np.all(np.isfinite(M), axis=1)
    return M, cols, keep, list(range(len(beh), len(cols)))


def run_clustering(tables: Tables, cfg: PipelineConfig) -> ClusterOutput:
    cc = cfg.clustering
    rows = [r for r in tables.behavior]
    M, cols, keep, always = clustering_matrix(rows, cc)
    rows = [r for r, k in zip(rows, keep) if k]
    M = M[keep]
    n = M.shape[0]
    if n < 4:
        raise StageError(f"clustering needs at least 4 complete sessions, got {n}")
    # constant columns carry no information and break standardization
    nonconst = [j for j in range(M.shape[1]) if np.std(M[:, j]) > 0]
    always = [nonconst.index(j) for j in always if j in nonconst]
    M, cols = M[:, nonconst], [cols[j] for j in nonconst]
    k_range = range(cc.k_min, min(cc.k_max, n - 1) + 1)
    model = cluster_sessions(M, cc.embedding, k_range=k_range, restarts=cc.restarts,
                             variance_percentile=cc.variance_percentile, always_keep=always,
                             feature_space_scores=cc.feature_space_scores)
    assignments = [{"subject": r["subject"], "session": r["session"], "x": float(x), "y": float(y),
                    "cluster": int(c)}
                   for r, (x, y), c in zip(rows, model.embedding, model.labels)]
    # profile on demographics, clinical, physiology and behaviour
    feats_by_key = {(r["subject"], r["session"]): r for r in tables.session_rows()}
    table: dict[str, np.ndarray] = {
        "age_months": column(rows, "age_months"),
        "sex_F": np.array([1.0 if r.get("sex") == "F" else 0.0 for r in rows]),
    }
    for c in CLINICAL_FIELDS:
        if any(c in r for r in rows):
            table[c] = column(rows, c)
    frows = [feats_by_key.get((r["subject"], r["session"]), {}) for r in rows]
    for f in FEATURE_NAMES:
        v = column(frows, f)
        if np.isfinite(v).any():
            table[f] = v
    for c in _present(rows, BEHAVIOR_COLUMNS):
        table[c] = column(rows, c)
    prof = cluster_profile(model.labels, table, alpha=cfg.alpha)
    means = prof.table()
    comps = [{"feature": c.feature, "cluster_a": c.cluster_a, "cluster_b": c.cluster_b, "U": c.U,
              "p": c.p, "method": c.method, "significant": c.significant,
              "mean_a": prof.summary[c.feature][c.cluster_a][0],
              "mean_b": prof.summary[c.feature][c.cluster_b][0]}
             for c in prof.comparisons]
    summary = {"k": model.k, "silhouette": model.silhouette, "davies_bouldin": model.davies_bouldin,
               "inertia": model.inertia, "n": n, "sizes": {str(k): v for k, v in prof.sizes.items()},
               "columns": cols, "kept_columns": [cols[j] for j in model.kept_columns],
               "feature_space_scores": model.feature_space_scores}
    return ClusterOutput(assignments, model.score_table, comps, means, summary)


CLUSTER_COLUMNS = ("subject", "session", "x", "y", "cluster")
SCORE_COLUMNS = ("k", "silhouette", "davies_bouldin", "inertia")
PROFILE_COLUMNS = ("feature", "cluster_a", "cluster_b", "U", "p", "method", "significant",
                   "mean_a", "mean_b")


def write_clustering(bundle, co: ClusterOutput):
    b = Path(bundle)
    write_csv(b / "clusters.csv", CLUSTER_COLUMNS, co.assignments)
    write_csv(b / "scores.csv", SCORE_COLUMNS, co.scores)
    write_csv(b / "profile.csv", PROFILE_COLUMNS, co.profile)
    k = co.summary["k"]
    write_csv(b / "cluster_means.csv", ["feature"] + [f"cluster_{c}" for c in range(k)], co.means)
    write_json(b / "clusters.json", co.summary)
    pd = b / "plotdata"
    pd.mkdir(exist_ok=True)
    write_json(pd / "silhouette_vs_k.json", {c: [r[c] for r in co.scores] for c in SCORE_COLUMNS})
    write_json(pd / "embedding.json", {c: [r[c] for r in co.assignments] for c in CLUSTER_COLUMNS})


def write_analyses(bundle, tests, models, plots):
    b = Path(bundle)
    write_csv(b / "tests.csv", TEST_COLUMNS, tests)
    write_json(b / "glm.json", models)
    pd = b / "plotdata"
    pd.mkdir(exist_ok=True)
    for name, obj in plots.items():
        write_json(pd / f"{name}.json", obj)


# ---------------------------------------------------------------------------
# full run
# ---------------------------------------------------------------------------

@dataclass
class RunSummary:
    n_files: int
    n_ok: int
    n_failed: int
    exit_code: int
    bundle: Path


def _write_jsonl(path, records):
    Path(path).write_text("".join(json.dumps(_jsonable(r), sort_keys=True) + "\n" for r in records),
                          encoding="utf-8")


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(bundle, cfg: PipelineConfig, extra: dict):
    b = Path(bundle)
    eff = cfg.effective()
    outputs = sorted(p.relative_to(b).as_posix() for p in b.rglob("*")
                     if p.is_file() and p.name not in ("manifest.json", "report.md"))
    manifest = {
        "package": "biosession",
        "version": __version__,
        "config": {k: v for k, v in eff.to_dict().items() if k not in ("input", "output", "jobs")},
        "config_hash": cfg.config_hash(),
        "seeds": {"master": cfg.seed, "random_forest": eff.preprocess.rf_seed,
                  "embedding": eff.clustering.embedding.seed, "kmeans": eff.clustering.embedding.seed},
        "files": {name: file_digest(b / name) for name in outputs},
        **extra,
    }
    write_json(b / "manifest.json", manifest)


def refresh_manifest(bundle, cfg: PipelineConfig, **extra):
    """Rewrite the manifest after a stage, keeping run facts recorded earlier."""
    b = Path(bundle)
    keep = {}
    if (b / "manifest.json").exists():
        old = json.loads((b / "manifest.json").read_text(encoding="utf-8"))
        keep = {k: old[k] for k in ("n_sessions", "n_failed", "sessions", "clustering_error")
                if k in old}
    keep.update(extra)
    write_manifest(b, cfg, keep)


def outcomes_to_bundle(bundle, outcomes: list[SessionOutcome]):
    b = Path(bundle)
    b.mkdir(parents=True, exist_ok=True)
    logs = [rec for o in outcomes for rec in o.log]
    _write_jsonl(b / "preprocess_log.jsonl", logs)
    fails = [{"file": Path(o.file).name, "error": o.error} for o in outcomes if o.error]
    _write_jsonl(b / "failures.jsonl", fails)
    tables = Tables.from_outcomes(outcomes)
    tables.write(b)
    return tables


def run(cfg: PipelineConfig) -> RunSummary:
    """Full pipeline from session files to a report bundle."""
    from .report import write_report

    if not cfg.input or not cfg.output:
        raise StageError("run needs both an input and an output location")
    eff = cfg.effective()
    files = discover([cfg.input])
    if not files:
        raise StageError(f"no session files found under {cfg.input}")
    bundle = Path(cfg.output)
    bundle.mkdir(parents=True, exist_ok=True)
    outcomes = process_many(files, eff)
    tables = outcomes_to_bundle(bundle, outcomes)
    n_failed = sum(o.error is not None for o in outcomes)
    n_ok = len(outcomes) - n_failed
    extra = {"n_sessions": len(outcomes), "n_failed": n_failed,
             "sessions": [{"file": Path(o.file).name, "key": list(o.key) if o.key else None,
                           "ok": o.error is None} for o in outcomes]}
    if n_ok:
        # analyze the tables as written so staged and one-shot runs agree byte for byte
        tables = Tables.from_bundle(bundle)
        tests, models, plots = run_analyses(tables, eff)
        write_analyses(bundle, tests, models, plots)
        try:
            write_clustering(bundle, run_clustering(tables, eff))
        except (BiosessionError, ValueError) as exc:
            extra["clustering_error"] = str(exc)
            log.warning("clustering skipped: %s", exc)
    write_manifest(bundle, cfg, extra)
    if n_ok:
        write_report(bundle)
    frac = n_failed / len(outcomes)
    code = 3 if frac > cfg.max_failure_fraction else 0
    if n_ok == 0:
        code = 2
    return RunSummary(len(outcomes), n_ok, n_failed, code, bundle)


def check_bundle(bundle, required=REQUIRED_FOR_REPORT):
    b = Path(bundle)
    missing = [name for name in required if not (b / name).exists()]
    if missing:
        raise IncompleteBundle(f"bundle {b} lacks {', '.join(missing)}")
    return b


__all__ = [
    "PipelineConfig", "AnalysisPlan", "ClusterConfig", "Tables", "SessionOutcome", "RunSummary",
    "ClusterOutput", "StageError", "fmt", "write_csv", "read_csv", "write_json", "discover",
    "ingest", "process_file", "featurize_file", "process_many", "run_analyses", "run_clustering",
    "write_analyses", "write_clustering", "write_manifest", "refresh_manifest", "outcomes_to_bundle", "run",
    "check_bundle",
]
