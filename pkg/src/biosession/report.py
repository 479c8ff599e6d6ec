"""Markdown summary of a report bundle."""

from __future__ import annotations

import json
import math
from pathlib import Path

from .pipeline import check_bundle, read_csv


def _p(p: float) -> str:
    if p < 0.001:
        return "< .001"
    return f"{p:.3f}".lstrip("0") if p < 1 else "1"


def _num(s: str) -> float:
    return float(s) if s not in ("", None) else math.nan


def _direction(row: dict) -> str:
    name = row["statistic_name"]
    stat = _num(row["statistic"])
    if name in ("rho", "r_pb"):
        if row["analysis_id"].startswith("point_biserial"):
            return f"higher in {row['group_a']}" if stat > 0 else f"higher in {row['group_b']}"
        return "positive" if stat > 0 else "negative"
    a, b = _num(row.get("mean_a", "")), _num(row.get("mean_b", ""))
    if math.isfinite(a) and math.isfinite(b) and a != b:
        hi, lo = (row["group_a"], row["group_b"]) if a > b else (row["group_b"], row["group_a"])
        return f"{hi} > {lo} (M = {max(a, b):.4g} vs {min(a, b):.4g})"
    return ""


def _table(header, rows) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(r) + " |" for r in rows]
    return out


def _test_lines(rows) -> list[str]:
    header = ["analysis", "feature", "groups", "statistic", "p", "n", "method", "direction"]
    body = []
    for r in rows:
        groups = r["group_a"] + (f" vs {r['group_b']}" if r["group_b"] else "")
        body.append([r["analysis_id"], r["feature"], groups, f"{r['statistic_name']} = {r['statistic']}",
                     _p(_num(r["p"])), r["n"], r["method"], _direction(r)])
    return _table(header, body)


def render_report(bundle) -> str:
    """Markdown text for a bundle; raises IncompleteBundle when core files are absent."""
    b = check_bundle(bundle)
    manifest = json.loads((b / "manifest.json").read_text(encoding="utf-8"))
    alpha = manifest.get("config", {}).get("alpha", 0.05)
    tests = read_csv(b / "tests.csv")
    models = json.loads((b / "glm.json").read_text(encoding="utf-8"))
    lines = ["# Session analysis report", ""]
    n = manifest.get("n_sessions")
    if n is not None:
        lines.append(f"Sessions processed: {n}; failed: {manifest.get('n_failed', 0)}.")
    log_path = b / "preprocess_log.jsonl"
    if log_path.exists():
        dropped = [json.loads(s) for s in log_path.read_text(encoding="utf-8").splitlines() if s]
        dropped = [d for d in dropped if d.get("dropped")]
        lines.append(f"Traces excluded by the missing-data rule: {len(dropped)}.")
        for d in dropped:
            lines.append(f"- {d['subject_id']} session {d['session_index']}: {d['kind']} "
                         f"({d['reason']})")
    lines.append(f"Configuration hash: `{manifest.get('config_hash', '')}`.")
    lines.append("")

    sig = [r for r in tests if _num(r["p"]) < alpha]
    lines += [f"## Significant results (p < {alpha:g})", ""]
    if sig:
        lines += _test_lines(sig)
    else:
        lines.append("No significant results.")
    lines.append("")

    lines += ["## Regression models", ""]
    if not models:
        lines.append("No models were fitted.")
    for m in models:
        fit = m.get("fit")
        head = f"### {m['outcome']} ({m['family']} GLM, n = {m.get('n', 0)})"
        lines += [head, ""]
        if fit is None:
            lines += [f"Status: {m.get('status', 'unknown')}.", ""]
            continue
        excluded = m.get("vif", {}).get("excluded", [])
        if excluded:
            lines.append(f"Excluded by VIF > 5: {', '.join(excluded)}.")
        lines.append(f"Status: {m['status']}; deviance = {fit['deviance']}, AIC = {fit['aic']}, "
                     f"pseudo R-squared = {fit['pseudo_r2']}.")
        terms = [t for t in fit["terms"] if t["name"] != "const" and t["p"] is not None
                 and t["p"] < alpha]
        if terms:
            lines.append("")
            lines += _table(["predictor", "coef", "SE", "p"],
                            [[t["name"], f"{t['coef']:.4g}", f"{t['se']:.4g}", _p(t["p"])]
                             for t in terms])
        else:
            lines.append("No predictor reached significance.")
        lines.append("")

    lines += ["## Clusters", ""]
    cj = b / "clusters.json"
    if cj.exists():
        cs = json.loads(cj.read_text(encoding="utf-8"))
        lines.append(f"{cs['k']} clusters on the t-SNE embedding of {cs['n']} sessions "
                     f"(silhouette = {cs['silhouette']}, Davies-Bouldin = {cs['davies_bouldin']}, "
                     f"inertia = {cs['inertia']}).")
        lines.append("")
        lines += _table(["cluster", "sessions"], [[k, str(v)] for k, v in cs["sizes"].items()])
        lines.append("")
        prof = [r for r in read_csv(b / "profile.csv")] if (b / "profile.csv").exists() else []
        sig_prof = [r for r in prof if _num(r["p"]) < alpha]
        if sig_prof:
            lines += _table(["feature", "clusters", "U", "p", "direction"],
                            [[r["feature"], f"{r['cluster_a']} vs {r['cluster_b']}", r["U"],
                              _p(_num(r["p"])),
                              _direction({**r, "statistic_name": "U", "statistic": r["U"],
                                          "analysis_id": "profile",
                                          "group_a": f"cluster {r['cluster_a']}",
                                          "group_b": f"cluster {r['cluster_b']}"})]
                             for r in sig_prof])
        else:
            lines.append("No significant cluster differences.")
    else:
        err = manifest.get("clustering_error")
        lines.append(f"Clustering was not run{': ' + err if err else ''}.")
    lines.append("")

    lines += ["## Appendix: all tests", ""]
    if tests:
        lines += _test_lines(tests)
    else:
        lines.append("No tests were run.")
    lines.append("")
    lines.append("P-values are not corrected for multiple comparisons.")
    return "\n".join(lines) + "\n"


def write_report(bundle) -> Path:
    path = Path(bundle) / "report.md"
    path.write_text(render_report(bundle), encoding="utf-8")
    return path
