from __future__ import annotations

from pathlib import Path

import pandas as pd

from osmeter.choice.logit import ChoiceModelResult

ESTIMATE_COLUMNS = ("parameter", "alternatives", "estimate", "classical_se", "robust_se",
                    "robust_z", "p_value", "stars")


def fit_path(estimates_path: str | Path) -> Path:
    p = Path(estimates_path)
    return p.with_name(p.stem + ".fit.csv")


def write_estimates(result: ChoiceModelResult, path: str | Path) -> tuple[Path, Path]:
    """Coefficient table at ``path``; fit statistics next to it as ``<stem>.fit.csv``."""
    path = Path(path)
    pd.DataFrame(result.table(), columns=ESTIMATE_COLUMNS).to_csv(
        path, index=False, lineterminator="\n", float_format="%.10g")
    fit = pd.DataFrame({"statistic": list(result.fit_block()),
                        "value": [str(v) if isinstance(v, bool) else v
                                  for v in result.fit_block().values()]})
    fit.to_csv(fit_path(path), index=False, lineterminator="\n", float_format="%.10g")
    return path, fit_path(path)
