import json
import os
from pathlib import Path

from risk_model.errors import ValidationError
from risk_model.merton import GroupPartition, Obligor, Portfolio

FLOAT_FORMAT = "%.12g"


def portfolio_from_dict(doc: dict) -> Portfolio:
    """
    Build a Portfolio from {"obligors": [{"exposure", "pd" | "threshold", "loading"}], "groups": [sizes]}.
    Without "groups" every obligor forms its own group.
    """
    entries = doc.get("obligors")
    if not entries:
        raise ValidationError("portfolio document has no obligors")
    obligors = []
    for idx, entry in enumerate(entries):
        try:
            exposure = float(entry["exposure"])
            loading = float(entry["loading"])
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"obligor {idx}: {e}") from e
        if "threshold" in entry:
            obligors.append(Obligor(exposure=exposure, loading=loading, threshold=float(entry["threshold"])))
        elif "pd" in entry:
            obligors.append(Obligor.from_pd(exposure, float(entry["pd"]), loading))
        else:
            raise ValidationError(f"obligor {idx} needs either 'pd' or 'threshold'")
    sizes = doc.get("groups") or [1] * len(obligors)
    return Portfolio(obligors=tuple(obligors), partition=GroupPartition(sizes=tuple(sizes)))


def portfolio_to_dict(portfolio: Portfolio) -> dict:
    return {
        "obligors": [
            {"exposure": o.exposure, "threshold": o.threshold, "loading": o.loading} for o in portfolio.obligors
        ],
        "groups": list(portfolio.partition.sizes),
    }


def load_portfolio(path: str | os.PathLike) -> Portfolio:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Portfolio file not found: {path}")
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path} is not valid JSON: {e}") from e
    return portfolio_from_dict(doc)


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return FLOAT_FORMAT % value
    return str(value)


def write_key_values(doc: dict, path: str | os.PathLike):
    with open(path, "w", encoding="utf-8") as f:
        for key, value in doc.items():
            f.write(f"{key} = {format_value(value)}\n")
