"""The experiment report: a JSON document with a versioned schema.

Serialization is deterministic (sorted keys, fixed indentation, shortest
round-trip float repr), so two runs of the same config and seed produce
identical bytes apart from ``wall_time``.
"""

from __future__ import annotations

import json

SCHEMA_VERSION = "1.0.0"

_NUM = {"type": ["number", "null"]}
_INT_OR_NULL = {"type": ["integer", "null"]}

_METRICS = {
    "type": "object",
    "required": ["kind", "n_samples", "values"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["regression", "classification", "clustering"]},
        "n_samples": {"type": "integer", "minimum": 0},
        "values": {"type": "object", "additionalProperties": _NUM},
        "confusion": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        },
        "notes": {"type": "object", "additionalProperties": {"type": "string"}},
    },
}

_METRICS_OR_NULL = {"oneOf": [{"type": "null"}, _METRICS]}

_LEDGER_SUMMARY = {
    "type": "object",
    "required": ["n_entries", "n_spent", "epsilon", "delta"],
    "additionalProperties": False,
    "properties": {
        "n_entries": {"type": "integer", "minimum": 0},
        "n_spent": {"type": "integer", "minimum": 0},
        "epsilon": {"type": "number", "minimum": 0},
        "delta": {"type": "number", "minimum": 0},
    },
}

_ROUND = {
    "type": "object",
    "required": ["run", "round", "halted", "per_client", "global", "ledger_snapshot"],
    "additionalProperties": False,
    "properties": {
        "run": _INT_OR_NULL,
        "round": {"type": "integer", "minimum": 0},
        "halted": {"type": "boolean"},
        "per_client": {"type": "array", "items": _METRICS},
        "global": _METRICS_OR_NULL,
        "ledger_snapshot": {"oneOf": [{"type": "null"}, _LEDGER_SUMMARY]},
    },
}

_RUN = {
    "type": "object",
    "required": ["run", "completed", "halted", "rounds_completed", "final_global"],
    "additionalProperties": False,
    "properties": {
        "run": {"type": "integer", "minimum": 0},
        "completed": {"type": "boolean"},
        "halted": {"type": "boolean"},
        "rounds_completed": {"type": "integer", "minimum": 0},
        "final_global": _METRICS_OR_NULL,
    },
}

_LEDGER_ENTRY = {
    "type": "object",
    "required": ["epsilon", "delta", "mechanism", "round", "client", "run", "spent"],
    "additionalProperties": False,
    "properties": {
        "epsilon": {"type": "number", "minimum": 0},
        "delta": {"type": "number", "minimum": 0},
        "mechanism": {"type": "string"},
        "round": _INT_OR_NULL,
        "client": _INT_OR_NULL,
        "run": _INT_OR_NULL,
        "spent": {"type": "boolean"},
    },
}

_PRIVACY_LEDGER = {
    "oneOf": [
        {"type": "null"},
        {
            "type": "object",
            "required": ["entries", "total", "filter"],
            "additionalProperties": False,
            "properties": {
                "entries": {"type": "array", "items": _LEDGER_ENTRY},
                "total": {
                    "type": "object",
                    "required": ["epsilon", "delta"],
                    "properties": {"epsilon": {"type": "number"}, "delta": {"type": "number"}},
                },
                "filter": {
                    "oneOf": [
                        {"type": "null"},
                        {
                            "type": "object",
                            "required": ["kind", "eps_g", "delta_g", "halted"],
                            "properties": {
                                "kind": {"enum": ["basic", "advanced"]},
                                "eps_g": {"type": "number"},
                                "delta_g": {"type": "number"},
                                "halted": {"type": "boolean"},
                            },
                        },
                    ]
                },
            },
        },
    ]
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$id": f"fedsim-report/{SCHEMA_VERSION}",
    "title": "fedsim experiment report",
    "type": "object",
    "required": [
        "schema_version",
        "config_echo",
        "data",
        "sensitivity",
        "per_round",
        "runs",
        "summary",
        "centralized",
        "privacy_ledger",
        "halted",
        "wall_time",
    ],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "config_echo": {"type": "object", "required": ["seed", "dataset"]},
        "data": {
            "type": "object",
            "required": ["n_rows", "n_features", "n_train", "n_test", "n_holdout"],
            "properties": {
                "n_rows": {"type": "integer"},
                "n_features": {"type": "integer"},
                "feature_names": {"type": "array", "items": {"type": "string"}},
                "n_train": {"type": "integer"},
                "n_test": {"type": "integer"},
                "n_holdout": {"type": "integer"},
                "client_train_sizes": {"type": "array", "items": {"type": "integer"}},
                "client_test_sizes": {"type": "array", "items": {"type": "integer"}},
                "client_classes": {
                    "oneOf": [
                        {"type": "null"},
                        {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
                    ]
                },
            },
        },
        "sensitivity": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["kind", "value", "estimate"],
                    "properties": {
                        "kind": {"enum": ["fixed", "sampled"]},
                        "value": {"type": "number", "minimum": 0},
                        "estimate": {
                            "oneOf": [
                                {"type": "null"},
                                {
                                    "type": "object",
                                    "required": [
                                        "max_sensitivity",
                                        "mean_sensitivity",
                                        "n_samples",
                                        "gamma",
                                        "norm_kind",
                                        "record_count",
                                    ],
                                },
                            ]
                        },
                    },
                },
            ]
        },
        "per_round": {"type": "array", "items": _ROUND},
        "runs": {"type": "array", "items": _RUN},
        "summary": {
            "type": "object",
            "required": ["completed_runs", "mean_global"],
            "additionalProperties": False,
            "properties": {
                "completed_runs": {"type": "integer", "minimum": 0},
                "mean_global": {"type": "object", "additionalProperties": _NUM},
            },
        },
        "centralized": _METRICS_OR_NULL,
        "privacy_ledger": _PRIVACY_LEDGER,
        "halted": {"type": "boolean"},
        "wall_time": {"type": "number", "minimum": 0},
    },
}


def report_schema() -> dict:
    return REPORT_SCHEMA


def build_report(
    *,
    config_echo: dict,
    data_summary: dict,
    sensitivity: dict | None,
    per_round: list[dict],
    runs: list[dict],
    summary: dict,
    centralized: dict | None,
    privacy_ledger: dict | None,
    halted: bool,
    wall_time: float,
) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config_echo": config_echo,
        "data": data_summary,
        "sensitivity": sensitivity,
        "per_round": per_round,
        "runs": runs,
        "summary": summary,
        "centralized": centralized,
        "privacy_ledger": privacy_ledger,
        "halted": halted,
        "wall_time": wall_time,
    }


def dumps(obj) -> str:
    """Canonical JSON text; NaN and infinities are rejected."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def without_wall_time(text: str) -> dict:
    doc = json.loads(text)
    doc.pop("wall_time", None)
    return doc
