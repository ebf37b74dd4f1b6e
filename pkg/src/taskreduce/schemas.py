"""JSON schemas (draft 2020-12) for the documents the command-line driver prints."""

from __future__ import annotations

_NUMBER_OR_TEXT = {"type": ["number", "string"]}
_MATRIX = {"type": "array", "items": {"type": "array"}}

VIOLATION = {
    "type": "object",
    "required": ["check", "where", "message"],
    "properties": {"check": {"type": "string"}, "where": {"type": "array"}, "message": {"type": "string"}},
}

POLICY = {
    "type": "object",
    "required": ["initial", "update", "act"],
    "properties": {
        "initial": {"type": "integer", "minimum": 0},
        "update": _MATRIX,
        "act": {"type": "array", "items": _MATRIX},
    },
}

VALIDATE = {
    "type": "object",
    "required": ["kind", "valid", "violations"],
    "properties": {
        "kind": {"enum": ["mdp", "machine", "reduction"]},
        "valid": {"type": "boolean"},
        "violations": {"type": "array", "items": VIOLATION},
    },
    "additionalProperties": False,
}

SOLVE = {
    "type": "object",
    "required": ["spec", "value", "policy"],
    "properties": {"spec": {"type": "string"}, "value": _NUMBER_OR_TEXT, "policy": POLICY},
    "additionalProperties": False,
}

_ENTRIES = {"type": "array", "items": {"type": "object", "required": ["prob"], "properties": {"prob": {"type": "number", "minimum": 0}}}}

DESCRIPTOR = {
    "type": "object",
    "required": ["name", "states", "actions", "initial", "inner", "beta", "alpha", "q1", "q2"],
    "properties": {
        "name": {"type": "string"},
        "states": {"type": "integer", "minimum": 1},
        "actions": {"type": "integer", "minimum": 1},
        "initial": {"type": "integer", "minimum": 0},
        "inner": {
            "type": "object",
            "required": ["states", "actions"],
            "properties": {"states": {"type": "integer", "minimum": 1}, "actions": {"type": "integer", "minimum": 1}},
        },
        "propositions": {"type": "array", "items": {"type": "string"}},
        "labels": {"type": "array", "items": {"type": "array", "items": {"type": "string"}}},
        "beta": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "alpha": _ENTRIES,
        "q1": _ENTRIES,
        "q2": _ENTRIES,
        "spec": {"type": ["object", "null"]},
        "tracking": {"type": ["array", "null"]},
        "params": {"type": "object"},
    },
}

REDUCE = {
    "type": "object",
    "required": ["kind", "descriptor", "report"],
    "properties": {
        "kind": {"type": "string"},
        "descriptor": DESCRIPTOR,
        "report": {
            "type": "object",
            "required": ["valid", "violations", "preserved", "witness", "sweep"],
            "properties": {
                "valid": {"type": "boolean"},
                "violations": {"type": "array", "items": VIOLATION},
                "preserved": {"type": ["boolean", "null"]},
                "mode": {"enum": ["exhaustive", "witness"]},
                "optimum": _NUMBER_OR_TEXT,
                "reduced_optimum": _NUMBER_OR_TEXT,
                "witness": {"type": ["array", "null"]},
                "sweep": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["param", "preserved"],
                        "properties": {"param": {"type": ["number", "array"]}, "preserved": {"type": ["boolean", "null"]}},
                    },
                },
            },
        },
    },
    "additionalProperties": False,
}

SIMULATE = {
    "type": "object",
    "required": ["steps", "final_state", "inner_steps", "visits"],
    "properties": {
        "steps": {"type": "integer", "minimum": 0},
        "final_state": {"type": "integer", "minimum": 0},
        "inner_steps": {"type": "integer", "minimum": 0},
        "visits": {"type": "array", "items": {"type": "integer", "minimum": 0}},
    },
    "additionalProperties": False,
}

LEARN = {
    "type": "object",
    "required": ["learner", "spec", "steps", "optimum", "final_value", "final_gap", "snapshots", "final_policy"],
    "properties": {
        "learner": {"enum": ["q", "model"]},
        "spec": {"type": "string"},
        "steps": {"type": "integer", "minimum": 0},
        "optimum": _NUMBER_OR_TEXT,
        "final_value": _NUMBER_OR_TEXT,
        "final_gap": _NUMBER_OR_TEXT,
        "snapshots": {"type": "integer", "minimum": 1},
        "final_policy": POLICY,
    },
    "additionalProperties": False,
}

EXPERIMENT = {
    "type": "object",
    "required": ["name", "parameters", "quantities", "verdicts", "passed", "seeds", "notes", "rows"],
    "properties": {
        "name": {"type": "string"},
        "parameters": {"type": "object"},
        "quantities": {"type": "object"},
        "verdicts": {"type": "object", "additionalProperties": {"type": "boolean"}},
        "passed": {"type": "boolean"},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "notes": {"type": "array", "items": {"type": "string"}},
        "rows": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}

EXPERIMENT_SUITE = {
    "type": "object",
    "required": ["reports", "passed"],
    "properties": {"reports": {"type": "array", "items": EXPERIMENT}, "passed": {"type": "boolean"}},
    "additionalProperties": False,
}

BY_COMMAND = {
    "validate": VALIDATE,
    "solve": SOLVE,
    "reduce": REDUCE,
    "simulate": SIMULATE,
    "learn": LEARN,
    "experiment": EXPERIMENT,
}
