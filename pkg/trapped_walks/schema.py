OFFSPRING_LAW_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "Offspring Law",
    "type": "object",
    "required": ["pmf"],
    "properties": {
        "pmf": {
            "type": "object",
            "minProperties": 1,
            "propertyNames": {"pattern": "^(0|[1-9][0-9]*)$"},
            "additionalProperties": {"type": "number", "minimum": 0},
        },
        "tail_exponent": {"type": "number", "exclusiveMinimum": 0},
        "name": {"type": "string"},
    },
    "additionalProperties": False,
}

TRAP_MODEL_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["unit", "two-point", "exponential", "tree"]},
        "m1": {"type": "number", "exclusiveMinimum": 0},
        "m2": {"type": "number", "exclusiveMinimum": 0},
        "p": {"type": "number", "minimum": 0, "maximum": 1},
        "means": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}},
        "weights": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
    },
    "additionalProperties": False,
}

EXPERIMENT_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "Experiment Configuration",
    "type": "object",
    "required": ["suite", "seed"],
    "properties": {
        "suite": {
            "enum": [
                "verify-analytics",
                "speed",
                "annealed-clt",
                "quenched-clt",
                "quenched-hitting",
                "einstein",
                "coupling",
                "necessity",
            ]
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": 18446744073709551615},
        "calibration_seed": {"type": "integer", "minimum": 0, "maximum": 18446744073709551615},
        "law": {
            "oneOf": [
                {"type": "string", "minLength": 1},
                OFFSPRING_LAW_SCHEMA,
            ]
        },
        "traps": {
            "oneOf": [
                {"type": "string", "minLength": 1},
                TRAP_MODEL_SCHEMA,
            ]
        },
        "beta": {"type": "number", "exclusiveMinimum": 0},
        "betas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 1}},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "calibration_horizon": {"type": "number", "exclusiveMinimum": 0},
        "level": {"type": "integer", "minimum": 1},
        "replicas": {"type": "integer", "minimum": 1},
        "threads": {
            "oneOf": [
                {"type": "integer", "minimum": 1},
                {"const": "auto"},
            ]
        },
        "output": {"type": "string", "minLength": 1},
        "mode": {"enum": ["annealed-position", "quenched-position", "quenched-tree-position", "quenched-hitting"]},
        "centring": {"enum": ["exact", "deterministic"]},
        "delta": {"type": "number", "exclusiveMinimum": 0},
        "window_length": {"type": "integer", "minimum": 1},
        "reference_windows": {"type": "integer", "minimum": 2},
        "reference_walks": {"type": "integer", "minimum": 2},
        "probe_scales": {
            "type": "array",
            "minItems": 2,
            "items": {"type": "integer", "minimum": 10},
        },
        "probe_truncation": {"type": "number", "exclusiveMinimum": 0},
        "threshold": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "seeds_per_check": {"type": "integer", "minimum": 1},
        "trees": {"type": "integer", "minimum": 1},
        "calibration_outer": {"type": "integer", "minimum": 2},
        "calibration_inner": {"type": "integer", "minimum": 2},
        "control_beta": {"type": "number", "exclusiveMinimum": 1},
    },
    "additionalProperties": False,
}
