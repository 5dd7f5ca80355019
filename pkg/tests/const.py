"""Literal inputs shared by the refpriv tests."""

# Tiny synthetic dataset used by most fixtures
TINY_CLASSES = 4
TINY_PER_CLASS = 40
TINY_DIM = 24

# Label-first CSV with integer labels and binary features
MOCK_CSV = "0,1,0,1\n1,0,1,1\n2,1,1,0\n0,0,0,1\n"
MOCK_CSV_ONE_BASED = "1,1,0,1\n2,0,1,1\n3,1,1,0\n"
MOCK_CSV_BAD_CELL = "0,1,0,1\n1,0,x,1\n2,1,1,0\n"
MOCK_CSV_NON_BINARY = "0,1,0,1\n1,0,1,1\n2,1,0.5,0\n"

# Minimal valid experiment config (before defaults are filled in)
MOCK_CONFIG = {
    "dataset": {"synthetic": {"classes": 4, "per_class": 40, "dim": 12, "seed": 3}},
    "split": {"n_train": 40, "n_reference": 40, "n_test": 40, "seed": 1},
    "defenses": [
        {
            "kind": "werm",
            "epochs": 2,
            "batch_size": 16,
            "hidden_layers": [8],
            "sweep": {"parameter": "w", "values": [0.0, 0.5]},
        }
    ],
    "attacks": ["confidence", "gap"],
    "seeds": 2,
    "master_seed": 11,
}

MOCK_CONFIG_YAML = """\
dataset:
  synthetic: {classes: 4, per_class: 40, dim: 12, seed: 3}
split: {n_train: 40, n_reference: 40, n_test: 40, seed: 1}
defenses:
  - kind: werm
    epochs: 2
    batch_size: 16
    hidden_layers: [8]
    sweep: {parameter: w, values: [0.0, 0.5]}
attacks: [confidence, gap]
seeds: 2
master_seed: 11
"""

# Confidence-attack example with a perfect threshold
MEMBER_CONFIDENCES = [0.9, 0.8]
NONMEMBER_CONFIDENCES = [0.6, 0.4]

# Hand-built points: (test accuracy, mia_train, mia_ref)
EQUAL_PRIVACY_POINT = (0.87, 0.615, 0.615)
LEAKY_REFERENCE_POINTS = [(0.80, 0.60, 0.57), (0.85, 0.62, 0.57), (0.90, 0.65, 0.57)]
