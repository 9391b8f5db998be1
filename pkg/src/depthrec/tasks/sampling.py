import numpy as np


def balanced_labels(count: int, rng: np.random.Generator) -> list[int]:
    """Exactly half ones (odd counts get one random extra), in random order."""
    labels = [i % 2 for i in range(count)]
    if count % 2:
        labels[-1] = int(rng.integers(2))
    return [labels[i] for i in rng.permutation(count)]
