"""
Seeded random streams.

Every consumer asks for a substream by a path of integers, e.g.
`substream(seed, CHANNEL, 3)`. Substreams are derived with numpy's
SeedSequence spawn keys and drive a Philox counter-based generator, so a
substream never depends on how many other substreams were drawn before it.
"""
import numpy as np

# Top level stream families.
CHANNEL = 0
EVENT = 1
PLACEMENT = 2
TRAINING = 3
PERMUTATION = 4
INJECTION = 5


def substream(seed: int, *path: int) -> np.random.Generator:
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(path))
    return np.random.Generator(np.random.Philox(sequence))


def derive_seed(seed: int, *path: int) -> int:
    """
    A 64 bit child seed, used where a plain integer has to be handed on
    (eg. the per model seeds stored in checkpoints).
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(path))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])
