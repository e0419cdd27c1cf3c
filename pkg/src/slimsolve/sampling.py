"""Block-index selection schemes.

For a disjoint covering row partition the selection matrices satisfy
E W W^T = (1/M) I exactly (:func:`verify_unbiasedness` measures the
deviation), which makes the least-squares objective a plain expectation
over sampled blocks:

    E ||W^T (A x - b)||^2 = (A x - b)^T E[W W^T] (A x - b)
                          = (1/M) ||A x - b||^2,

so minimizing the expected sampled residual is the original problem.
Every row-action method in this package is a stochastic approximation
scheme for that reformulation.

Three schemes over 1-based block indices {1..M}:

* ``cyclic``: deterministic sweep, index = ((k-1) mod M) + 1.
* ``random_cyclic``: a fresh uniform permutation of {1..M} per epoch,
  drawn with an explicit Fisher-Yates shuffle.
* ``uniform_iid``: each draw uniform on {1..M}, independent of history.

Randomness comes from the Philox 4x64 counter-based bit generator,
keyed directly by the user seed.  Philox is a published, stateless-key
algorithm, so an index trace is fully determined by (scheme, M, seed)
and can be reproduced by any implementation of the same generator.
Bounded integers are drawn via ``numpy.random.Generator.integers``.
Parallel replicate runs should each construct their own sampler seeded
as ``base_seed + replicate_index``.
"""

from __future__ import annotations

import numpy as np

SCHEMES = ("cyclic", "random_cyclic", "uniform_iid")


def _fisher_yates(m: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform permutation of 1..m via the classic backward shuffle."""
    perm = np.arange(1, m + 1, dtype=np.int64)
    for i in range(m - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


class Sampler:
    """Stateful index source; single-threaded mutable state."""

    def __init__(self, scheme: str, n_blocks: int, seed: int = 0):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}, want one of {SCHEMES}")
        if n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        self.scheme = scheme
        self.n_blocks = int(n_blocks)
        self.seed = int(seed)
        self.rng = np.random.Generator(np.random.Philox(key=self.seed))
        self.position = 0  # total indices emitted so far
        self._epoch_perm: np.ndarray | None = None

    def next_index(self) -> int:
        """Next 1-based block index under the configured scheme."""
        m = self.n_blocks
        if self.scheme == "cyclic":
            idx = self.position % m + 1
        elif self.scheme == "uniform_iid":
            idx = int(self.rng.integers(1, m + 1))
        else:  # random_cyclic
            offset = self.position % m
            if offset == 0:
                self._epoch_perm = _fisher_yates(m, self.rng)
            idx = int(self._epoch_perm[offset])
        self.position += 1
        return idx

    def indices(self, count: int) -> np.ndarray:
        """The next ``count`` indices (same sequence as repeated calls)."""
        return np.array([self.next_index() for _ in range(count)], dtype=np.int64)

    @property
    def epochs_completed(self) -> float:
        """Blocks consumed divided by M (fractional epochs)."""
        return self.position / self.n_blocks


def verify_unbiasedness(partition, n_rows: int) -> float:
    """Max-norm deviation of the sampling second moment from (1/M) I.

    ``partition`` is a sequence of 0-based row-index arrays, one per
    block.  For row-selection sampling, (1/M) sum_i W_i W_i^T is the
    diagonal matrix of row multiplicities divided by M, so the
    deviation from (1/M) I is max_j |count_j - 1| / M.  It is exactly 0
    for a disjoint covering partition and positive for any overlap or
    gap.
    """
    blocks = [np.asarray(idx, dtype=np.int64).reshape(-1) for idx in partition]
    if not blocks:
        raise ValueError("partition must contain at least one block")
    m_blocks = len(blocks)
    counts = np.zeros(n_rows, dtype=np.int64)
    for idx in blocks:
        if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
            raise ValueError("row index out of range")
        counts += np.bincount(idx, minlength=n_rows)
    return float(np.max(np.abs(counts - 1)) / m_blocks)


def standard_partition(op) -> list[np.ndarray]:
    """Contiguous row partition realized by a RowBlockOperator."""
    return [
        np.arange(*op.row_range(i), dtype=np.int64)
        for i in range(1, op.n_blocks + 1)
    ]
