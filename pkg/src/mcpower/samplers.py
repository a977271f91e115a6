"""Sources of Bernoulli streams.

A stream stands for one simulated dataset with unknown p-value ``p_i``; its
bits are i.i.d. Bernoulli(``p_i``). Built-in streams draw from their own
generator, keyed by ``(root seed, domain, stream id)``, so the bits of a stream
never depend on how the work is scheduled.

The external source talks to a child process over a line protocol:
``S <id>`` opens stream ``id`` (the child simulates a fresh dataset) and
``X <id>`` asks for one resample indicator, answered by a line ``0`` or ``1``.
"""

from __future__ import annotations

import itertools
import math
import os
import selectors
import shlex
import subprocess
import threading
from dataclasses import dataclass

import numpy as np
from numba import njit

MAIN_DOMAIN = 0
PILOT_DOMAIN = 1
EXTRA_DOMAIN = 2

ENUMERATION_LIMIT = 16


class SamplerError(RuntimeError):
    """The stream source failed; the run cannot continue."""


class SamplerTimeout(SamplerError):
    pass


class SamplerProtocolError(SamplerError):
    pass


def stream_rng(seed: int, domain: int, stream_id: int) -> np.random.Generator:
    """Counter-based generator for one stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(domain), int(stream_id)])))


@dataclass(frozen=True)
class SamplerSpec:
    """Which model generates the streams.

    kind is one of ``beta`` (``x``), ``fixed`` (``p``), ``discrete``
    (``support``, ``weights``), ``perm`` (``K``, ``L``, ``effect``, ``sigma``)
    or ``ext`` (``cmd``).
    """

    kind: str
    params: tuple = ()

    def __post_init__(self) -> None:
        p = dict(self.params)
        if self.kind == "beta":
            if not p.get("x", 0) > 0:
                raise ValueError("beta sampler needs x > 0")
        elif self.kind == "fixed":
            if not 0.0 <= p.get("p", -1) <= 1.0:
                raise ValueError("fixed sampler needs 0 <= p <= 1")
        elif self.kind == "discrete":
            support = np.asarray(p.get("support", ()), dtype=float)
            weights = np.asarray(p.get("weights", ()), dtype=float)
            if support.size == 0 or support.shape != weights.shape:
                raise ValueError("discrete sampler needs matching support and weights")
            if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
                raise ValueError("discrete weights must be nonnegative and sum to 1")
            if np.any((support < 0) | (support > 1)):
                raise ValueError("discrete support must lie in [0, 1]")
        elif self.kind == "perm":
            if p.get("K", 0) < 1 or p.get("L", 0) < 1:
                raise ValueError("permutation sampler needs K, L >= 1")
            if p.get("sigma", 1.0) <= 0:
                raise ValueError("permutation sampler needs sigma > 0")
        elif self.kind == "ext":
            if not p.get("cmd"):
                raise ValueError("external sampler needs cmd")
        else:
            raise ValueError(f"unknown sampler kind {self.kind!r}")

    def get(self, key, default=None):
        return dict(self.params).get(key, default)

    @classmethod
    def beta(cls, x: float) -> "SamplerSpec":
        return cls("beta", (("x", float(x)),))

    @classmethod
    def fixed(cls, p: float) -> "SamplerSpec":
        return cls("fixed", (("p", float(p)),))

    @classmethod
    def discrete(cls, support, weights) -> "SamplerSpec":
        return cls("discrete", (("support", tuple(map(float, support))), ("weights", tuple(map(float, weights)))))

    @classmethod
    def permutation(cls, K: int = 4, L: int = 8, effect: float = 1.0, sigma: float = 1.0) -> "SamplerSpec":
        return cls("perm", (("K", int(K)), ("L", int(L)), ("effect", float(effect)), ("sigma", float(sigma))))

    @classmethod
    def external(cls, cmd: str, procs: int = 1, timeout: float = 60.0) -> "SamplerSpec":
        return cls("ext", (("cmd", cmd), ("procs", int(procs)), ("timeout", float(timeout))))

    def describe(self) -> str:
        if self.kind == "beta":
            return f"beta:x={self.get('x'):.10g}"
        if self.kind == "fixed":
            return f"fixed:p={self.get('p'):.10g}"
        if self.kind == "discrete":
            s = "/".join(f"{v:g}" for v in self.get("support"))
            w = "/".join(f"{v:g}" for v in self.get("weights"))
            return f"discrete:support={s},weights={w}"
        if self.kind == "perm":
            return "perm:K={},L={},effect={:g},sigma={:g}".format(
                self.get("K"), self.get("L"), self.get("effect"), self.get("sigma", 1.0))
        return f"ext:cmd={self.get('cmd')!r}"


def parse_sampler(text: str) -> SamplerSpec:
    """Parse ``beta:x=23.47``, ``fixed:p=0.03``, ``perm:K=4,L=8,effect=1.0``, ``ext:cmd="..."``.

    ``discrete:support=0.01/0.05/0.5,weights=0.2/0.3/0.5`` is also accepted,
    as is ``beta:power=0.7`` (x solved for ``alpha = 0.05``; add ``alpha=``).
    """
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    if kind == "ext":
        # commas separate fields; quotes protect commas inside the command
        lex = shlex.shlex(rest, posix=True)
        lex.whitespace = ","
        lex.whitespace_split = True
        fields = dict(tok.partition("=")[::2] for tok in lex)
        if not fields.get("cmd"):
            raise ValueError('external sampler needs cmd="..."')
        return SamplerSpec.external(fields["cmd"], int(fields.get("procs", 1)), float(fields.get("timeout", 60.0)))
    fields = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        k, sep, v = item.partition("=")
        if not sep:
            raise ValueError(f"expected key=value in sampler {text!r}")
        fields[k.strip()] = v.strip()
    try:
        if kind == "beta":
            if "power" in fields:
                alpha = float(fields.get("alpha", 0.05))
                return SamplerSpec.beta(beta_parameter_for_power(alpha, float(fields["power"])))
            return SamplerSpec.beta(float(fields["x"]))
        if kind == "fixed":
            return SamplerSpec.fixed(float(fields["p"]))
        if kind == "discrete":
            support = [float(v) for v in fields["support"].split("/")]
            weights = [float(v) for v in fields["weights"].split("/")]
            return SamplerSpec.discrete(support, weights)
        if kind == "perm":
            return SamplerSpec.permutation(int(fields.get("K", 4)), int(fields.get("L", 8)),
                                           float(fields.get("effect", 1.0)), float(fields.get("sigma", 1.0)))
    except KeyError as exc:
        raise ValueError(f"sampler {text!r} is missing parameter {exc.args[0]}") from None
    raise ValueError(f"unknown sampler {text!r}")


def beta_parameter_for_power(alpha: float, beta_target: float) -> float:
    """``x`` such that a Beta(1, x) p-value has ``P[p <= alpha] = beta_target``."""
    if not (0.0 < alpha < 1.0 and 0.0 < beta_target < 1.0):
        raise ValueError("alpha and beta_target must lie in (0, 1)")
    return math.log1p(-beta_target) / math.log1p(-alpha)


# -- streams ---------------------------------------------------------------

# outcome codes returned by Stream.walk
OPEN = 0
POSITIVE = 1      # hit the lower boundary: p-value judged <= alpha
NEGATIVE = 2      # hit the upper boundary

_NEVER = 1 << 62


@njit(cache=True, nogil=True)
def _walk_gaps(nxt, gaps, g, s, t, t1, upper, lower, m0, first):
    # Steps t+1..t1 of a stream whose 1-bits arrive at step nxt, then at
    # nxt + gaps[g], ...  Returns (code, step, s, nxt, g); code 3 means the
    # gap buffer ran dry right after an arrival at `step`.
    # From step m0 on the boundaries never decrease, so between arrivals only
    # the lower boundary can be reached, first at step first[s].
    j = t
    while j < t1:
        if j + 1 >= m0:
            land = first[s] if s < first.size else t1 + 1
            if land <= j:
                land = j + 1
            if land < nxt and land <= t1:
                return POSITIVE, land, s, nxt, g
            if nxt > t1:
                return OPEN, t1, s, nxt, g
            j = nxt
        else:
            j += 1
        arrived = j == nxt
        if arrived:
            s += 1
        if s >= upper[j]:
            return NEGATIVE, j, s, nxt, g
        if s <= lower[j]:
            return POSITIVE, j, s, nxt, g
        if arrived:
            if g == gaps.size:
                return 3, j, s, nxt, g
            nxt = j + gaps[g]
            g += 1
    return OPEN, j, s, nxt, g


class Stream:
    """One Bernoulli stream.

    ``bits(n)`` returns the next ``n`` bits as uint8. ``walk`` advances the
    stream against boundary arrays and stops at the first contact; the
    default implementation draws bits, subclasses may do better.
    """

    stream_id: int
    p: float | None = None
    clock: int = 0

    def bits(self, n: int) -> np.ndarray:
        raise NotImplementedError

    def walk(self, s: int, t1: int, table) -> tuple[int, int, int]:
        """Advance from step ``clock`` with partial sum ``s`` up to step ``t1``.

        ``table`` is a :class:`~mcpower.boundary.BoundaryTable` built through
        ``t1``. Returns ``(code, step, s)``: ``OPEN`` with the sum at ``t1``,
        or ``POSITIVE``/``NEGATIVE`` with the contact step and sum there.
        """
        upper, lower = table.upper, table.lower
        t = self.clock
        path = s + np.cumsum(self.bits(t1 - t), dtype=np.int64)
        self.clock = t1
        up = path >= upper[t + 1:t1 + 1]
        down = path <= lower[t + 1:t1 + 1]
        hit = up | down
        k = int(hit.argmax())
        if not hit[k]:
            return OPEN, t1, int(path[-1])
        return (NEGATIVE if up[k] else POSITIVE), t + k + 1, int(path[k])

    def state(self) -> dict:
        raise NotImplementedError

    def restore(self, state: dict) -> None:
        raise NotImplementedError


class BernoulliStream(Stream):
    """Bits i.i.d. Bernoulli(p) with ``p`` drawn once from the model.

    The stream is stored as the gaps between its 1-bits, each gap drawn by
    inversion from one uniform. Walking then costs one comparison per step
    and one uniform per 1-bit, and any split of the steps into calls gives
    the same bits.
    """

    def __init__(self, stream_id: int, p: float, rng: np.random.Generator):
        self.stream_id = stream_id
        self.p = float(p)
        self.rng = rng
        self.clock = 0
        self.next_one = -1            # step of the next 1-bit; -1 = not drawn yet
        self._gaps = np.empty(0, dtype=np.int64)
        self._g = 0

    def _draw_gaps(self, k: int) -> np.ndarray:
        u = self.rng.random(k)
        if self.p <= 0.0:
            return np.full(k, _NEVER, dtype=np.int64)
        if self.p >= 1.0:
            return np.ones(k, dtype=np.int64)
        # P(gap > j) = (1 - p)**j; u < 1 keeps log1p(-u) finite
        gaps = np.floor(np.log1p(-u) * (1.0 / math.log1p(-self.p))) + 1.0
        return np.minimum(gaps, _NEVER).astype(np.int64)

    def _next_gap(self, expected_steps: int) -> int:
        if self._g == self._gaps.size:
            k = int(min(1 << 20, max(256, self.p * expected_steps * 1.25 + 16)))
            self._gaps = self._draw_gaps(k)
            self._g = 0
        gap = int(self._gaps[self._g])
        self._g += 1
        return gap

    def bits(self, n: int) -> np.ndarray:
        out = np.zeros(n, dtype=np.uint8)
        if self.next_one < 0:
            self.next_one = self.clock + self._next_gap(n)
        end = self.clock + n
        while self.next_one <= end:
            out[self.next_one - self.clock - 1] = 1
            self.next_one += self._next_gap(end - self.next_one)
        self.clock = end
        return out

    def walk(self, s, t1, table):
        if self.next_one < 0:
            self.next_one = self.clock + self._next_gap(t1 - self.clock)
        t = self.clock
        upper, lower, m0, first = table.walk_arrays()
        while True:
            code, j, s, nxt, g = _walk_gaps(self.next_one, self._gaps, self._g, s, t, t1, upper, lower, m0, first)
            self._g = g
            if code != 3:
                self.next_one = nxt
                self.clock = j
                return code, j, s
            self.next_one = j + self._next_gap(t1 - j)
            t = j

    def state(self) -> dict:
        return {"p": self.p, "rng": self.rng.bit_generator.state, "clock": self.clock,
                "next_one": self.next_one, "gaps": self._gaps[self._g:].tolist()}

    def restore(self, state: dict) -> None:
        self.p = float(state["p"])
        self.rng.bit_generator.state = state["rng"]
        self.clock = int(state["clock"])
        self.next_one = int(state["next_one"])
        self._gaps = np.asarray(state["gaps"], dtype=np.int64)
        self._g = 0


class PermutationStream(Stream):
    """Two-sample mean-difference permutation test on one simulated dataset.

    Each bit draws a uniformly random relabelling of the pooled sample and
    reports whether its statistic is at least as large as the observed one.
    """

    def __init__(self, stream_id: int, values: np.ndarray, k: int, rng: np.random.Generator):
        self.stream_id = stream_id
        self.values = np.asarray(values, dtype=float)
        self.k = int(k)
        self.rng = rng
        # mean(G) - mean(C) is increasing in sum(G) for a fixed pooled total
        self.observed = float(self.values[: self.k].sum())
        self.tol = 1e-9 * float(np.abs(self.values).sum() + 1.0)
        self.clock = 0

    def bits(self, n: int) -> np.ndarray:
        self.clock += n
        m = self.values.size
        out = np.empty(n, dtype=np.uint8)
        for start in range(0, n, 8192):
            size = min(8192, n - start)
            keys = self.rng.random((size, m))
            chosen = np.argpartition(keys, self.k - 1, axis=1)[:, : self.k]
            sums = self.values[chosen].sum(axis=1)
            out[start:start + size] = sums >= self.observed - self.tol
        return out

    def state(self) -> dict:
        return {"values": self.values.tolist(), "rng": self.rng.bit_generator.state, "clock": self.clock}

    def restore(self, state: dict) -> None:
        self.values = np.asarray(state["values"], dtype=float)
        self.observed = float(self.values[: self.k].sum())
        self.rng.bit_generator.state = state["rng"]
        self.clock = int(state["clock"])


def simulate_permutation_dataset(rng: np.random.Generator, K: int, L: int, effect: float, sigma: float = 1.0):
    """``K`` treated draws ``N(effect*sigma, sigma^2)`` followed by ``L`` controls ``N(0, sigma^2)``."""
    treated = rng.normal(effect * sigma, sigma, size=K)
    control = rng.normal(0.0, sigma, size=L)
    return np.concatenate([treated, control])


_COMBOS: dict[tuple[int, int], np.ndarray] = {}


def _combinations(m: int, k: int) -> np.ndarray:
    key = (m, k)
    if key not in _COMBOS:
        _COMBOS[key] = np.array(list(itertools.combinations(range(m), k)), dtype=np.int64).reshape(-1, k)
    return _COMBOS[key]


def exact_permutation_pvalue(values, K: int) -> float:
    """One-sided permutation p-value of ``mean(first K) - mean(rest)`` over all relabellings."""
    p = exact_permutation_pvalues(np.asarray(values, dtype=float)[None, :], K)
    return float(p[0])


def exact_permutation_pvalues(datasets: np.ndarray, K: int) -> np.ndarray:
    """Vectorized :func:`exact_permutation_pvalue` over rows of ``datasets``."""
    datasets = np.atleast_2d(np.asarray(datasets, dtype=float))
    m = datasets.shape[1]
    if m > ENUMERATION_LIMIT:
        raise ValueError(f"exact enumeration limited to K+L <= {ENUMERATION_LIMIT}, got {m}")
    combos = _combinations(m, K)
    observed = datasets[:, :K].sum(axis=1)
    tol = 1e-9 * (np.abs(datasets).sum(axis=1) + 1.0)
    out = np.empty(datasets.shape[0])
    step = max(1, 2_000_000 // (combos.shape[0] * K))
    for start in range(0, datasets.shape[0], step):
        block = datasets[start:start + step]
        sums = block[:, combos].sum(axis=2)
        hits = sums >= (observed[start:start + step] - tol[start:start + step])[:, None]
        out[start:start + step] = hits.sum(axis=1) / combos.shape[0]
    return out


def permutation_power_exact(effect: float, n_datasets: int, seed: int, K: int = 4, L: int = 8,
                            alpha: float = 0.05, sigma: float = 1.0):
    """Power estimate from exact p-values of ``n_datasets`` simulated datasets.

    Returns ``(estimate, pvalues)``.
    """
    rng = np.random.default_rng(seed)
    treated = rng.normal(effect * sigma, sigma, size=(n_datasets, K))
    control = rng.normal(0.0, sigma, size=(n_datasets, L))
    p = exact_permutation_pvalues(np.hstack([treated, control]), K)
    return float(np.mean(p <= alpha)), p


# -- external process --------------------------------------------------------

class ExternalProcess:
    """A child speaking the bit protocol. Not thread safe; callers serialize."""

    CHUNK = 4096

    def __init__(self, command: str, timeout: float = 60.0):
        self.command = command
        self.timeout = float(timeout)
        try:
            self.proc = subprocess.Popen(
                shlex.split(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0,
            )
        except OSError as exc:
            raise SamplerError(f"cannot start external sampler {command!r}: {exc}") from exc
        self._buffer = b""
        self._sel = selectors.DefaultSelector()
        self._sel.register(self.proc.stdout, selectors.EVENT_READ)
        self.lock = threading.Lock()

    def _send(self, payload: bytes) -> None:
        try:
            self.proc.stdin.write(payload)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise SamplerError(f"external sampler exited (code {self.proc.poll()})") from exc

    def _readline(self, stream_id: int) -> bytes:
        while b"\n" not in self._buffer:
            if not self._sel.select(self.timeout):
                raise SamplerTimeout(f"external sampler gave no reply within {self.timeout:g}s for stream {stream_id}")
            chunk = os.read(self.proc.stdout.fileno(), 65536)
            if not chunk:
                raise SamplerError(f"external sampler exited (code {self.proc.poll()}) while serving stream {stream_id}")
            self._buffer += chunk
        line, _, self._buffer = self._buffer.partition(b"\n")
        return line

    def open_stream(self, stream_id: int) -> None:
        self._send(f"S {stream_id}\n".encode())

    def bits(self, stream_id: int, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.uint8)
        request = f"X {stream_id}\n".encode()
        for start in range(0, n, self.CHUNK):
            size = min(self.CHUNK, n - start)
            self._send(request * size)
            for j in range(size):
                line = self._readline(stream_id).strip()
                if line == b"0":
                    out[start + j] = 0
                elif line == b"1":
                    out[start + j] = 1
                else:
                    raise SamplerProtocolError(
                        f"stream {stream_id}: expected '0' or '1', got {line.decode(errors='replace')!r}"
                    )
        return out

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        self._sel.close()


def external_bit(handle: ExternalProcess, stream_id: int) -> int:
    """One resample indicator for ``stream_id`` from a child process."""
    with handle.lock:
        return int(handle.bits(stream_id, 1)[0])


class ExternalStream(Stream):
    # the child may be expensive, so walks ask for bits in short pieces
    PIECE = 256

    def __init__(self, stream_id: int, handle: ExternalProcess):
        self.stream_id = stream_id
        self.handle = handle
        self.clock = 0
        with handle.lock:
            handle.open_stream(stream_id)

    def bits(self, n: int) -> np.ndarray:
        with self.handle.lock:
            out = self.handle.bits(self.stream_id, n)
        self.clock += n
        return out

    def walk(self, s, t1, table):
        while True:
            code, j, s = super().walk(s, min(t1, self.clock + self.PIECE), table)
            if code != OPEN or j >= t1:
                return code, j, s

    def state(self) -> dict:
        raise SamplerError("external streams cannot be checkpointed")


class Sampler:
    """Opens streams for one :class:`SamplerSpec`; owns any child processes."""

    def __init__(self, spec: SamplerSpec, seed: int):
        self.spec = spec
        self.seed = int(seed)
        self._procs: list[ExternalProcess] = []
        if spec.kind == "ext":
            for _ in range(max(1, int(spec.get("procs", 1)))):
                self._procs.append(ExternalProcess(spec.get("cmd"), spec.get("timeout", 60.0)))

    @property
    def resumable(self) -> bool:
        return self.spec.kind != "ext"

    def new_stream(self, stream_id: int, domain: int = MAIN_DOMAIN) -> Stream:
        return new_stream(self.spec, stream_id, self.seed, domain, self._procs)

    def close(self) -> None:
        for proc in self._procs:
            proc.close()
        self._procs = []

    def __enter__(self) -> "Sampler":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def new_stream(spec: SamplerSpec, stream_id: int, seed: int, domain: int = MAIN_DOMAIN,
               procs: list[ExternalProcess] | None = None) -> Stream:
    """Create stream ``stream_id``; built-in kinds draw their dataset immediately."""
    if spec.kind == "ext":
        if not procs:
            raise SamplerError("external sampler has no running child process")
        # pilot and main streams share the child id space
        sid = stream_id + domain * (1 << 40)
        return ExternalStream(sid, procs[stream_id % len(procs)])
    rng = stream_rng(seed, domain, stream_id)
    if spec.kind == "beta":
        return BernoulliStream(stream_id, rng.beta(1.0, spec.get("x")), rng)
    if spec.kind == "fixed":
        return BernoulliStream(stream_id, spec.get("p"), rng)
    if spec.kind == "discrete":
        support = np.asarray(spec.get("support"))
        weights = np.asarray(spec.get("weights"))
        return BernoulliStream(stream_id, support[rng.choice(support.size, p=weights)], rng)
    if spec.kind == "perm":
        K, L = spec.get("K"), spec.get("L")
        values = simulate_permutation_dataset(rng, K, L, spec.get("effect"), spec.get("sigma", 1.0))
        return PermutationStream(stream_id, values, K, rng)
    raise ValueError(f"unknown sampler kind {spec.kind!r}")


def true_power(spec: SamplerSpec, alpha: float) -> float | None:
    """``F(alpha)`` for the models where it is known in closed form."""
    if spec.kind == "beta":
        return 1.0 - (1.0 - alpha) ** spec.get("x")
    if spec.kind == "fixed":
        return 1.0 if spec.get("p") <= alpha else 0.0
    if spec.kind == "discrete":
        s = np.asarray(spec.get("support"))
        w = np.asarray(spec.get("weights"))
        return float(w[s <= alpha].sum())
    return None
