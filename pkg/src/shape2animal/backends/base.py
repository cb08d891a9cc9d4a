"""Backend adapter contracts, registry, and retry machinery.

Five capabilities cross the backend boundary, all taking and returning
in-memory values (never file paths):

    detect    .detect(image: Raster, vocabulary: Sequence[str]) -> list[BoundingBox]
    segment   .segment(image: Raster, box: BoundingBox) -> Mask
    interpret .complete(request: ConceptRequest) -> str          (raw response text)
    depth     .estimate(image: Raster) -> np.ndarray             (raw H x W depths)
    generate  .generate(image: Raster, mask: Mask, depth: DepthMap,
                        prompt: str, config: GenerationConfig) -> Raster

Adapters expose a ``descriptor`` attribute (BackendDescriptor). Adapters that
declare ``thread_safe=False`` are wrapped in a serializing guard by
``resolve()`` so concurrent pipeline stages cannot interleave calls.
"""

from __future__ import annotations

import functools
import random
import threading
import time
from dataclasses import dataclass, field

from ..errors import RETRYABLE_ERRORS, BackendError, ConfigError

CAPABILITIES = ("detect", "segment", "interpret", "depth", "generate")


@dataclass(frozen=True)
class BackendDescriptor:
    capability: str
    id: str
    determinism: str = "deterministic"  # deterministic | stochastic-with-seed | stochastic
    thread_safe: bool = True
    rate_limit_hint: float | None = None  # suggested max calls per second

    def __post_init__(self):
        if self.capability not in CAPABILITIES:
            raise ValueError(f"unknown capability {self.capability!r}")
        if self.determinism not in ("deterministic", "stochastic-with-seed", "stochastic"):
            raise ValueError(f"unknown determinism class {self.determinism!r}")


@dataclass(frozen=True)
class RetryPolicy:
    """Exponential backoff with full jitter, capped, for retryable errors only."""

    max_attempts: int = 3
    backoff_base: float = 0.5
    backoff_cap: float = 8.0
    retryable: tuple = RETRYABLE_ERRORS

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ConfigError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.backoff_base < 0 or self.backoff_base > self.backoff_cap:
            raise ConfigError(
                f"backoff base must satisfy 0 <= base <= cap, got "
                f"base={self.backoff_base} cap={self.backoff_cap}"
            )


@dataclass
class RetryStats:
    """Mutable attempt log, filled in by with_retries when supplied."""

    attempts: int = 0
    delays: list = field(default_factory=list)


def with_retries(call, policy: RetryPolicy, *, sleep=time.sleep, rng=None, stats=None):
    """Invoke ``call`` under the retry policy and return its result.

    Only the policy's retryable error classes are retried; anything else
    propagates on first occurrence. The delay before attempt n+1 is drawn
    uniformly from [0, min(cap, base * 2**(n-1))] (full jitter). The last
    error is raised once attempts are exhausted, with ``attempts`` recorded
    on it when it is a BackendError.
    """
    rng = rng if rng is not None else random.Random()
    for attempt in range(1, policy.max_attempts + 1):
        if stats is not None:
            stats.attempts = attempt
        try:
            return call()
        except policy.retryable as err:
            if attempt == policy.max_attempts:
                if isinstance(err, BackendError):
                    err.attempts = attempt
                raise
            delay = rng.uniform(0.0, min(policy.backoff_cap, policy.backoff_base * (2.0 ** (attempt - 1))))
            if stats is not None:
                stats.delays.append(delay)
            sleep(delay)
    raise AssertionError("unreachable")  # pragma: no cover


class _SerializedBackend:
    """Proxy that funnels every method call through one lock."""

    def __init__(self, inner):
        self._inner = inner
        self._lock = threading.Lock()

    @property
    def descriptor(self):
        return self._inner.descriptor

    def __getattr__(self, name):
        attr = getattr(self._inner, name)
        if not callable(attr):
            return attr

        @functools.wraps(attr)
        def locked(*args, **kwargs):
            with self._lock:
                return attr(*args, **kwargs)

        return locked


_REGISTRY: dict[tuple[str, str], type] = {}


def register(capability: str, backend_id: str, **descriptor_kwargs):
    """Class decorator: register a backend under (capability, id)."""
    descriptor = BackendDescriptor(capability=capability, id=backend_id, **descriptor_kwargs)

    def decorate(cls):
        cls.descriptor = descriptor
        _REGISTRY[(capability, backend_id)] = cls
        return cls

    return decorate


def known_ids(capability: str) -> list[str]:
    return sorted(bid for (cap, bid) in _REGISTRY if cap == capability)


def all_descriptors() -> list[BackendDescriptor]:
    return sorted(
        (cls.descriptor for cls in _REGISTRY.values()),
        key=lambda d: (d.capability, d.id),
    )


def resolve(capability: str, backend_id: str, **options):
    """Instantiate the backend registered under (capability, id).

    Unknown ids raise ConfigError listing what is registered. Non-thread-safe
    adapters come back wrapped in a serializing guard.
    """
    if capability not in CAPABILITIES:
        raise ConfigError(
            f"unknown capability {capability!r}; expected one of {', '.join(CAPABILITIES)}"
        )
    cls = _REGISTRY.get((capability, backend_id))
    if cls is None:
        known = ", ".join(known_ids(capability)) or "(none)"
        raise ConfigError(
            f"no {capability} backend with id {backend_id!r}; known ids: {known}"
        )
    instance = cls(**options)
    if not instance.descriptor.thread_safe:
        return _SerializedBackend(instance)
    return instance
