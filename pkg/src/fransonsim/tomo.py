"""Two-qubit polarization tomography, entanglement metrics, and CHSH tests.

Measurement settings model the physical analyzer chain per photon: an
optional quarter-wave plate followed by a linear polarizer. Counts are
Poissonian with per-setting mean pairs_per_setting * tr(rho Pi_A x Pi_B),
simulated on counter-based substreams of one seed so results do not depend
on evaluation order. Reconstruction is either constrained linear inversion
or an iterative maximum-likelihood fit; uncertainties come from a
parametric bootstrap that resamples the counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .qcore import (
    PAULI_X,
    PAULI_Z,
    PHI_PLUS_KET,
    DensityMatrix,
    concurrence,
    fidelity_to,
    purity,
)
from .optics import WaveplateSpec, jones

__all__ = [
    "PartySetting",
    "MeasurementSetting",
    "CountData",
    "ReconstructionResult",
    "ChshAngles",
    "MetricsReport",
    "DEFAULT_CHSH_ANGLES",
    "DEFAULT_PAIRS_PER_SETTING",
    "projector",
    "standard_settings",
    "setting_projectors",
    "expected_probabilities",
    "simulate_counts",
    "analytic_counts",
    "counts_to_csv",
    "counts_from_csv",
    "linear_inversion",
    "mle_reconstruct",
    "chsh_value",
    "monte_carlo_metrics",
]

# 10.3 kcps of coincidences integrated for 25 s per analyzer setting.
DEFAULT_PAIRS_PER_SETTING = 260_000

PROBABILITY_FLOOR = 1e-12
MLE_DEFAULT_TOL = 1e-10
MLE_DEFAULT_MAX_ITER = 10_000

_CSV_HEADER = "setting_index,theta_a,qwp_a,qwp_theta_a,theta_b,qwp_b,qwp_theta_b,count"


@dataclass(frozen=True)
class PartySetting:
    """One analyzer: polarizer angle plus an optional quarter-wave plate.

    Angles are radians and reduced to [0, pi); ``qwp_angle`` is meaningful
    only when ``qwp_in`` is true but is stored regardless.
    """

    polarizer_angle: float
    qwp_in: bool = False
    qwp_angle: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "polarizer_angle", float(self.polarizer_angle) % math.pi)
        object.__setattr__(self, "qwp_in", bool(self.qwp_in))
        object.__setattr__(self, "qwp_angle", float(self.qwp_angle) % math.pi)


@dataclass(frozen=True)
class MeasurementSetting:
    """Analyzer settings for both photons of one coincidence measurement."""

    party_a: PartySetting
    party_b: PartySetting


def projector(setting: MeasurementSetting, party: str) -> np.ndarray:
    """Rank-1 polarization projector realized by one party's analyzer.

    The transmitted state is the polarizer's linear ket pulled back through
    the quarter-wave plate: psi = QWP(angle)^dag (cos t, sin t). Without the
    plate this is the linear projector itself; with the plate at 0 deg and
    the polarizer at +/-45 deg it is a circular projector.
    """
    if party == "A":
        ps = setting.party_a
    elif party == "B":
        ps = setting.party_b
    else:
        raise ValueError(f"party must be 'A' or 'B', got {party!r}")
    ket = np.array(
        [math.cos(ps.polarizer_angle), math.sin(ps.polarizer_angle)], dtype=complex
    )
    if ps.qwp_in:
        ket = jones(WaveplateSpec("quarter", ps.qwp_angle)).conj().T @ ket
    return np.outer(ket, ket.conj())


def _eigenstate_settings() -> list[PartySetting]:
    """Analyzer positions for the six single-photon basis states.

    Order: H, V, D, A, R, L. The circular pair uses the quarter-wave plate
    at 0 deg with the polarizer at 45 deg / 135 deg.
    """
    return [
        PartySetting(0.0),
        PartySetting(math.pi / 2),
        PartySetting(math.pi / 4),
        PartySetting(3 * math.pi / 4),
        PartySetting(math.pi / 4, qwp_in=True, qwp_angle=0.0),
        PartySetting(3 * math.pi / 4, qwp_in=True, qwp_angle=0.0),
    ]


def standard_settings() -> list[MeasurementSetting]:
    """The 36 coincidence settings pairing the six basis states per photon.

    Overcomplete on purpose: the 36 product projectors span the full
    two-qubit operator space, so both estimators below are well posed.
    """
    singles = _eigenstate_settings()
    return [
        MeasurementSetting(a, b) for a in singles for b in singles
    ]


def setting_projectors(settings: Sequence[MeasurementSetting]) -> np.ndarray:
    """Stacked coincidence projectors Pi_A x Pi_B, shape (n, 4, 4)."""
    mats = [
        np.kron(projector(s, "A"), projector(s, "B")) for s in settings
    ]
    return np.stack(mats)


def expected_probabilities(
    rho: DensityMatrix, settings: Sequence[MeasurementSetting]
) -> np.ndarray:
    """tr(rho Pi_j) for every setting."""
    if rho.dim != 4:
        raise ValueError(f"tomography operates on two qubits, got dim {rho.dim}")
    pis = setting_projectors(settings)
    probs = np.einsum("jab,ba->j", pis, rho.data).real
    # roundoff can leave probabilities a few ulp below zero
    return np.clip(probs, 0.0, None)


@dataclass(frozen=True)
class CountData:
    """Coincidence counts for a list of settings.

    ``counts`` are nonnegative; Poisson-sampled data is integer valued while
    the analytic mode stores exact expected counts, which are generally not
    integers. ``seed`` records the stream that generated sampled data (0
    for analytic data).
    """

    settings: tuple[MeasurementSetting, ...]
    counts: np.ndarray
    pairs_per_setting: int
    seed: int = 0

    def __post_init__(self) -> None:
        settings = tuple(self.settings)
        counts = np.array(self.counts, dtype=float, copy=True)
        if counts.ndim != 1 or counts.shape[0] != len(settings):
            raise ValueError(
                f"counts shape {counts.shape} does not match {len(settings)} settings"
            )
        if not settings:
            raise ValueError("count data needs at least one setting")
        if counts.min() < 0.0:
            raise ValueError(f"negative count: {counts.min()}")
        if int(self.pairs_per_setting) <= 0:
            raise ValueError(
                f"pairs_per_setting must be positive, got {self.pairs_per_setting}"
            )
        # A coincidence rate 50x above the per-setting flux means the
        # simulation inputs are inconsistent, not just unlucky.
        if counts.max() > 50.0 * self.pairs_per_setting:
            raise ValueError(
                f"count {counts.max()} exceeds 50 * pairs_per_setting, "
                "inputs are inconsistent"
            )
        counts.setflags(write=False)
        object.__setattr__(self, "settings", settings)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "pairs_per_setting", int(self.pairs_per_setting))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / float(self.pairs_per_setting)


def _setting_stream(seed: int, index: int) -> np.random.Generator:
    """Independent substream for one setting, stable under reordering."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def simulate_counts(
    rho: DensityMatrix,
    settings: Sequence[MeasurementSetting],
    pairs_per_setting: int = DEFAULT_PAIRS_PER_SETTING,
    seed: int = 0,
) -> CountData:
    """Poisson coincidence counts, one counter-based substream per setting."""
    probs = expected_probabilities(rho, settings)
    counts = np.array(
        [
            float(_setting_stream(seed, j).poisson(pairs_per_setting * p))
            for j, p in enumerate(probs)
        ]
    )
    return CountData(tuple(settings), counts, pairs_per_setting, seed=seed)


def analytic_counts(
    rho: DensityMatrix,
    settings: Sequence[MeasurementSetting],
    pairs_per_setting: int = DEFAULT_PAIRS_PER_SETTING,
) -> CountData:
    """Exact expected counts, the zero-noise limit of :func:`simulate_counts`."""
    probs = expected_probabilities(rho, settings)
    return CountData(
        tuple(settings), pairs_per_setting * probs, pairs_per_setting, seed=0
    )


def counts_to_csv(data: CountData, path) -> None:
    """Write counts as CSV; angles in degrees with six decimals."""
    lines = [_CSV_HEADER]
    for j, (setting, count) in enumerate(zip(data.settings, data.counts)):
        a, b = setting.party_a, setting.party_b
        cnt = f"{int(count)}" if float(count).is_integer() else f"{count:.17g}"
        lines.append(
            f"{j},{math.degrees(a.polarizer_angle):.6f},{int(a.qwp_in)},"
            f"{math.degrees(a.qwp_angle):.6f},{math.degrees(b.polarizer_angle):.6f},"
            f"{int(b.qwp_in)},{math.degrees(b.qwp_angle):.6f},{cnt}"
        )
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def counts_from_csv(path, pairs_per_setting: int, seed: int = 0) -> CountData:
    """Read counts written by :func:`counts_to_csv`.

    The flux and seed are not part of the CSV payload and must be supplied.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != _CSV_HEADER:
        raise ValueError(f"unexpected CSV header: {lines[0] if lines else ''!r}")
    settings = []
    counts = []
    for ln in lines[1:]:
        cols = ln.split(",")
        if len(cols) != 8:
            raise ValueError(f"expected 8 columns, got {len(cols)}: {ln!r}")
        settings.append(
            MeasurementSetting(
                PartySetting(
                    math.radians(float(cols[1])), bool(int(cols[2])),
                    math.radians(float(cols[3])),
                ),
                PartySetting(
                    math.radians(float(cols[4])), bool(int(cols[5])),
                    math.radians(float(cols[6])),
                ),
            )
        )
        counts.append(float(cols[7]))
    return CountData(tuple(settings), np.array(counts), pairs_per_setting, seed=seed)


@dataclass(frozen=True)
class ReconstructionResult:
    """A fitted state plus bookkeeping about how the fit went.

    ``loglike`` is sum(n_j log p_j) at the returned state (natural log,
    constant terms dropped); ``loglike_history`` tracks it across the
    iterations for the iterative method and has a single entry for linear
    inversion. ``floor_hits`` counts probability evaluations caught by the
    floor that keeps the likelihood finite.
    """

    rho: DensityMatrix
    method: str
    iterations: int
    loglike: float
    converged: bool
    floor_hits: int = 0
    loglike_history: tuple[float, ...] = ()


def _loglike(counts: np.ndarray, probs: np.ndarray) -> float:
    p = np.clip(probs, PROBABILITY_FLOOR, None)
    mask = counts > 0.0
    return float(np.sum(counts[mask] * np.log(p[mask])))


def linear_inversion(data: CountData) -> ReconstructionResult:
    """Least-squares state estimate, projected back onto physical states.

    Solves min ||A vec(rho) - f||_2 over all matrices, then Hermitizes,
    clips negative eigenvalues to zero, and renormalizes the trace. Exact
    on noiseless data; on sampled data the projection step is what keeps
    the estimate physical.
    """
    pis = setting_projectors(data.settings)
    design = pis.transpose(0, 2, 1).reshape(len(data.settings), 16)
    if np.linalg.matrix_rank(design) < 16:
        raise ValueError(
            "settings do not span the operator space, reconstruction is "
            "underdetermined"
        )
    sol, *_ = np.linalg.lstsq(design, data.frequencies.astype(complex), rcond=None)
    raw = sol.reshape(4, 4)
    raw = 0.5 * (raw + raw.conj().T)
    eigvals, eigvecs = np.linalg.eigh(raw)
    eigvals = np.clip(eigvals, 0.0, None)
    total = eigvals.sum()
    if total <= 0.0:
        raise ValueError("reconstruction collapsed to the zero matrix")
    rho = DensityMatrix((eigvecs * (eigvals / total)) @ eigvecs.conj().T)
    probs = expected_probabilities(rho, data.settings)
    ll = _loglike(data.counts, probs)
    return ReconstructionResult(
        rho=rho,
        method="linear",
        iterations=1,
        loglike=ll,
        converged=True,
        floor_hits=int(np.sum(probs < PROBABILITY_FLOOR)),
        loglike_history=(ll,),
    )


def mle_reconstruct(
    data: CountData,
    tol: float = MLE_DEFAULT_TOL,
    max_iter: int = MLE_DEFAULT_MAX_ITER,
) -> ReconstructionResult:
    """Iterative maximum-likelihood reconstruction.

    Fixed-point iteration rho -> N[R rho R] with
    R = sum_j (f_j / p_j) Pi_j, started from the maximally mixed state and
    stopped when the trace distance between successive iterates drops to
    ``tol`` or ``max_iter`` is reached. Probabilities are floored at
    PROBABILITY_FLOOR so empty settings cannot blow up the weights.
    """
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be at least 1, got {max_iter}")
    pis = setting_projectors(data.settings)
    freqs = data.frequencies
    counts = data.counts
    rho = np.eye(4, dtype=complex) / 4.0
    floor_hits = 0
    history = []
    converged = False
    iterations = 0
    probs = np.einsum("jab,ba->j", pis, rho).real
    history.append(_loglike(counts, probs))
    for iterations in range(1, max_iter + 1):
        floored = np.clip(probs, PROBABILITY_FLOOR, None)
        floor_hits += int(np.sum(probs < PROBABILITY_FLOOR))
        r_op = np.einsum("j,jab->ab", freqs / floored, pis)
        new = r_op @ rho @ r_op
        new = 0.5 * (new + new.conj().T)
        new /= new.trace().real
        delta = 0.5 * np.abs(np.linalg.eigvalsh(new - rho)).sum()
        rho = new
        probs = np.einsum("jab,ba->j", pis, rho).real
        history.append(_loglike(counts, probs))
        if delta <= tol:
            converged = True
            break
    return ReconstructionResult(
        rho=DensityMatrix(rho),
        method="mle",
        iterations=iterations,
        loglike=history[-1],
        converged=converged,
        floor_hits=floor_hits,
        loglike_history=tuple(history),
    )


def _reconstruct(data: CountData, method: str, **mle_opts) -> ReconstructionResult:
    if method == "mle":
        return mle_reconstruct(data, **mle_opts)
    if method == "linear":
        return linear_inversion(data)
    raise ValueError(f"method must be 'mle' or 'linear', got {method!r}")


@dataclass(frozen=True)
class ChshAngles:
    """Analyzer angles (radians) for the four CHSH correlators.

    Measurement operators are sigma(theta) = cos(2 theta) Z + sin(2 theta) X,
    i.e. linear-polarization analyzers rotated in the H/V great circle. The
    defaults are the optimal settings for a |HH>+|VV> target.
    """

    alpha: float = 0.0
    alpha_prime: float = math.pi / 4
    beta: float = math.pi / 8
    beta_prime: float = 3 * math.pi / 8


DEFAULT_CHSH_ANGLES = ChshAngles()


def _analyzer(theta: float) -> np.ndarray:
    return math.cos(2 * theta) * PAULI_Z + math.sin(2 * theta) * PAULI_X


def chsh_value(rho: DensityMatrix, angles: ChshAngles = DEFAULT_CHSH_ANGLES) -> float:
    """CHSH combination E(a,b) - E(a,b') + E(a',b) + E(a',b')."""
    if rho.dim != 4:
        raise ValueError(f"CHSH needs a two-qubit state, got dim {rho.dim}")

    def corr(ta: float, tb: float) -> float:
        op = np.kron(_analyzer(ta), _analyzer(tb))
        return float(np.einsum("ab,ba->", op, rho.data).real)

    return (
        corr(angles.alpha, angles.beta)
        - corr(angles.alpha, angles.beta_prime)
        + corr(angles.alpha_prime, angles.beta)
        + corr(angles.alpha_prime, angles.beta_prime)
    )


_TSIRELSON = 2.0 * math.sqrt(2.0)


@dataclass(frozen=True)
class MetricsReport:
    """Point estimates and bootstrap uncertainties of the headline metrics.

    Fidelity is against the |HH>+|VV> Bell target; the CHSH value uses the
    angles the report was built with (defaults unless stated otherwise).
    """

    fidelity: float
    fidelity_sigma: float
    concurrence: float
    concurrence_sigma: float
    purity: float
    purity_sigma: float
    s_value: float
    s_value_sigma: float
    n_samples: int
    n_failed: int = 0

    def __post_init__(self) -> None:
        for name in ("fidelity", "concurrence", "purity"):
            val = getattr(self, name)
            if not -1e-9 <= val <= 1.0 + 1e-9:
                raise ValueError(f"{name} = {val} outside [0, 1]")
        for name in (
            "fidelity_sigma",
            "concurrence_sigma",
            "purity_sigma",
            "s_value_sigma",
        ):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")
        slack = 3.0 * self.s_value_sigma + 1e-9
        if abs(self.s_value) > _TSIRELSON + slack:
            raise ValueError(
                f"CHSH value {self.s_value} exceeds the quantum bound "
                f"{_TSIRELSON} beyond tolerance"
            )

    def as_dict(self) -> dict:
        return {
            "fidelity": self.fidelity,
            "fidelity_sigma": self.fidelity_sigma,
            "concurrence": self.concurrence,
            "concurrence_sigma": self.concurrence_sigma,
            "purity": self.purity,
            "purity_sigma": self.purity_sigma,
            "s_value": self.s_value,
            "s_value_sigma": self.s_value_sigma,
            "n_samples": self.n_samples,
            "n_failed": self.n_failed,
        }


def _metric_vector(rho: DensityMatrix, angles: ChshAngles) -> np.ndarray:
    return np.array(
        [
            fidelity_to(rho, PHI_PLUS_KET),
            concurrence(rho),
            purity(rho),
            chsh_value(rho, angles),
        ]
    )


def monte_carlo_metrics(
    data: CountData,
    n_samples: int = 100,
    seed: int = 0,
    method: str = "mle",
    angles: ChshAngles = DEFAULT_CHSH_ANGLES,
    resample: bool = True,
    point_result: ReconstructionResult | None = None,
    **mle_opts,
) -> MetricsReport:
    """Metrics with parametric-bootstrap error bars.

    Point values come from reconstructing the original counts; sigmas are
    standard deviations over ``n_samples`` reconstructions of counts
    resampled as Poisson(observed). With ``resample=False`` (the analytic,
    zero-noise path) every sample is identical and all sigmas are exactly 0.
    Samples whose reconstruction fails are dropped; more than 10% failures
    aborts the report.
    """
    if n_samples < 10:
        raise ValueError(f"n_samples must be at least 10, got {n_samples}")
    if point_result is None:
        point_result = _reconstruct(data, method, **mle_opts)
    point = _metric_vector(point_result.rho, angles)
    failed = 0
    if resample:
        rows = []
        for s in range(n_samples):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=seed, spawn_key=(s,))
            )
            resampled = rng.poisson(data.counts).astype(float)
            try:
                sample = CountData(
                    data.settings, resampled, data.pairs_per_setting, seed=data.seed
                )
                result = _reconstruct(sample, method, **mle_opts)
            except (ValueError, np.linalg.LinAlgError):
                failed += 1
                continue
            rows.append(_metric_vector(result.rho, angles))
        if failed > 0.1 * n_samples:
            raise RuntimeError(
                f"{failed}/{n_samples} bootstrap reconstructions failed"
            )
        sigmas = np.std(np.stack(rows), axis=0, ddof=1)
    else:
        sigmas = np.zeros(4)
    return MetricsReport(
        fidelity=float(point[0]),
        fidelity_sigma=float(sigmas[0]),
        concurrence=float(point[1]),
        concurrence_sigma=float(sigmas[1]),
        purity=float(point[2]),
        purity_sigma=float(sigmas[2]),
        s_value=float(point[3]),
        s_value_sigma=float(sigmas[3]),
        n_samples=n_samples if resample else 0,
        n_failed=failed,
    )
