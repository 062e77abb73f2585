"""Frames, Gabor dictionaries and image total variation."""

from dataclasses import dataclass
from typing import Iterable, List, Tuple

import numpy as np
import scipy.linalg

FRAME_TOL = 1e-12
TIGHT_TOL = 1e-9


class FrameError(ValueError):
    """The atoms do not span the signal space."""


@dataclass(frozen=True, eq=False)
class Frame:
    atoms: np.ndarray
    lower_bound: float
    upper_bound: float
    tight: bool
    labels: Tuple[Tuple[int, int, str], ...] = ()

    @property
    def length(self) -> int:
        return self.atoms.shape[0]

    @property
    def size(self) -> int:
        return self.atoms.shape[1]


def frame_bounds(atoms, labels: Iterable[Tuple[int, int, str]] = ()) -> Frame:
    psi = np.array(atoms, dtype=float)
    if psi.ndim != 2:
        raise FrameError(f"Atoms must form a 2-D array, got shape {psi.shape}")
    l, p = psi.shape
    if p < l:
        raise FrameError(f"{p} atoms cannot span a space of dimension {l}")
    eig = scipy.linalg.eigvalsh(psi @ psi.T)
    lower, upper = float(eig[0]), float(eig[-1])
    if lower <= FRAME_TOL:
        raise FrameError(f"Atoms are rank deficient (smallest frame-operator eigenvalue {lower:.3e})")
    psi.setflags(write=False)
    return Frame(psi, lower, upper, upper - lower <= TIGHT_TOL * upper, tuple(labels))


def canonical_dual(F: Frame) -> np.ndarray:
    """(Psi Psi^T)^{-1} Psi; its columns reconstruct s from the analysis coefficients."""
    try:
        return scipy.linalg.solve(F.atoms @ F.atoms.T, F.atoms, assume_a='pos')
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise FrameError("Frame operator is numerically singular") from exc


def naimark_check(basis, keep_rows: Iterable[int]) -> Frame:
    """Rows of an orthonormal basis restricted to ``keep_rows`` form a Parseval frame."""
    basis = np.asarray(basis, dtype=float)
    rows = sorted(set(int(r) for r in keep_rows))
    if not rows:
        raise ValueError("Naimark selection must keep at least one row")
    if basis.ndim != 2 or basis.shape[0] != basis.shape[1]:
        raise ValueError(f"Naimark basis must be square, got shape {basis.shape}")
    if not np.allclose(basis @ basis.T, np.eye(basis.shape[0]), atol=1e-9):
        raise ValueError("Naimark basis is not orthonormal")
    if rows[0] < 0 or rows[-1] >= basis.shape[0]:
        raise ValueError(f"Row indices must lie in [0, {basis.shape[0]})")
    return frame_bounds(basis[rows, :])


def naimark_basis() -> np.ndarray:
    """Orthonormal basis of R^3 whose first two rows are the Mercedes-Benz frame."""
    return np.array([
        [0.0, -1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0)],
        [np.sqrt(2.0 / 3.0), -1.0 / np.sqrt(6.0), -1.0 / np.sqrt(6.0)],
        [1.0 / np.sqrt(3.0), 1.0 / np.sqrt(3.0), 1.0 / np.sqrt(3.0)],
    ])


def mercedes_benz_frame() -> Frame:
    return frame_bounds(naimark_basis()[:2])


@dataclass(frozen=True)
class GaborParams:
    length: int
    sigma: float
    time_step: int = 1
    freq_step: int = 1

    def __post_init__(self):
        if self.length < 1:
            raise ValueError(f"Gabor length must be positive, got {self.length}")
        if not self.sigma > 0:
            raise ValueError(f"Gabor window spread must be positive, got {self.sigma}")
        for name, step in (('time_step', self.time_step), ('freq_step', self.freq_step)):
            if step < 1 or self.length % step:
                raise ValueError(f"{name}={step} must be a positive divisor of length {self.length}")

    @property
    def guaranteed_frame(self) -> bool:
        return self.time_step * self.freq_step < self.length


def gabor_window(l: int, sigma: float) -> np.ndarray:
    """Gaussian centred at 0 with circular distance, scaled to unit norm."""
    n = np.arange(l)
    distance = np.minimum(n, l - n)
    g = np.exp(-distance.astype(float) ** 2 / (2.0 * sigma * sigma))
    return g / np.linalg.norm(g)


def gabor_dictionary(params: GaborParams) -> Frame:
    """Real Gabor atoms: cosine/sine pairs per frequency bin up to l/2.

    A pair (i, l - i) of complex atoms contributes the same frame operator as
    one cosine and one sine atom scaled by sqrt(2/l); bins 0 and l/2 keep only
    the cosine scaled by 1/sqrt(l). Phases are local to the window centre, so
    shifting m shifts the atom circularly.
    """
    l = params.length
    g = gabor_window(l, params.sigma)
    n = np.arange(l)
    local = np.where(n > l // 2, n - l, n)

    base: List[np.ndarray] = []
    kinds: List[Tuple[int, str]] = []
    for i in range(0, l // 2 + 1, params.freq_step):
        phase = 2.0 * np.pi * i * local / l
        if i == 0 or 2 * i == l:
            base.append(g * np.cos(phase) / np.sqrt(l))
            kinds.append((i, 'cos'))
        else:
            base.append(g * np.cos(phase) * np.sqrt(2.0 / l))
            kinds.append((i, 'cos'))
            base.append(g * np.sin(phase) * np.sqrt(2.0 / l))
            kinds.append((i, 'sin'))

    atoms = []
    labels = []
    for m in range(0, l, params.time_step):
        for atom, (i, kind) in zip(base, kinds):
            atoms.append(np.roll(atom, m))
            labels.append((m, i, kind))
    return frame_bounds(np.column_stack(atoms), labels)


def analysis(F: Frame, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape != (F.length,):
        raise ValueError(f"Signal length {s.size} does not match frame dimension {F.length}")
    return F.atoms.T @ s


def synthesis(F: Frame, coeffs) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (F.size,):
        raise ValueError(f"{coeffs.size} coefficients for a frame of {F.size} atoms")
    return F.atoms @ coeffs


def spectrogram(F: Frame, coeffs) -> np.ndarray:
    """Energy per (frequency bin, time shift) grid node, summing cosine and sine atoms."""
    if not F.labels:
        raise ValueError("Spectrogram needs a labelled Gabor frame")
    coeffs = np.asarray(coeffs, dtype=float)
    times = sorted({m for m, _, _ in F.labels})
    freqs = sorted({i for _, i, _ in F.labels})
    t_index = {m: j for j, m in enumerate(times)}
    f_index = {i: j for j, i in enumerate(freqs)}
    grid = np.zeros((len(freqs), len(times)))
    for value, (m, i, _) in zip(coeffs, F.labels):
        grid[f_index[i], t_index[m]] += value * value
    return grid


def coefficient_decay(coeffs) -> np.ndarray:
    return np.sort(np.abs(np.asarray(coeffs, dtype=float)))[::-1]


def chirp_signal(l: int, tone_bin: float = None) -> np.ndarray:
    """Linear chirp over the first two thirds plus a steady tone, unit peak."""
    n = np.arange(l, dtype=float)
    span = 2 * l // 3
    start, stop = l / 16.0, l / 4.0
    rate = (stop - start) / span
    envelope = np.exp(-0.5 * ((n - span / 2.0) / (span / 5.0)) ** 2)
    chirp = envelope * np.cos(2.0 * np.pi * (start * n + 0.5 * rate * n * n) / l)
    tone_bin = 3.0 * l / 8.0 if tone_bin is None else tone_bin
    tone_envelope = np.exp(-0.5 * ((n - 0.8 * l) / (l / 12.0)) ** 2)
    tone = 0.5 * tone_envelope * np.cos(2.0 * np.pi * tone_bin * n / l)
    signal = chirp + tone
    return signal / np.abs(signal).max()


@dataclass(frozen=True, eq=False)
class ImageGrid:
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=float)
        if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1]:
            raise ValueError(f"Image must be square, got shape {pixels.shape}")
        if pixels.shape[0] < 2:
            raise ValueError("Image side must be at least 2")
        object.__setattr__(self, 'pixels', pixels)


def discrete_gradient(img: ImageGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Forward differences down rows and across columns; the last row/column stay zero."""
    I = img.pixels
    grad_x = np.zeros_like(I)
    grad_y = np.zeros_like(I)
    grad_x[:-1, :] = I[1:, :] - I[:-1, :]
    grad_y[:, :-1] = I[:, 1:] - I[:, :-1]
    return grad_x, grad_y


def tv_norm(img: ImageGrid) -> float:
    grad_x, grad_y = discrete_gradient(img)
    return float(np.hypot(grad_x, grad_y).sum())
