"""Class-specific surrogate patterns: generators, validation and bitmap files."""
import logging
import re
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.exceptions import (
    ConfigurationError,
    GenerationError,
    MalformedPatternFileError,
    NonBinaryPatternError,
    NonSquarePatternError,
)
from utils.file_io import PathLike, atomic_write_text

logger = logging.getLogger(__name__)

PATTERN_KINDS = ("orthogonal", "glyph", "symbol", "custom")
FILL_RETRIES = 1000

# 8x8 digit font, most significant bit leftmost; upscaled 2x into the 16x16 bank.
_DIGIT_FONT = (
    (0x7C, 0xC6, 0xCE, 0xDE, 0xF6, 0xE6, 0x7C, 0x00),  # 0
    (0x30, 0x70, 0x30, 0x30, 0x30, 0x30, 0xFC, 0x00),  # 1
    (0x78, 0xCC, 0x0C, 0x38, 0x60, 0xCC, 0xFC, 0x00),  # 2
    (0x78, 0xCC, 0x0C, 0x38, 0x0C, 0xCC, 0x78, 0x00),  # 3
    (0x1C, 0x3C, 0x6C, 0xCC, 0xFE, 0x0C, 0x1E, 0x00),  # 4
    (0xFC, 0xC0, 0xF8, 0x0C, 0x0C, 0xCC, 0x78, 0x00),  # 5
    (0x38, 0x60, 0xC0, 0xF8, 0xCC, 0xCC, 0x78, 0x00),  # 6
    (0xFC, 0xCC, 0x0C, 0x18, 0x30, 0x30, 0x30, 0x00),  # 7
    (0x78, 0xCC, 0xCC, 0x78, 0xCC, 0xCC, 0x78, 0x00),  # 8
    (0x78, 0xCC, 0xCC, 0x7C, 0x0C, 0x18, 0x70, 0x00),  # 9
)
GLYPH_SIDE = 16


def _digit_bank() -> np.ndarray:
    rows = np.array(_DIGIT_FONT, dtype=np.uint8)[..., None]
    bits = np.unpackbits(rows, axis=-1)  # (10, 8, 8), MSB first
    return bits.repeat(2, axis=1).repeat(2, axis=2)


DIGIT_BANK = _digit_bank()


@dataclass(frozen=True)
class Pattern:
    """One side x side binary bitmap assigned to ``class_id``."""

    side: int
    bits: np.ndarray
    class_id: int

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.size != self.side * self.side:
            raise ConfigurationError(f"pattern has {bits.size} bits, expected {self.side}x{self.side}")
        if not np.all((bits == 0) | (bits == 1)):
            raise ConfigurationError("pattern bits must be 0 or 1")
        bits = bits.astype(np.uint8).ravel()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def m(self) -> int:
        return self.side * self.side

    def image(self) -> np.ndarray:
        return self.bits.reshape(self.side, self.side)


class PatternSet:
    """
    K patterns, one per class id 0..K-1, all of the same size.

    ``kind`` is one of orthogonal, glyph, symbol or custom. Orthogonal sets are
    checked for zero pairwise dot products.
    """

    def __init__(self, patterns: Sequence[Pattern], kind: str):
        if kind not in PATTERN_KINDS:
            raise ConfigurationError(f"unknown pattern kind '{kind}'")
        patterns = list(patterns)
        if len(patterns) < 1:
            raise ConfigurationError("a pattern set needs at least one pattern")
        if [p.class_id for p in patterns] != list(range(len(patterns))):
            raise ConfigurationError("patterns must cover class ids 0..K-1 in order")
        if len({p.side for p in patterns}) != 1:
            raise ConfigurationError("all patterns must share one size")
        self.patterns: Tuple[Pattern, ...] = tuple(patterns)
        self.kind = kind
        matrix = np.stack([p.bits for p in patterns]).astype(np.float64)
        matrix.setflags(write=False)
        self.matrix = matrix
        if kind == "orthogonal":
            dots = self.matrix @ self.matrix.T
            if np.any(dots[~np.eye(self.K, dtype=bool)] != 0):
                raise ConfigurationError("orthogonal pattern set has overlapping patterns")

    @property
    def K(self) -> int:
        return len(self.patterns)

    @property
    def side(self) -> int:
        return self.patterns[0].side

    @property
    def m(self) -> int:
        return self.side * self.side

    @property
    def identifier(self) -> str:
        digest = zlib.crc32(np.packbits(self.matrix.astype(np.uint8)).tobytes())
        return f"{self.kind}-K{self.K}-s{self.side}-{digest:08x}"

    def __getitem__(self, class_id: int) -> Pattern:
        return self.patterns[class_id]

    def __len__(self) -> int:
        return self.K

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PatternSet)
            and self.kind == other.kind
            and self.matrix.shape == other.matrix.shape
            and np.array_equal(self.matrix, other.matrix)
        )

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, kind: str) -> "PatternSet":
        matrix = np.asarray(matrix)
        side = int(round(np.sqrt(matrix.shape[1])))
        return cls([Pattern(side, row, k) for k, row in enumerate(matrix)], kind)


def _check_side(side: int) -> int:
    if side < 1:
        raise ConfigurationError("pattern side must be positive")
    return side * side


def gen_orthogonal(K: int, side: int) -> PatternSet:
    """
    Disjoint-support patterns: class k lights indices [k*m/K, (k+1)*m/K).

    Args:
        K: Number of classes
        side: Bitmap side (m = side**2)

    Returns:
        Orthogonal PatternSet with m/K bright pixels per pattern
    """
    m = _check_side(side)
    if K < 1 or K > m:
        raise ConfigurationError(f"cannot place {K} orthogonal patterns in {m} pixels")
    if m % K:
        raise ConfigurationError(f"m={m} is not divisible by K={K}; choose another side or pattern kind")
    block = m // K
    patterns = []
    for k in range(K):
        bits = np.zeros(m, dtype=np.uint8)
        bits[k * block : (k + 1) * block] = 1
        patterns.append(Pattern(side, bits, k))
    if block < 8:
        logger.warning("orthogonal patterns with K=%d, m=%d have only %d bright pixels each", K, m, block)
    return PatternSet(patterns, "orthogonal")


def _resample(bitmap: np.ndarray, side: int) -> np.ndarray:
    """Nearest-neighbour rescale of a square bitmap to side x side."""
    source = bitmap.shape[0]
    index = (np.arange(side) * source) // side
    return bitmap[np.ix_(index, index)]


def gen_glyph_digits(K: int, side: int) -> PatternSet:
    """
    Patterns rendering the decimal digits 0..K-1 from the built-in bank.

    Args:
        K: Number of classes (<= 10)
        side: Bitmap side (>= 8)

    Returns:
        Glyph PatternSet
    """
    if K > len(DIGIT_BANK):
        raise ConfigurationError(f"only {len(DIGIT_BANK)} digit glyphs exist, K={K} requested")
    if side < 8:
        raise ConfigurationError("digit glyphs need side >= 8")
    patterns = [Pattern(side, _resample(DIGIT_BANK[k], side), k) for k in range(K)]
    return PatternSet(patterns, "glyph")


def _grid(side: int) -> Tuple[np.ndarray, np.ndarray]:
    coords = (np.arange(side) + 0.5) / side - 0.5
    v, u = np.meshgrid(coords, coords, indexing="ij")
    return u, v


def _bands(side: int, axis: int) -> np.ndarray:
    index = np.arange(side) * 4 // side
    band = index % 2 == 0
    return np.broadcast_to(band[:, None] if axis == 0 else band[None, :], (side, side))


SYMBOLS: Dict[str, Callable[[int], np.ndarray]] = {
    "cross": lambda s: (np.abs(_grid(s)[0]) < 0.125) | (np.abs(_grid(s)[1]) < 0.125),
    "square": lambda s: (np.abs(_grid(s)[0]) < 0.3) & (np.abs(_grid(s)[1]) < 0.3),
    "circle": lambda s: np.abs(np.hypot(*_grid(s)) - 0.35) < 0.1,
    "triangle": lambda s: (np.abs(_grid(s)[1]) <= 0.4) & (np.abs(_grid(s)[0]) <= 0.5625 * (_grid(s)[1] + 0.4)),
    "hbars": lambda s: _bands(s, 0),
    "vbars": lambda s: _bands(s, 1),
    "checker": lambda s: (_bands(s, 0) ^ _bands(s, 1)) == 0,
    "xmark": lambda s: (np.abs(_grid(s)[0] - _grid(s)[1]) < 0.1) | (np.abs(_grid(s)[0] + _grid(s)[1]) < 0.1),
}


def render_symbol(name: str, side: int) -> np.ndarray:
    """Render bank symbol ``name`` as a side x side uint8 bitmap."""
    if name not in SYMBOLS:
        raise ConfigurationError(f"unknown symbol '{name}'")
    return np.asarray(SYMBOLS[name](side), dtype=np.uint8)


def gen_symbols(K: int, side: int, seed: int, min_distance: Optional[int] = None) -> PatternSet:
    """
    Non-orthogonal visual symbols, padded with seeded random patterns.

    Bank symbols are taken in order and skipped when they are closer than
    ``min_distance`` (Hamming) to an already chosen pattern; the rest are
    random binary patterns with 50% density.

    Args:
        K: Number of classes (>= 2)
        side: Bitmap side
        seed: Seed for the random fill
        min_distance: Minimum pairwise Hamming distance; defaults to m // 8

    Returns:
        Symbol PatternSet
    """
    if K < 2:
        raise ConfigurationError("symbol sets need K >= 2")
    m = _check_side(side)
    if min_distance is None:
        min_distance = m // 8
    chosen: List[np.ndarray] = []

    def far_enough(candidate: np.ndarray) -> bool:
        if not candidate.any():
            return False
        return all(np.count_nonzero(candidate != other) >= min_distance for other in chosen)

    for name in SYMBOLS:
        if len(chosen) == K:
            break
        bitmap = render_symbol(name, side).ravel()
        if far_enough(bitmap):
            chosen.append(bitmap)
        else:
            logger.debug("symbol '%s' skipped at side %d: too close to earlier symbols", name, side)

    rng = np.random.default_rng(seed)
    retries = 0
    while len(chosen) < K:
        candidate = (rng.random(m) < 0.5).astype(np.uint8)
        if far_enough(candidate):
            chosen.append(candidate)
            continue
        retries += 1
        if retries > FILL_RETRIES:
            raise GenerationError(
                f"could not find {K} patterns of {m} pixels with Hamming distance >= {min_distance}"
            )
    return PatternSet([Pattern(side, bits, k) for k, bits in enumerate(chosen)], "symbol")


_COMMENT = re.compile(r"#[^\n]*")


def parse_pbm(text: str, source: str = "<pattern>") -> np.ndarray:
    """
    Parse a plain-text portable bitmap (P1) holding a square pattern.

    Args:
        text: File contents
        source: Name used in error messages

    Returns:
        side x side uint8 array (1 = bright)
    """
    tokens = _COMMENT.sub(" ", text).split()
    if len(tokens) < 3 or tokens[0] != "P1":
        raise MalformedPatternFileError(f"{source}: expected a P1 header with width and height")
    try:
        width, height = int(tokens[1]), int(tokens[2])
    except ValueError:
        raise MalformedPatternFileError(f"{source}: width/height are not integers") from None
    if width <= 0 or height <= 0:
        raise MalformedPatternFileError(f"{source}: width/height must be positive")
    if width != height:
        raise NonSquarePatternError(f"{source}: non-square pattern {width}x{height}")
    pixels = "".join(tokens[3:])
    if not pixels.isdigit() and pixels:
        raise MalformedPatternFileError(f"{source}: pixel data contains non-digit characters")
    if set(pixels) - {"0", "1"}:
        raise NonBinaryPatternError(f"{source}: pixel values must be 0 or 1")
    if len(pixels) != width * height:
        raise MalformedPatternFileError(f"{source}: expected {width * height} pixels, found {len(pixels)}")
    return np.frombuffer(pixels.encode("ascii"), dtype=np.uint8).reshape(height, width) - ord("0")


def load_pattern_file(path: PathLike, class_id: int = 0) -> Pattern:
    """Load a P1 bitmap as the pattern of ``class_id``."""
    path = Path(path)
    bitmap = parse_pbm(path.read_text(encoding="ascii", errors="replace"), str(path))
    return Pattern(bitmap.shape[0], bitmap, class_id)


def format_pbm(pattern: Pattern) -> str:
    rows = [" ".join(str(int(b)) for b in row) for row in pattern.image()]
    return f"P1\n{pattern.side} {pattern.side}\n" + "\n".join(rows) + "\n"


def save_pattern_file(pattern: Pattern, path: PathLike) -> Path:
    """Write ``pattern`` as a plain-text P1 bitmap."""
    return atomic_write_text(path, format_pbm(pattern))


def save_pattern_set(patterns: PatternSet, directory: PathLike) -> List[Path]:
    """Write ``pattern_<k>.pbm`` for every class."""
    directory = Path(directory)
    return [save_pattern_file(p, directory / f"pattern_{p.class_id}.pbm") for p in patterns.patterns]


def load_pattern_set(directory: PathLike, K: int) -> PatternSet:
    """Read ``pattern_0.pbm`` .. ``pattern_<K-1>.pbm`` as a custom set."""
    directory = Path(directory)
    patterns = []
    for k in range(K):
        path = directory / f"pattern_{k}.pbm"
        if not path.exists():
            raise ConfigurationError(f"custom pattern file {path} is missing")
        patterns.append(load_pattern_file(path, class_id=k))
    return PatternSet(patterns, "custom")


@dataclass(frozen=True)
class PatternStats:
    """Pairwise dot products, Hamming distances and densities of a set."""

    dot: np.ndarray
    hamming: np.ndarray
    density: np.ndarray

    def to_dict(self) -> Dict:
        return {
            "dot": self.dot.tolist(),
            "hamming": self.hamming.tolist(),
            "density": [float(d) for d in self.density],
        }


def hamming_matrix(patterns: PatternSet) -> np.ndarray:
    bits = patterns.matrix.astype(np.int64)
    return (bits[:, None, :] != bits[None, :, :]).sum(axis=2)


def pairwise_stats(patterns: PatternSet) -> PatternStats:
    """
    Similarity summary of a pattern set.

    Returns:
        Symmetric K x K integer dot products, Hamming distances, and per-pattern
        density (bright count / m)
    """
    bits = patterns.matrix.astype(np.int64)
    return PatternStats(
        dot=bits @ bits.T,
        hamming=hamming_matrix(patterns),
        density=bits.sum(axis=1) / patterns.m,
    )


def build_pattern_set(
    kind: str,
    K: int,
    side: int,
    seed: int = 0,
    directory: Optional[PathLike] = None,
    min_distance: Optional[int] = None,
) -> PatternSet:
    """Dispatch to the generator for ``kind`` (custom reads ``directory``)."""
    if kind == "orthogonal":
        return gen_orthogonal(K, side)
    if kind == "glyph":
        return gen_glyph_digits(K, side)
    if kind == "symbol":
        return gen_symbols(K, side, seed, min_distance=min_distance)
    if kind == "custom":
        if directory is None:
            raise ConfigurationError("custom patterns need a directory of P1 files")
        patterns = load_pattern_set(directory, K)
        if patterns.side != side:
            raise ConfigurationError(f"custom patterns are {patterns.side}x{patterns.side}, expected side {side}")
        return patterns
    raise ConfigurationError(f"unknown pattern kind '{kind}'")
