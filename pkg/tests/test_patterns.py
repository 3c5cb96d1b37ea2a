import numpy as np
import pytest

from utils.exceptions import (
    ConfigurationError,
    GenerationError,
    MalformedPatternFileError,
    NonBinaryPatternError,
    NonSquarePatternError,
)
from utils.patterns import (
    SYMBOLS,
    Pattern,
    PatternSet,
    build_pattern_set,
    format_pbm,
    gen_glyph_digits,
    gen_orthogonal,
    gen_symbols,
    hamming_matrix,
    load_pattern_file,
    load_pattern_set,
    pairwise_stats,
    parse_pbm,
    render_symbol,
    save_pattern_set,
)


def test_orthogonal_patterns_have_disjoint_blocks():
    patterns = gen_orthogonal(10, 10)
    dots = patterns.matrix @ patterns.matrix.T
    np.testing.assert_array_equal(dots, 10 * np.eye(10))
    assert patterns[3].bits[30:40].all()
    assert patterns[3].bits.sum() == 10


def test_orthogonal_needs_divisible_pixels():
    with pytest.raises(ConfigurationError):
        gen_orthogonal(3, 4)
    with pytest.raises(ConfigurationError):
        gen_orthogonal(17, 4)


def test_overlapping_orthogonal_set_is_rejected():
    bits = np.zeros(4, dtype=np.uint8)
    bits[0] = 1
    with pytest.raises(ConfigurationError):
        PatternSet([Pattern(2, bits, 0), Pattern(2, bits, 1)], "orthogonal")


def test_glyph_digits_are_distinct_and_resampled():
    patterns = gen_glyph_digits(10, 16)
    assert patterns.kind == "glyph"
    hamming = hamming_matrix(patterns)
    assert (hamming[~np.eye(10, dtype=bool)] > 0).all()
    assert gen_glyph_digits(4, 8).side == 8


def test_glyph_digit_limits():
    with pytest.raises(ConfigurationError):
        gen_glyph_digits(11, 16)
    with pytest.raises(ConfigurationError):
        gen_glyph_digits(4, 7)


def test_symbols_are_deterministic_and_far_apart():
    first = gen_symbols(10, 16, seed=5)
    second = gen_symbols(10, 16, seed=5)
    assert first == second
    assert first.identifier == second.identifier
    hamming = hamming_matrix(first)
    assert hamming[~np.eye(10, dtype=bool)].min() >= 256 // 8


def test_symbol_bank_comes_first():
    patterns = gen_symbols(len(SYMBOLS), 16, seed=0, min_distance=1)
    np.testing.assert_array_equal(patterns[0].bits, render_symbol("cross", 16).ravel())


def test_symbols_that_cannot_be_separated_fail():
    with pytest.raises(GenerationError):
        gen_symbols(6, 2, seed=0, min_distance=4)


def test_pattern_bits_must_be_binary():
    with pytest.raises(ConfigurationError):
        Pattern(2, np.array([0, 1, 2, 0]), 0)
    with pytest.raises(ConfigurationError):
        Pattern(3, np.zeros(4), 0)


def test_pattern_set_checks_class_order():
    bits = np.array([1, 0, 0, 0])
    with pytest.raises(ConfigurationError):
        PatternSet([Pattern(2, bits, 1)], "custom")


def test_parse_pbm_handles_comments_and_whitespace():
    text = "P1\n# a comment\n3 3\n1 0 1\n010\n  1 1 1\n"
    np.testing.assert_array_equal(parse_pbm(text), [[1, 0, 1], [0, 1, 0], [1, 1, 1]])


@pytest.mark.parametrize(
    "text,error",
    [
        ("P2\n2 2\n0 1 1 0\n", MalformedPatternFileError),
        ("P1\n2\n", MalformedPatternFileError),
        ("P1\nx 2\n0 1 1 0\n", MalformedPatternFileError),
        ("P1\n2 2\n0 1 1\n", MalformedPatternFileError),
        ("P1\n2 2\n0 1 1 0 1\n", MalformedPatternFileError),
        ("P1\n2 2\n0 a 1 0\n", MalformedPatternFileError),
        ("P1\n3 2\n0 1 1 0 1 0\n", NonSquarePatternError),
        ("P1\n2 2\n0 2 1 0\n", NonBinaryPatternError),
    ],
)
def test_parse_pbm_errors(text, error):
    with pytest.raises(error):
        parse_pbm(text)


def test_pattern_files_round_trip(tmp_path):
    patterns = gen_symbols(4, 8, seed=2)
    save_pattern_set(patterns, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == [f"pattern_{k}.pbm" for k in range(4)]
    loaded = load_pattern_set(tmp_path, 4)
    assert loaded.kind == "custom"
    np.testing.assert_array_equal(loaded.matrix, patterns.matrix)
    assert load_pattern_file(tmp_path / "pattern_2.pbm", class_id=2).class_id == 2


def test_format_pbm_writes_p1_header():
    text = format_pbm(Pattern(2, np.array([1, 0, 0, 1]), 0))
    assert text == "P1\n2 2\n1 0\n0 1\n"


def test_missing_custom_pattern_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_pattern_set(tmp_path, 2)


def test_pairwise_stats():
    stats = pairwise_stats(gen_orthogonal(4, 4))
    np.testing.assert_array_equal(stats.dot, 4 * np.eye(4))
    np.testing.assert_array_equal(stats.hamming, 8 * (1 - np.eye(4)))
    np.testing.assert_allclose(stats.density, 0.25)
    assert stats.to_dict()["density"] == [0.25] * 4


def test_build_pattern_set_dispatch(tmp_path):
    assert build_pattern_set("orthogonal", 4, 4).kind == "orthogonal"
    assert build_pattern_set("glyph", 3, 8).K == 3
    assert build_pattern_set("symbol", 3, 8, seed=1).kind == "symbol"
    save_pattern_set(gen_orthogonal(2, 2), tmp_path)
    assert build_pattern_set("custom", 2, 2, directory=tmp_path).K == 2
    with pytest.raises(ConfigurationError):
        build_pattern_set("custom", 2, 4, directory=tmp_path)
    with pytest.raises(ConfigurationError):
        build_pattern_set("custom", 2, 2)
    with pytest.raises(ConfigurationError):
        build_pattern_set("spiral", 2, 2)
