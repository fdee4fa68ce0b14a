import numpy as np
import pytest

from textspotter.decode import connected_components, pixel_voting, run_pipeline
from textspotter.geometry import Rect, ScoredBox, polygon_iou
from textspotter.maps import BACKGROUND_CHANNEL, GLOBAL_CHANNEL, MaskStack
from textspotter.synth import (
    NoiseSpec,
    PlacementError,
    build_scene,
    corrupt,
    layout_chars,
    make_rng,
    make_word,
    random_lexicon,
    render_stack,
)

LEX = ["spot", "text", "mask", "pixel", "vote", "lexicon", "word"]


def test_single_char_word():
    stack = render_stack(make_word("x", Rect(40, 40, 52, 60)))
    regions = connected_components(stack.background < 0.5)
    assert len(regions) == 1
    text, table = pixel_voting(stack)
    assert text == "x" and len(table) == 1


def test_spotting_word_roundtrip():
    stack = render_stack(make_word("Spotting", Rect(0, 0, 160, 30)))
    assert pixel_voting(stack)[0] == "spotting"


def test_render_channel_relations():
    stack = render_stack(make_word("ab1", Rect(10, 10, 70, 30)))
    d = stack.data
    assert np.array_equal(d[BACKGROUND_CHANNEL], 1 - d[1:37].max(axis=0))
    assert set(np.unique(d[GLOBAL_CHANNEL])) == {0.0, 1.0}
    # character pixels lie inside the word region
    assert np.all(d[GLOBAL_CHANNEL][d[1:37].max(axis=0) > 0] == 1)


def test_bad_words_rejected():
    with pytest.raises(ValueError):
        make_word("", Rect(0, 0, 10, 10))
    with pytest.raises(ValueError):
        make_word("a-b", Rect(0, 0, 10, 10))


def test_layout_is_equal_width_with_gap():
    boxes = layout_chars("abcd", Rect(0, 0, 43, 10))
    widths = [b.box.width for b in boxes]
    assert np.allclose(widths, 10)
    assert np.allclose([boxes[k + 1].box.xmin - boxes[k].box.xmax for k in range(3)], 1)
    assert boxes[-1].box.xmax == pytest.approx(43)


def test_corrupt_identity():
    stack = render_stack(make_word("same", Rect(0, 0, 80, 20)))
    assert corrupt(stack, NoiseSpec()) is stack
    assert corrupt(stack, NoiseSpec(sigma=0, swap_prob=0, seed=5)) == stack


def test_forced_swap_changes_symbol():
    stack = render_stack(make_word("k", Rect(0, 0, 12, 20)))
    for seed in range(10):
        out = corrupt(stack, NoiseSpec(swap_prob=1.0, seed=seed))
        text, _ = pixel_voting(out)
        assert len(text) == 1 and text != "k"


def test_corrupt_is_deterministic_and_valid():
    stack = render_stack(make_word("noise", Rect(0, 0, 100, 20)))
    noise = NoiseSpec(sigma=0.2, swap_prob=0.3, seed=42)
    a = corrupt(stack, noise, 1, 2)
    b = corrupt(stack, noise, 1, 2)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, corrupt(stack, noise, 1, 3).data)
    assert a.data.min() >= 0 and a.data.max() <= 1


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(sigma=-1)
    with pytest.raises(ValueError):
        NoiseSpec(swap_prob=1.5)


def test_rng_streams_are_reproducible():
    assert np.array_equal(make_rng(1, 2).random(5), make_rng(1, 2).random(5))
    assert not np.array_equal(make_rng(1, 2).random(5), make_rng(2, 1).random(5))


def test_scene_seed_7():
    scene = build_scene(7, 5, LEX)
    assert len(scene.gts) == 5
    out = run_pipeline(scene.candidates, scene.map_provider)
    assert sorted(s.text for s in out) == sorted(w.word for w in scene.words)
    for w in scene.words:
        r = w.rect
        assert 0 <= r.xmin and r.xmax <= scene.width and 0 <= r.ymin and r.ymax <= scene.height


def test_scene_is_deterministic():
    a = build_scene(11, 6, LEX, duplicates=1, noise=NoiseSpec(0.1, 0.1, 3))
    b = build_scene(11, 6, LEX, duplicates=1, noise=NoiseSpec(0.1, 0.1, 3))
    assert [w.word for w in a.words] == [w.word for w in b.words]
    assert a.candidates == b.candidates
    for ca, cb in zip(a.candidates, b.candidates):
        assert a.stack_for(ca) == b.stack_for(cb)


def test_empty_scene():
    scene = build_scene(1, 0, LEX)
    assert scene.gts == [] and scene.candidates == []
    assert run_pipeline(scene.candidates, scene.map_provider) == []


def test_duplicates_collapse():
    scene = build_scene(8, 6, LEX, duplicates=2)
    assert len(scene.candidates) == 18
    out = run_pipeline(scene.candidates, scene.map_provider)
    assert len(out) == 6


def test_zero_noise_roundtrip_polygons():
    scene = build_scene(12, 8, random_lexicon(1, size=40))
    out = run_pipeline(scene.candidates, scene.map_provider)
    by_text = {s.text: s for s in out}
    for w in scene.words:
        assert polygon_iou(by_text[w.word].polygon, w.polygon) >= 0.85


def test_placement_failure():
    with pytest.raises(PlacementError):
        build_scene(0, 50, ["abcdefghij"], image_size=(64, 64), max_retries=5)
    with pytest.raises(ValueError):
        build_scene(0, 1, [])


def test_random_lexicon():
    lex = random_lexicon(3, size=200)
    assert len(set(lex)) == 200
    assert all(3 <= len(w) <= 10 and w.isalpha() and w.islower() for w in lex)
    assert lex == random_lexicon(3, size=200)


def test_unknown_proposal_gets_empty_stack():
    scene = build_scene(2, 1, LEX)
    stack = scene.stack_for(ScoredBox(Rect(500, 500, 510, 510), 0.5))
    assert stack == MaskStack.empty()
