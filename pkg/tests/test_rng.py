import numpy as np
import pytest

from eiglab.rng import RngStream


def test_same_identity_reproduces_sequence():
    a = RngStream(42, 7).generator.standard_normal(16)
    b = RngStream(42, 7).generator.standard_normal(16)
    assert np.array_equal(a, b)


def test_distinct_streams_differ():
    a = RngStream(42, 0).generator.standard_normal(16)
    b = RngStream(42, 1).generator.standard_normal(16)
    c = RngStream(43, 0).generator.standard_normal(16)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_child_streams_are_stable_and_labelled():
    base = RngStream(1, 2)
    assert base.child("outer").stream_id == base.child("outer").stream_id
    assert base.child("outer").stream_id != base.child("inner").stream_id
    assert base.child("rep", 3).stream_id != base.child("rep", 4).stream_id
    # nesting matters
    assert base.child("a", "b").stream_id != base.child("b", "a").stream_id


def test_child_does_not_consume_parent():
    base = RngStream(5)
    _ = base.child("x")
    a = base.generator.standard_normal(4)
    b = RngStream(5).generator.standard_normal(4)
    assert np.array_equal(a, b)


def test_child_rejects_bad_keys():
    with pytest.raises(TypeError):
        RngStream(0).child(1.5)
    with pytest.raises(ValueError):
        RngStream(0).child()


def test_many_children_have_no_collisions():
    base = RngStream(123)
    ids = {base.child("rep", i).stream_id for i in range(20000)}
    assert len(ids) == 20000
