import pytest

from stamc.model import instantiate, validate_model
from stamc.parser import parse_model

GOOD = """
int n = 0;
clock g;
broadcast chan go;

template Worker(speed: real) {
  clock c;
  init loc idle { rate c = speed; }
  loc busy { inv c <= 10; }
  idle -> busy { guard c >= 1; sync go?; update n := n + 1; }
  busy -> idle { guard c >= 2; update c := 0; }
}

template Boss() {
  init loc run;
  run -> run { guard g >= 1; sync go!; }
}

system a = Worker(1), b = Worker(2), Boss;
"""


def codes(model_text):
    rep = validate_model(parse_model(model_text))
    return {i.code for i in rep.errors}


def test_good_model_validates():
    rep = validate_model(parse_model(GOOD))
    assert rep.ok
    assert rep.errors == []


def test_nonpositive_weight():
    assert "nonpositive weight" in codes("""
template T() { init loc a; a -> a { weight 0; } }
system T;
""")


def test_unknown_channel():
    assert "unknown channel" in codes("""
template T() { init loc a; a -> a { sync nochan!; } }
system T;
""")


def test_nonlinear_clock_guard():
    assert "nonlinear guard" in codes("""
clock c;
clock d;
template T() { init loc a; a -> a { guard c * d >= 1; } }
system T;
""")


def test_nonlinear_invariant():
    assert "nonlinear invariant" in codes("""
clock c;
template T() { init loc a { inv c * c <= 4; } }
system T;
""")


def test_unknown_name_in_guard():
    assert "unknown name" in codes("""
template T() { init loc a; a -> a { guard ghost >= 1; } }
system T;
""")


def test_unknown_update_target():
    assert "unknown name" in codes("""
template T() { init loc a; a -> a { update ghost := 1; } }
system T;
""")


def test_missing_initial():
    assert "no initial" in codes("""
template T() { loc a; }
system T;
""")


def test_unknown_edge_endpoints():
    assert "unknown location" in codes("""
template T() { init loc a; a -> nowhere { } }
system T;
""")


def test_arity_mismatch():
    assert "arity mismatch" in codes("""
template T(x: real) { init loc a; }
system T();
""")


def test_duplicate_instance():
    assert "duplicate instance" in codes("""
template T() { init loc a; }
system x = T(), x = T();
""")


def test_unknown_template_in_system():
    assert "unknown template" in codes("system Ghost;" if False else """
template T() { init loc a; }
system T, Ghost;
""")


def test_nonpositive_exitrate():
    assert "nonpositive exitrate" in codes("""
template T() { init loc a { exitrate 0; } }
system T;
""")


def test_instantiate_binds_parameters():
    net = instantiate(parse_model(GOOD))
    assert [c.name for c in net.components] == ["a", "b", "Boss"]
    a, b = net.components[0], net.components[1]
    assert dict(a.bindings)["speed"] == 1
    assert dict(b.bindings)["speed"] == 2
    assert a.template.name == "Worker"
